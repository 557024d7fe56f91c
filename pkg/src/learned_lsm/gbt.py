"""Gradient-boosted regression trees for binary classification (logistic loss).

Each round fits a depth-limited regression tree to the pseudo-residuals
``y - sigmoid(F)`` with greedy variance-reduction splits, then sets each leaf to
one Newton step ``sum(r) / sum(p (1 - p))`` clamped to ``[-4, 4]``.  The
ensemble scores ``sigmoid(initial_score + learning_rate * sum_t tree_t(x))``.

Split candidates per feature are midpoints between consecutive distinct
values, reduced to at most 256 quantile positions.  A sample goes left when
``x <= threshold``.  Training is single-threaded and deterministic.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .codec import seal, unseal
from .errors import CorruptFileError, SchemaMismatchError, SingleClassError
from .features import SCHEMA_WIDTH

MAGIC = b"LLSMGBT1"
FORMAT_VERSION = 1
LEAF_FEATURE = 0xFFFF
LEAF_CLAMP = 4.0
EPS = 1e-12
MAX_CANDIDATES = 256

_HEADER = struct.Struct("<8sI8sIIIIdddI")
_NODE = np.dtype([("feature", "<u2"), ("threshold", "<f8"), ("left", "<u4"),
                  ("right", "<u4"), ("leaf", "u1"), ("value", "<f8")])


@dataclass(frozen=True)
class GBTParams:
    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    threshold: float = 0.5


CLASSIFIER_PARAMS = GBTParams(200, 6, 0.1)
LEAN_PARAMS = GBTParams(50, 4, 0.1)


def sigmoid(z):
    """Numerically stable logistic function (scalar or array)."""
    if np.ndim(z) == 0:
        z = float(z)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_loss(y, y_hat):
    """``-[y log p + (1-y) log(1-p)]`` with ``p`` clamped to ``[1e-12, 1 - 1e-12]``."""
    p = np.clip(y_hat, EPS, 1.0 - EPS)
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(loss) if np.ndim(loss) == 0 else loss


@numba.njit(inline="always")
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(inline="always")
def margin_row(x, nodes, roots, init, lr):
    s = 0.0
    for t in range(roots.shape[0]):
        i = roots[t]
        while nodes[i, 0] >= 0.0:
            if x[np.int64(nodes[i, 0])] <= nodes[i, 1]:
                i = np.int64(nodes[i, 2])
            else:
                i = np.int64(nodes[i, 3])
        s += nodes[i, 1]
    return init + lr * s


@numba.njit(inline="always")
def accepts_row(x, nodes, roots, init, lr, tau):
    return _sigmoid(margin_row(x, nodes, roots, init, lr)) >= tau


@numba.njit(inline="always")
def _step(x, pf, fi, base, n_inner, i):
    return 2 * i + 1 + np.int64(not (x[fi[base + i]] <= pf[base + n_inner + i]))


@numba.njit(inline="always")
def margin_flat(x, plan, depth, init, lr):
    """``margin_row`` over the complete-tree layout built by ``flatten_trees``.

    Four trees are walked in lockstep so their dependent loads overlap.
    """
    n_inner = (1 << depth) - 1
    width = plan.shape[1]
    pf = plan.ravel()
    fi = pf.view(np.int64)
    n = plan.shape[0]
    s = 0.0
    t = 0
    while t + 4 <= n:
        b0 = t * width
        b1 = b0 + width
        b2 = b1 + width
        b3 = b2 + width
        i0 = i1 = i2 = i3 = 0
        for _ in range(depth):
            i0 = _step(x, pf, fi, b0, n_inner, i0)
            i1 = _step(x, pf, fi, b1, n_inner, i1)
            i2 = _step(x, pf, fi, b2, n_inner, i2)
            i3 = _step(x, pf, fi, b3, n_inner, i3)
        s += pf[b0 + n_inner + i0]
        s += pf[b1 + n_inner + i1]
        s += pf[b2 + n_inner + i2]
        s += pf[b3 + n_inner + i3]
        t += 4
    while t < n:
        b0 = t * width
        i0 = 0
        for _ in range(depth):
            i0 = _step(x, pf, fi, b0, n_inner, i0)
        s += pf[b0 + n_inner + i0]
        t += 1
    return init + lr * s


@numba.njit(inline="always")
def accepts_flat(x, plan, depth, init, lr, tau):
    return _sigmoid(margin_flat(x, plan, depth, init, lr)) >= tau


@numba.njit(cache=True)
def _margin_batch(X, plan, depth, init, lr, out):
    for j in range(X.shape[0]):
        out[j] = margin_flat(X[j], plan, depth, init, lr)


@numba.njit(cache=True)
def _accepts_batch(X, plan, depth, init, lr, tau, out):
    for j in range(X.shape[0]):
        out[j] = accepts_flat(X[j], plan, depth, init, lr, tau)


@numba.njit(cache=True)
def accepts_one(x, plan, depth, init, lr, tau):
    return accepts_flat(x, plan, depth, init, lr, tau)


@numba.njit(cache=True)
def margin_reference(X, nodes, roots, init, lr, out):
    """Pointer-chasing evaluation over the packed node table (test oracle)."""
    for j in range(X.shape[0]):
        out[j] = margin_row(X[j], nodes, roots, init, lr)


def flatten_trees(trees: Sequence["RegressionTree"]) -> tuple[np.ndarray, int]:
    """Lay every tree out as a complete binary tree of the ensemble's max depth.

    Row ``t`` holds ``2**d - 1`` feature indices (stored as int64 bit patterns),
    then as many thresholds, then ``2**d`` leaf values.  A leaf above depth ``d`` copies its value into every
    bottom slot beneath it, so the padded internal slots never matter.
    Evaluation is a fixed ``d`` branch-free steps per tree, and sums leaf values
    in the same order as the pointer walk, so margins are bit-identical.
    """
    depth = max((t.depth() for t in trees), default=0)
    n_inner = (1 << depth) - 1
    plan = np.zeros((len(trees), 2 * n_inner + (1 << depth)), dtype=np.float64)
    index = plan.view(np.int64)
    for t, tree in enumerate(trees):
        row = plan[t]
        stack = [(0, 0, 0)]  # (tree node, complete index, level)
        while stack:
            node, ci, level = stack.pop()
            if tree.feature[node] < 0:
                lo = ci
                for _ in range(depth - level):
                    lo = 2 * lo + 1
                span = 1 << (depth - level)
                start = n_inner + lo
                row[start:start + span] = tree.value[node]
                continue
            index[t, ci] = tree.feature[node]
            row[n_inner + ci] = tree.threshold[node]
            stack.append((int(tree.left[node]), 2 * ci + 1, level + 1))
            stack.append((int(tree.right[node]), 2 * ci + 2, level + 1))
    return plan, depth


@numba.njit(cache=True)
def _grow_tree(codes, nbins, r, h, max_depth, min_leaf, delta):
    """Fit one tree to residuals ``r``; ``codes`` is (features, samples) bin indices.

    Returns (feature, split_bin, left, right, value) node arrays; leaves have
    feature -1.  Writes each sample's leaf value into ``delta``.
    """
    n_features, n = codes.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, np.int64)
    sbin = np.zeros(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes, np.float64)
    idx = np.arange(n)
    tmp = np.empty(n, np.int64)
    max_bins = 1
    for f in range(n_features):
        if nbins[f] > max_bins:
            max_bins = nbins[f]
    hist_r = np.zeros(max_bins, np.float64)
    hist_c = np.zeros(max_bins, np.int64)

    st_node = np.empty(max_nodes, np.int64)
    st_start = np.empty(max_nodes, np.int64)
    st_end = np.empty(max_nodes, np.int64)
    st_depth = np.empty(max_nodes, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        cnt = end - start
        s_r = 0.0
        s_h = 0.0
        for q in range(start, end):
            s_r += r[idx[q]]
            s_h += h[idx[q]]

        best_gain = 1e-12
        best_f = -1
        best_j = -1
        if depth < max_depth and cnt >= 2 * min_leaf:
            parent = s_r * s_r / cnt
            for f in range(n_features):
                nb = nbins[f]
                if nb <= 1:
                    continue
                for b in range(nb):
                    hist_r[b] = 0.0
                    hist_c[b] = 0
                for q in range(start, end):
                    s = idx[q]
                    b = codes[f, s]
                    hist_r[b] += r[s]
                    hist_c[b] += 1
                sl = 0.0
                nl = 0
                for j in range(nb - 1):
                    sl += hist_r[j]
                    nl += hist_c[j]
                    nr = cnt - nl
                    if nl < min_leaf:
                        continue
                    if nr < min_leaf:
                        break
                    sr = s_r - sl
                    gain = sl * sl / nl + sr * sr / nr - parent
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_j = j

        if best_f < 0:
            v = s_r / max(s_h, 1e-12)
            if v > 4.0:
                v = 4.0
            elif v < -4.0:
                v = -4.0
            value[node] = v
            for q in range(start, end):
                delta[idx[q]] = v
            continue

        # stable partition: left block keeps original relative order
        nl = 0
        for q in range(start, end):
            s = idx[q]
            if codes[best_f, s] <= best_j:
                tmp[nl] = s
                nl += 1
        k = nl
        for q in range(start, end):
            s = idx[q]
            if codes[best_f, s] > best_j:
                tmp[k] = s
                k += 1
        for q in range(cnt):
            idx[start + q] = tmp[q]

        feat[node] = best_f
        sbin[node] = best_j
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        # push right first so the left subtree is expanded first
        st_node[sp] = rchild
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lchild
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1
    return feat[:n_nodes], sbin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def candidate_thresholds(column: np.ndarray, max_candidates: int = MAX_CANDIDATES) -> np.ndarray:
    """Midpoints between consecutive distinct values, thinned to data quantiles."""
    u = np.unique(column)
    if u.size <= 1:
        return np.empty(0, dtype=np.float64)
    lo, hi = u[:-1], u[1:]
    mids = lo / 2.0 + hi / 2.0
    # a midpoint that rounds up onto the larger value would send it left
    mids = np.where((mids >= hi) | (mids < lo), lo, mids)
    if mids.size <= max_candidates:
        return mids
    srt = np.sort(column)
    pos = (np.arange(1, max_candidates + 1) * srt.size) // (max_candidates + 1)
    at = np.searchsorted(u, srt[pos])
    at = np.unique(np.minimum(at, mids.size - 1))
    return mids[at]


@dataclass
class RegressionTree:
    """One tree; node ``i`` is a leaf when ``feature[i] == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __len__(self) -> int:
        return int(self.feature.shape[0])

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(int(self.left[node])), self.depth(int(self.right[node])))

    def predict_row(self, x: Sequence[float]) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = int(self.left[i]) if x[int(self.feature[i])] <= self.threshold[i] else int(self.right[i])
        return float(self.value[i])


@dataclass
class GBTModel:
    trees: list[RegressionTree]
    initial_score: float
    schema_id: str
    n_features: int
    params: GBTParams = field(default_factory=GBTParams)
    train_loss: list[float] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._pack()

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate

    @property
    def threshold(self) -> float:
        return self.params.threshold

    @classmethod
    def constant(cls, probability: float, schema_id: str, params: GBTParams | None = None) -> "GBTModel":
        """A zero-tree model that scores ``probability`` everywhere."""
        p = min(max(probability, EPS), 1.0 - EPS)
        return cls([], math.log(p / (1.0 - p)), schema_id, SCHEMA_WIDTH[schema_id],
                   params or GBTParams(n_trees=0))

    def _pack(self) -> None:
        total = sum(len(t) for t in self.trees)
        nodes = np.zeros((total, 4), dtype=np.float64)
        roots = np.zeros(len(self.trees), dtype=np.int64)
        off = 0
        for t, tree in enumerate(self.trees):
            n = len(tree)
            roots[t] = off
            leaf = tree.feature < 0
            nodes[off:off + n, 0] = np.where(leaf, -1.0, tree.feature)
            nodes[off:off + n, 1] = np.where(leaf, tree.value, tree.threshold)
            nodes[off:off + n, 2] = np.where(leaf, -1.0, tree.left + off)
            nodes[off:off + n, 3] = np.where(leaf, -1.0, tree.right + off)
            off += n
        self.nodes = nodes
        self.roots = roots
        self.plan, self.depth = flatten_trees(self.trees)

    def _check(self, X: np.ndarray, schema_id: str | None) -> np.ndarray:
        if schema_id is not None and schema_id != self.schema_id:
            raise SchemaMismatchError(f"model expects {self.schema_id}, got {schema_id}")
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise SchemaMismatchError(
                f"model expects {self.n_features} features ({self.schema_id}), got {X.shape[-1]}")
        return X

    def predict_margin(self, X, schema_id: str | None = None) -> np.ndarray:
        X = self._check(X, schema_id)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        out = np.empty(X2.shape[0], dtype=np.float64)
        _margin_batch(X2, self.plan, self.depth, self.initial_score, self.learning_rate, out)
        return out[0] if single else out

    def predict_proba(self, X, schema_id: str | None = None):
        return sigmoid(self.predict_margin(X, schema_id))

    def decide(self, X, schema_id: str | None = None):
        """``predict_proba >= threshold`` as 0/1 (array for 2-D input)."""
        X = self._check(X, schema_id)
        if X.ndim == 1:
            return int(accepts_one(X, self.plan, self.depth, self.initial_score,
                                   self.learning_rate, self.threshold))
        out = np.zeros(X.shape[0], dtype=np.bool_)
        _accepts_batch(X, self.plan, self.depth, self.initial_score, self.learning_rate,
                       self.threshold, out)
        return out.astype(np.int8)

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        p = self.params
        parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, self.schema_id.encode().ljust(8, b"\0"),
                              self.n_features, p.n_trees, p.max_depth, p.min_samples_leaf,
                              p.learning_rate, p.threshold, self.initial_score, len(self.trees))]
        for tree in self.trees:
            rec = np.zeros(len(tree), dtype=_NODE)
            leaf = tree.feature < 0
            rec["feature"] = np.where(leaf, LEAF_FEATURE, tree.feature)
            rec["threshold"] = np.where(leaf, 0.0, tree.threshold)
            rec["left"] = np.where(leaf, 0, tree.left)
            rec["right"] = np.where(leaf, 0, tree.right)
            rec["leaf"] = leaf
            rec["value"] = np.where(leaf, tree.value, 0.0)
            parts.append(struct.pack("<I", len(tree)))
            parts.append(rec.tobytes())
        return seal(b"".join(parts))

    @classmethod
    def from_bytes(cls, data: bytes) -> "GBTModel":
        body = unseal(data, MAGIC)
        if len(body) < _HEADER.size:
            raise CorruptFileError("truncated model header")
        (_, version, schema, n_features, n_trees, max_depth, min_leaf, lr, tau, init,
         count) = _HEADER.unpack_from(body)
        if version != FORMAT_VERSION:
            raise CorruptFileError(f"unsupported model version {version}")
        off = _HEADER.size
        trees = []
        for _ in range(count):
            if off + 4 > len(body):
                raise CorruptFileError("truncated tree")
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            end = off + n * _NODE.itemsize
            if end > len(body):
                raise CorruptFileError("truncated tree nodes")
            rec = np.frombuffer(body[off:end], dtype=_NODE)
            off = end
            leaf = rec["leaf"].astype(bool)
            trees.append(RegressionTree(
                feature=np.where(leaf, -1, rec["feature"].astype(np.int64)),
                threshold=rec["threshold"].astype(np.float64),
                left=np.where(leaf, -1, rec["left"].astype(np.int64)),
                right=np.where(leaf, -1, rec["right"].astype(np.int64)),
                value=rec["value"].astype(np.float64)))
        if off != len(body):
            raise CorruptFileError("trailing bytes after last tree")
        params = GBTParams(n_trees, max_depth, lr, min_leaf, tau)
        return cls(trees, init, schema.rstrip(b"\0").decode(), n_features, params)

    def serialized_size(self) -> int:
        return _HEADER.size + sum(4 + len(t) * _NODE.itemsize for t in self.trees) + 4


def train(X, y, params: GBTParams = CLASSIFIER_PARAMS, schema_id: str | None = None) -> GBTModel:
    """Fit a boosted ensemble on feature rows ``X`` and 0/1 labels ``y``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise ValueError("need at least two rows and one label per row")
    if schema_id is not None and SCHEMA_WIDTH.get(schema_id) != X.shape[1]:
        raise SchemaMismatchError(f"{X.shape[1]} columns do not match schema {schema_id}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    pos = float(y.sum())
    if pos == 0 or pos == y.shape[0] or not np.all((y == 0) | (y == 1)):
        raise SingleClassError("labels must contain both 0 and 1; use GBTModel.constant")

    base = pos / y.shape[0]
    init = math.log(base / (1.0 - base))
    thresholds = [candidate_thresholds(X[:, f]) for f in range(X.shape[1])]
    codes = np.empty((X.shape[1], X.shape[0]), dtype=np.uint16)
    for f, thr in enumerate(thresholds):
        codes[f] = np.searchsorted(thr, X[:, f], side="left")
    nbins = np.array([t.size + 1 for t in thresholds], dtype=np.int64)

    F = np.full(X.shape[0], init)
    prob = sigmoid(F)
    losses = [float(np.mean(logistic_loss(y, prob)))]
    trees: list[RegressionTree] = []
    delta = np.empty(X.shape[0], dtype=np.float64)
    for _ in range(params.n_trees):
        r = y - prob
        h = prob * (1.0 - prob)
        feat, sbin, left, right, value = _grow_tree(codes, nbins, r, h, params.max_depth,
                                                    params.min_samples_leaf, delta)
        thr = np.array([thresholds[f][b] if f >= 0 else 0.0 for f, b in zip(feat, sbin)],
                       dtype=np.float64)
        trees.append(RegressionTree(feat.copy(), thr, left.copy(), right.copy(), value.copy()))
        F += params.learning_rate * delta
        prob = sigmoid(F)
        losses.append(float(np.mean(logistic_loss(y, prob))))
    model = GBTModel(trees, init, schema_id or f"RAW{X.shape[1]}", X.shape[1], params)
    model.train_loss = losses
    return model


def false_negatives(model: GBTModel, X, y) -> np.ndarray:
    """Indices of positives the model rejects."""
    y = np.asarray(y)
    if len(y) == 0:
        return np.zeros(0, dtype=np.int64)
    decided = model.decide(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return np.flatnonzero((y == 1) & (decided == 0))
