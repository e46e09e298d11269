"""Hierarchical k-means tree for radius-limited likelihood sums.

The tree is stored as flat arrays so that the traversal runs inside numba.
Points are kept in the unit-weight local coordinates of their material.

Backtracking follows the usual priority-queue scheme: a greedy descent to
the closest leaf, then branches are popped in order of their distance lower
bound.  ``n_checks`` caps the number of leaves visited after the greedy
descent; ``n_checks < 0`` means unlimited, in which case the radius search
is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

UNLIMITED = -1
DEFAULT_TOL = 1e-16


@dataclass(frozen=True)
class TreeParams:
    branching: int = 16
    leaf_size: int = 32
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.branching < 2 or self.leaf_size < 1 or self.kmeans_iters < 1:
            raise ValueError("invalid tree parameters")


@dataclass(frozen=True, eq=False)
class KMeansTree:
    points: np.ndarray        # (M, D) reordered so every leaf is contiguous
    order: np.ndarray         # original index of each stored point
    logc: np.ndarray          # log confidences, stored order
    centroid: np.ndarray      # (K, D)
    radius: np.ndarray        # (K,) max distance centroid -> subtree point
    child_start: np.ndarray
    child_count: np.ndarray
    pt_start: np.ndarray
    pt_count: np.ndarray
    params: TreeParams
    _kd: list = field(default_factory=list, repr=False)   # lazily built exact NN index

    @property
    def kdtree(self) -> cKDTree:
        if not self._kd:
            self._kd.append(cKDTree(self.points))
        return self._kd[0]

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.centroid.shape[0]

    def arrays(self):
        return (self.centroid, self.radius, self.child_start, self.child_count,
                self.pt_start, self.pt_count, self.points, self.logc)

    def audit(self) -> None:
        """Raise ``AssertionError`` if a structural invariant is violated."""
        seen = np.zeros(self.M, dtype=int)
        stack = [0]
        while stack:
            k = stack.pop()
            idx = self._subtree_points(k)
            if idx.size:
                d = np.linalg.norm(self.points[idx] - self.centroid[k], axis=1)
                assert d.max() <= self.radius[k] * (1 + 1e-12) + 1e-300, f"node {k} radius"
            if self.child_count[k] == 0:
                seen[self.pt_start[k]:self.pt_start[k] + self.pt_count[k]] += 1
            else:
                s = self.child_start[k]
                stack.extend(range(s, s + self.child_count[k]))
        assert np.all(seen == 1), "every point must lie in exactly one leaf"
        assert np.array_equal(np.sort(self.order), np.arange(self.M))

    def _subtree_points(self, k: int) -> np.ndarray:
        out, stack = [], [k]
        while stack:
            j = stack.pop()
            if self.child_count[j] == 0:
                out.append(np.arange(self.pt_start[j], self.pt_start[j] + self.pt_count[j]))
            else:
                s = self.child_start[j]
                stack.extend(range(s, s + self.child_count[j]))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)


def _kmeans(X: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd iterations from a k-means++ seeding; returns labels."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = centers[0]
            break
        centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for it in range(iters):
        dist = (np.sum(X * X, axis=1)[:, None] - 2.0 * X @ centers.T
                + np.sum(centers * centers, axis=1)[None, :])
        new = np.argmin(dist, axis=1)
        if it > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
    return labels


def build(points: np.ndarray, params: TreeParams | None = None, rng=None,
          confidences: np.ndarray | None = None) -> KMeansTree:
    """Build a tree over ``points`` (already in weighted local coordinates)."""
    params = params or TreeParams()
    rng = np.random.default_rng(rng)
    X = np.ascontiguousarray(points, dtype=float)
    M = X.shape[0]
    if M < 1:
        raise ValueError("cannot index an empty data set")
    conf = np.ones(M) if confidences is None else np.asarray(confidences, dtype=float)

    centroid, radius = [None], [0.0]
    child_start, child_count = [0], [0]
    pt_start, pt_count = [0], [0]
    order = []
    stack = [(0, np.arange(M))]
    while stack:
        node, idx = stack.pop()
        c = X[idx].mean(axis=0)
        centroid[node] = c
        radius[node] = float(np.sqrt(np.max(np.sum((X[idx] - c) ** 2, axis=1))))
        groups = []
        if idx.size > params.leaf_size:
            k = min(params.branching, idx.size)
            labels = _kmeans(X[idx], k, params.kmeans_iters, rng)
            groups = [idx[labels == j] for j in range(k)]
            groups = [g for g in groups if g.size]
        if len(groups) < 2:
            pt_start[node] = len(order)
            pt_count[node] = idx.size
            order.extend(idx.tolist())
            continue
        first = len(centroid)
        child_start[node] = first
        child_count[node] = len(groups)
        for _ in groups:
            centroid.append(None)
            radius.append(0.0)
            child_start.append(0)
            child_count.append(0)
            pt_start.append(0)
            pt_count.append(0)
        for j in reversed(range(len(groups))):
            stack.append((first + j, groups[j]))

    order = np.asarray(order, dtype=np.int64)
    with np.errstate(divide="ignore"):
        logc = np.log(conf[order])
    return KMeansTree(
        points=np.ascontiguousarray(X[order]),
        order=order,
        logc=logc,
        centroid=np.ascontiguousarray(np.array(centroid)),
        radius=np.array(radius),
        child_start=np.array(child_start, dtype=np.int64),
        child_count=np.array(child_count, dtype=np.int64),
        pt_start=np.array(pt_start, dtype=np.int64),
        pt_count=np.array(pt_count, dtype=np.int64),
        params=params,
    )


# -- numba kernels --------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _dist(a, b):
    acc = 0.0
    for j in range(a.shape[0]):
        t = a[j] - b[j]
        acc += t * t
    return math.sqrt(acc)


@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if keys[p] <= keys[i]:
            break
        keys[p], keys[i] = keys[i], keys[p]
        vals[p], vals[i] = vals[i], vals[p]
        i = p
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key, val = keys[0], vals[0]
    size -= 1
    keys[0], vals[0] = keys[size], vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        if l + 1 < size and keys[l + 1] < keys[l]:
            c = l + 1
        if keys[i] <= keys[c]:
            break
        keys[c], keys[i] = keys[i], keys[c]
        vals[c], vals[i] = vals[i], vals[c]
        i = c
    return key, val, size


@numba.njit(cache=True)
def _query(q, r2, beta, max_checks, centroid, radius, child_start, child_count,
           pt_start, pt_count, pts, logc, hkeys, hvals, collect, out_idx, out_d2):
    """Radius query; returns (count, shift, scaled_sum) for log-sum-exp."""
    r = math.sqrt(r2)
    count = 0
    mx = -np.inf
    s = 0.0
    if _dist(q, centroid[0]) - radius[0] > r:
        return count, mx, s
    hsize = 0
    node = 0
    checks = 0
    while True:
        while node >= 0 and child_count[node] > 0:
            best = -1
            bestd = np.inf
            c0 = child_start[node]
            for c in range(c0, c0 + child_count[node]):
                dc = _dist(q, centroid[c])
                if dc - radius[c] > r:
                    continue
                if dc < bestd:
                    if best >= 0:
                        hsize = _heap_push(hkeys, hvals, hsize, max(bestd - radius[best], 0.0), best)
                    best = c
                    bestd = dc
                else:
                    hsize = _heap_push(hkeys, hvals, hsize, max(dc - radius[c], 0.0), c)
            node = best
        if node >= 0:
            p0 = pt_start[node]
            for i in range(p0, p0 + pt_count[node]):
                acc = 0.0
                for j in range(q.shape[0]):
                    t = pts[i, j] - q[j]
                    acc += t * t
                if acc <= r2:
                    if collect:
                        out_idx[count] = i
                        out_d2[count] = acc
                    count += 1
                    a = logc[i] - beta * acc
                    if a > mx:
                        s = s * math.exp(mx - a) + 1.0
                        mx = a
                    elif a > -np.inf:
                        s += math.exp(a - mx)
        if hsize == 0 or (max_checks >= 0 and checks >= max_checks):
            break
        key, node, hsize = _heap_pop(hkeys, hvals, hsize)
        checks += 1
    return count, mx, s


@numba.njit(cache=True, parallel=True)
def _tree_loglik_batch(Q, beta, r2, max_checks, logM, centroid, radius,
                       child_start, child_count, pt_start, pt_count, pts, logc):
    K = Q.shape[0]
    out = np.empty(K)
    nnodes = centroid.shape[0]
    chunk = 64
    nchunks = (K + chunk - 1) // chunk
    dummy_i = np.zeros(0, dtype=np.int64)
    dummy_d = np.zeros(0)
    for ch in numba.prange(nchunks):
        hkeys = np.empty(nnodes)
        hvals = np.empty(nnodes, dtype=np.int64)
        for k in range(ch * chunk, min(K, (ch + 1) * chunk)):
            cnt, mx, s = _query(Q[k], r2[k], beta[k], max_checks, centroid, radius,
                                child_start, child_count, pt_start, pt_count, pts, logc,
                                hkeys, hvals, False, dummy_i, dummy_d)
            out[k] = mx + math.log(s) - logM if s > 0.0 else np.nan
    return out


@numba.njit(cache=True, parallel=True)
def _direct_loglik_batch(Q, beta, floor, logM, pts, logc):
    K = Q.shape[0]
    out = np.empty(K)
    for k in numba.prange(K):
        q = Q[k]
        mx = -np.inf
        s = 0.0
        for i in range(pts.shape[0]):
            acc = 0.0
            for j in range(q.shape[0]):
                t = pts[i, j] - q[j]
                acc += t * t
            a = logc[i] - beta[k] * acc
            if a > mx:
                s = s * math.exp(mx - a) + 1.0
                mx = a
            elif a > -np.inf:
                s += math.exp(a - mx)
        out[k] = mx + math.log(s) - logM if s > 0.0 else floor[k]
    return out


# -- public API -----------------------------------------------------------

def radius_search(tree: KMeansTree, q: np.ndarray, r: float, n_checks: int = UNLIMITED):
    """Indices (into the original data) and squared distances within radius ``r``."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    q = np.ascontiguousarray(q, dtype=float)
    hkeys = np.empty(tree.n_nodes)
    hvals = np.empty(tree.n_nodes, dtype=np.int64)
    out_idx = np.empty(tree.M, dtype=np.int64)
    out_d2 = np.empty(tree.M)
    cnt, _, _ = _query(q, float(r) ** 2, 0.0, int(n_checks), *tree.arrays(),
                       hkeys, hvals, True, out_idx, out_d2)
    return tree.order[out_idx[:cnt]], out_d2[:cnt]


def radius_for(beta_eff, tol: float = DEFAULT_TOL):
    """Squared radius beyond which a kernel term ``exp(-beta d^2)`` falls below ``tol``."""
    if not 0 < tol < 1:
        raise ValueError("TOL must lie in (0, 1)")
    return -np.log(tol) / np.asarray(beta_eff, dtype=float)


def floor_value(M: int, tol: float = DEFAULT_TOL) -> float:
    """Constant log-likelihood for an empty radius set: ``log(TOL / M)``."""
    return math.log(tol) - math.log(M)


EMPTY_MODES = ("nearest", "floor")


def log_likelihood(source, q, beta, tol: float = DEFAULT_TOL, n_checks: int = UNLIMITED,
                   confidences=None, empty: str = "nearest"):
    """``log((1/M) sum_i c_i exp(-beta |y_i - q|^2))`` for one or many queries.

    ``source`` is a :class:`KMeansTree` (radius-limited sum) or an ``(M, D)``
    array of weighted points (direct sum over all points).  ``beta`` may be a
    scalar or one value per query.

    When the radius search of a tree finds nothing, ``empty="nearest"``
    keeps the single term of the nearest data point, which lies below
    ``log(TOL / M)`` and keeps decreasing away from the data;
    ``empty="floor"`` returns the constant ``log(TOL / M)``.
    """
    if empty not in EMPTY_MODES:
        raise ValueError(f"empty must be one of {EMPTY_MODES}")
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    single = np.ndim(q) == 1
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (Q.shape[0],)).copy()
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    if isinstance(source, KMeansTree):
        M = source.M
        out = _tree_loglik_batch(np.ascontiguousarray(Q), beta, radius_for(beta, tol),
                                 int(n_checks), math.log(M), *source.arrays())
        miss = np.isnan(out)
        if miss.any():
            out[miss] = floor_value(M, tol)
            if empty == "nearest":
                d, i = source.kdtree.query(Q[miss])
                near = source.logc[i] - beta[miss] * d * d - math.log(M)
                out[miss] = np.where(np.isfinite(near), near, out[miss])
    else:
        pts = np.ascontiguousarray(source, dtype=float)
        M = pts.shape[0]
        conf = np.ones(M) if confidences is None else np.asarray(confidences, dtype=float)
        with np.errstate(divide="ignore"):
            logc = np.log(conf)
        floor = np.full(Q.shape[0], floor_value(M, tol))
        out = _direct_loglik_batch(np.ascontiguousarray(Q), beta, floor, math.log(M), pts, logc)
    return float(out[0]) if single else out
