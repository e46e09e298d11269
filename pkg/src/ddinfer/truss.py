"""Truss models and the affine constraint set of admissible states.

Compatibility ``eps = B u + g`` and equilibrium ``B^T W sig = f`` with
``W = diag(A_e L_e)``.  The Airy matrix ``A`` spans ``Ker(B^T W)`` so that
self-equilibrated stresses are ``sig = A v``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .phase_space import Metric, from_weighted, join, split, to_weighted

RANK_RTOL = 1e-10


class GeometryError(ValueError):
    pass


class MechanismError(ValueError):
    """The structure has unconstrained rigid-body or internal mechanisms."""


@dataclass(frozen=True)
class Node:
    id: int
    x: tuple[float, ...]
    fixed: tuple[bool, ...]
    load: tuple[float, ...]
    disp: tuple[float, ...]


@dataclass(frozen=True)
class Bar:
    id: int
    a: int
    b: int
    area: float
    material: str = "default"


@dataclass(frozen=True, eq=False)
class TrussModel:
    dim: int
    nodes: tuple[Node, ...]
    bars: tuple[Bar, ...]

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GeometryError("duplicate node id")
        bids = [b.id for b in self.bars]
        if len(set(bids)) != len(bids):
            raise GeometryError("duplicate bar id")
        known = set(ids)
        for n in self.nodes:
            if not (len(n.x) == len(n.fixed) == len(n.load) == len(n.disp) == self.dim):
                raise GeometryError(f"node {n.id}: expected {self.dim} components")
        for b in self.bars:
            if b.a not in known or b.b not in known:
                raise GeometryError(f"bar {b.id} references an unknown node")
            if b.a == b.b:
                raise GeometryError(f"bar {b.id} connects node {b.a} to itself")
            if not b.area > 0:
                raise GeometryError(f"bar {b.id}: area must be positive")
        if np.any(self.lengths <= 0):
            raise GeometryError("zero-length bar")

    @property
    def m(self) -> int:
        return len(self.bars)

    def node_index(self, node_id: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    @property
    def coords(self) -> np.ndarray:
        return np.array([n.x for n in self.nodes], dtype=float)

    @property
    def connectivity(self) -> np.ndarray:
        idx = {n.id: i for i, n in enumerate(self.nodes)}
        return np.array([(idx[b.a], idx[b.b]) for b in self.bars], dtype=int)

    @property
    def areas(self) -> np.ndarray:
        return np.array([b.area for b in self.bars], dtype=float)

    @property
    def materials(self) -> list[str]:
        return [b.material for b in self.bars]

    @property
    def lengths(self) -> np.ndarray:
        X = self.coords
        c = self.connectivity
        return np.linalg.norm(X[c[:, 1]] - X[c[:, 0]], axis=1)

    @property
    def directions(self) -> np.ndarray:
        X = self.coords
        c = self.connectivity
        dx = X[c[:, 1]] - X[c[:, 0]]
        return dx / np.linalg.norm(dx, axis=1)[:, None]

    @property
    def weights(self) -> np.ndarray:
        return self.areas * self.lengths

    def scaled(self, load_factor: float = 1.0, disp_factor: float = 1.0) -> "TrussModel":
        """Copy with nodal loads and prescribed displacements rescaled."""
        nodes = tuple(
            replace(
                n,
                load=tuple(load_factor * v for v in n.load),
                disp=tuple(disp_factor * v for v in n.disp),
            )
            for n in self.nodes
        )
        return TrussModel(self.dim, nodes, self.bars)

    def without_bars(self, bar_ids) -> "TrussModel":
        drop = set(bar_ids)
        return TrussModel(self.dim, self.nodes, tuple(b for b in self.bars if b.id not in drop))

    def metric(self, moduli) -> Metric:
        """Metric with ``w_e = A_e L_e`` and per-bar moduli.

        ``moduli`` is a scalar, a sequence with one entry per bar, or a
        mapping from material id to modulus.
        """
        if isinstance(moduli, dict):
            C = [moduli[mat] for mat in self.materials]
        else:
            C = np.broadcast_to(np.asarray(moduli, dtype=float), (self.m,))
        return Metric(self.weights, np.asarray(C, dtype=float))


# -- geometry files -------------------------------------------------------

def _vec(value, dim, default, name, owner):
    if value is None:
        return tuple([default] * dim)
    value = list(value)
    if len(value) != dim:
        raise GeometryError(f"{owner}: '{name}' needs {dim} components")
    return tuple(value)


def truss_from_dict(data: dict) -> TrussModel:
    try:
        dim = int(data["dim"])
        raw_nodes = data["nodes"]
        raw_bars = data["bars"]
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"geometry is missing a required section: {exc}") from None
    nodes = []
    for rec in raw_nodes:
        owner = f"node {rec.get('id')}"
        fixed = _vec(rec.get("fixed"), dim, False, "fixed", owner)
        nodes.append(Node(
            id=int(rec["id"]),
            x=tuple(float(v) for v in _vec(rec.get("x"), dim, None, "x", owner)),
            fixed=tuple(bool(v) for v in fixed),
            load=tuple(float(v) for v in _vec(rec.get("load"), dim, 0.0, "load", owner)),
            disp=tuple([0.0] * dim),
        ))
    nodes_by_id = {n.id: i for i, n in enumerate(nodes)}
    if len(nodes_by_id) != len(nodes):
        raise GeometryError("duplicate node id")
    for rec in data.get("prescribed") or []:
        nid, dof, val = int(rec["node"]), int(rec["dof"]), float(rec["value"])
        if nid not in nodes_by_id:
            raise GeometryError(f"prescribed displacement on unknown node {nid}")
        if not 0 <= dof < dim:
            raise GeometryError(f"prescribed displacement: dof {dof} out of range")
        i = nodes_by_id[nid]
        n = nodes[i]
        fixed = list(n.fixed)
        disp = list(n.disp)
        fixed[dof] = True
        disp[dof] = val
        nodes[i] = replace(n, fixed=tuple(fixed), disp=tuple(disp))
    bars = [
        Bar(int(r["id"]), int(r["a"]), int(r["b"]), float(r.get("area", 1.0)),
            str(r.get("material", "default")))
        for r in raw_bars
    ]
    return TrussModel(dim, tuple(nodes), tuple(bars))


def truss_to_dict(truss: TrussModel) -> dict:
    nodes, prescribed = [], []
    for n in truss.nodes:
        nodes.append({"id": int(n.id), "x": np.asarray(n.x, float).tolist(),
                      "fixed": np.asarray(n.fixed, bool).tolist(), "load": np.asarray(n.load, float).tolist()})
        for k, v in enumerate(n.disp):
            if v != 0.0:
                prescribed.append({"node": int(n.id), "dof": k, "value": float(v)})
    bars = [{"id": int(b.id), "a": int(b.a), "b": int(b.b), "area": float(b.area), "material": b.material}
            for b in truss.bars]
    return {"dim": truss.dim, "nodes": nodes, "bars": bars, "prescribed": prescribed}


def load_truss(path) -> TrussModel:
    with open(path) as fh:
        return truss_from_dict(yaml.safe_load(fh))


def save_truss(truss: TrussModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(truss_to_dict(truss), sort_keys=False, default_flow_style=None))


# -- constraint set -------------------------------------------------------

def _svd_rank(M: np.ndarray):
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size == 0 or s[0] == 0:
        return U, s, Vt, 0
    return U, s, Vt, int(np.sum(s > RANK_RTOL * s[0]))


def airy_basis(B: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``Ker(B^T W)``, shape ``(N, l)``."""
    N = B.shape[0]
    BtW = B.T * weights[None, :]
    if BtW.shape[0] == 0:
        return np.eye(N)
    _, _, Vt, r = _svd_rank(BtW)
    return Vt[r:].T.copy()


@dataclass(eq=False)
class ConstraintSet:
    """Affine set ``E = z0 + E0`` of admissible states (``d = 1`` bars)."""

    B: np.ndarray
    weights: np.ndarray
    f: np.ndarray
    g: np.ndarray
    sigma0: np.ndarray
    airy: np.ndarray
    free_dofs: list[tuple[int, int]]
    truss: TrussModel | None = None

    def __post_init__(self):
        self._cache: dict = {}
        U, s, _, r = _svd_rank(self.B) if self.B.size else (None, None, None, 0)
        self._range_B = U[:, :r] if r else np.zeros((self.N, 0))

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.airy.shape[1]

    @property
    def eps0(self) -> np.ndarray:
        return self.g

    @property
    def z0(self) -> np.ndarray:
        return join(self.g, self.sigma0)

    def dof(self, node_id: int, component: int) -> int:
        """Index of a free dof in ``u``, or -1 if the dof is constrained."""
        try:
            return self.free_dofs.index((node_id, component))
        except ValueError:
            return -1

    # weighted-coordinate pseudo-inverses for closest-point projection
    def _weighted_solvers(self, metric: Metric):
        key = ("solvers", metric)
        if key not in self._cache:
            Se, Ss = metric.scale_factors()
            se, ss = Se[:, 0, 0], Ss[:, 0, 0]
            SB = se[:, None] * self.B
            SA = ss[:, None] * self.airy
            self._cache[key] = (se, ss, np.linalg.pinv(SB), np.linalg.pinv(SA))
        return self._cache[key]

    def basis(self, metric: Metric) -> np.ndarray:
        """Orthonormal weighted basis of ``E0`` (exact construction, cached)."""
        key = ("basis", metric)
        if key not in self._cache:
            self._cache[key] = exact_basis(self, metric)
        return self._cache[key]

    def set_basis(self, metric: Metric, A_E: np.ndarray) -> None:
        self._cache[("basis", metric)] = np.asarray(A_E, dtype=float)


def assemble(truss: TrussModel) -> ConstraintSet:
    """Assemble ``B``, ``W``, ``f``, ``g`` and a particular stress ``sigma0``."""
    dim, m = truss.dim, truss.m
    free = [(n.id, k) for n in truss.nodes for k in range(dim) if not n.fixed[k]]
    col = {key: j for j, key in enumerate(free)}
    conn = truss.connectivity
    L = truss.lengths
    dvec = truss.directions
    B = np.zeros((m, len(free)))
    g = np.zeros(m)
    f = np.zeros(len(free))
    for e in range(m):
        for sign, ni in ((-1.0, conn[e, 0]), (1.0, conn[e, 1])):
            node = truss.nodes[ni]
            for k in range(dim):
                coef = sign * dvec[e, k] / L[e]
                if node.fixed[k]:
                    g[e] += coef * node.disp[k]
                else:
                    B[e, col[(node.id, k)]] += coef
    for n in truss.nodes:
        for k in range(dim):
            if not n.fixed[k]:
                f[col[(n.id, k)]] = n.load[k]
    if free:
        _, _, _, r = _svd_rank(B)
        if r < len(free):
            raise MechanismError(
                f"discrete gradient has rank {r} < {len(free)} free dofs"
            )
    w = truss.weights
    BtW = B.T * w[None, :]
    if free:
        sigma0, *_ = np.linalg.lstsq(BtW, f, rcond=None)
        if np.linalg.norm(BtW @ sigma0 - f) > 1e-9 * max(1.0, np.linalg.norm(f)):
            raise MechanismError("loads cannot be equilibrated")
    else:
        sigma0 = np.zeros(m)
    return ConstraintSet(B, w, f, g, sigma0, airy_basis(B, w), free, truss)


def _orth(M: np.ndarray) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _, r = _svd_rank(M)
    return U[:, :r]


def exact_basis(E: ConstraintSet, metric: Metric) -> np.ndarray:
    """Orthonormal weighted basis of ``E0`` built from ``B`` and the Airy matrix."""
    N = E.N
    strain_dirs = join(E.B.T, np.zeros((E.n, N))).T          # (2N, n)
    stress_dirs = join(np.zeros((E.l, N)), E.airy.T).T        # (2N, l)
    Qe = _orth(to_weighted(strain_dirs.T, metric).T)
    Qs = _orth(to_weighted(stress_dirs.T, metric).T)
    if Qe.shape[1] + Qs.shape[1] != N:
        raise MechanismError("constraint set basis is rank deficient")
    return np.hstack([Qe, Qs])


def project_direct(y: np.ndarray, E: ConstraintSet, metric: Metric) -> np.ndarray:
    """Closest point on ``E`` computed from the ``(u, v)`` parametrization.

    Does not use any orthonormal basis of ``E0``; used to build and check one.
    """
    se, ss, SBp, SAp = E._weighted_solvers(metric)
    eps, sig = split(y)
    eps, sig = eps[..., 0], sig[..., 0]
    u = (se * (eps - E.g)) @ SBp.T
    v = (ss * (sig - E.sigma0)) @ SAp.T
    return join(u @ E.B.T + E.g, v @ E.airy.T + E.sigma0)


def project(y: np.ndarray, E: ConstraintSet, metric: Metric, basis: np.ndarray | None = None) -> np.ndarray:
    """Closest point on ``E`` to ``y`` (or to each row of a batch) in the energy norm."""
    A_E = E.basis(metric) if basis is None else basis
    z0w = to_weighted(E.z0, metric)
    yw = to_weighted(y, metric) - z0w
    return from_weighted(z0w + (yw @ A_E) @ A_E.T, metric)


def pca_basis(E: ConstraintSet, metric: Metric, K: int | None = None, rng=None,
              max_tries: int = 4) -> np.ndarray:
    """Weighted basis of ``E0`` from the principal components of projected random points."""
    rng = np.random.default_rng(rng)
    N = E.N
    K = 10 * N if K is None else int(K)
    z0w = to_weighted(E.z0, metric)
    for _ in range(max_tries):
        if K <= N:
            K = 2 * N + 1
        Tw = rng.standard_normal((K, 2 * N))
        P = to_weighted(project_direct(from_weighted(Tw, metric), E, metric), metric) - z0w
        P -= P.mean(axis=0)
        cov = P.T @ P / (K - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        if vals[N - 1] > 1e-6 * vals[0]:
            return vecs[:, :N].copy()
        K *= 4
    raise MechanismError("sampled covariance has fewer than N significant eigenvalues")


def admissibility_residual(z: np.ndarray, E: ConstraintSet):
    """Equilibrium residual ``|B^T W sig - f|`` and compatibility residual.

    The compatibility residual is the norm of the part of ``eps - g`` lying
    outside ``Im(B)``.
    """
    eps, sig = split(z)
    eps, sig = eps[..., 0], sig[..., 0]
    eq = np.linalg.norm((sig * E.weights) @ E.B - E.f, axis=-1)
    r = eps - E.g
    Q = E._range_B
    comp = np.linalg.norm(r - (r @ Q) @ Q.T, axis=-1)
    return eq, comp
