"""Posterior summaries, reference solutions and error measures."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .material_data import weibull_cdf
from .phase_space import Metric, join, split
from .truss import ConstraintSet, MechanismError, TrussModel, admissibility_residual, assemble


# -- quantities of interest -----------------------------------------------

def recover_dofs(z: np.ndarray, E: ConstraintSet, check: bool = True):
    """Coordinates ``(u, v)`` of admissible state(s) with ``eps = B u + g``, ``sig = A v + sig0``."""
    eps, sig = split(z)
    eps, sig = eps[..., 0], sig[..., 0]
    if check:
        eq, comp = admissibility_residual(z, E)
        scale_s = 1.0 + np.linalg.norm(sig, axis=-1) * np.max(E.weights) * max(1.0, np.abs(E.B).max())
        scale_e = 1.0 + np.linalg.norm(eps, axis=-1)
        if np.any(eq > 1e-8 * scale_s) or np.any(comp > 1e-8 * scale_e):
            raise ValueError("state is not admissible")
    u = (eps - E.g) @ np.linalg.pinv(E.B).T if E.n else np.zeros(eps.shape[:-1] + (0,))
    v = (sig - E.sigma0) @ E.airy
    return u, v


def compose(u: np.ndarray, v: np.ndarray, E: ConstraintSet) -> np.ndarray:
    """Admissible state from coordinates ``(u, v)``."""
    return join(np.asarray(u) @ E.B.T + E.g, np.asarray(v) @ E.airy.T + E.sigma0)


@dataclass(frozen=True)
class QoI:
    """Scalar functional of admissible states.

    ``linear`` maps a constraint set to ``(a, b, c)`` with
    ``f = a.u + b.v + c`` when the functional is linear in the coordinates.
    """

    name: str
    fn: Callable[[np.ndarray, ConstraintSet], np.ndarray]
    linear: Callable[[ConstraintSet], tuple] | None = None

    def __call__(self, z: np.ndarray, E: ConstraintSet) -> np.ndarray:
        return self.fn(np.atleast_2d(z), E)


def _node_displacements(z, E, node_id):
    truss = E.truss
    u, _ = recover_dofs(z, E, check=False)
    node = truss.nodes[truss.node_index(node_id)]
    out = np.empty((u.shape[0], truss.dim))
    for k in range(truss.dim):
        j = E.dof(node_id, k)
        out[:, k] = u[:, j] if j >= 0 else node.disp[k]
    return out


def displacement(node_id: int, component: int, name: str | None = None) -> QoI:
    def fn(z, E):
        return _node_displacements(z, E, node_id)[:, component]

    def linear(E):
        a = np.zeros(E.n)
        j = E.dof(node_id, component)
        if j >= 0:
            a[j] = 1.0
            return a, np.zeros(E.l), 0.0
        node = E.truss.nodes[E.truss.node_index(node_id)]
        return a, np.zeros(E.l), float(node.disp[component])

    return QoI(name or f"u[{node_id}].{component}", fn, linear)


def _reaction_vector(E: ConstraintSet, node_id: int, direction) -> np.ndarray:
    """``h`` with ``P = -h . sig``: external force along ``direction`` needed at the node."""
    truss = E.truss
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n)
    ni = truss.node_index(node_id)
    conn = truss.connectivity
    dvec = truss.directions
    h = np.zeros(truss.m)
    for e in range(truss.m):
        if conn[e, 0] == ni:
            h[e] = truss.areas[e] * dvec[e] @ n
        elif conn[e, 1] == ni:
            h[e] = -truss.areas[e] * dvec[e] @ n
    return h


def reaction(node_id: int, direction, name: str | None = None) -> QoI:
    """Force that must be applied at a node (along ``direction``) to equilibrate the bars."""
    def fn(z, E):
        _, sig = split(z)
        return -sig[..., 0] @ _reaction_vector(E, node_id, direction)

    def linear(E):
        h = _reaction_vector(E, node_id, direction)
        return np.zeros(E.n), -E.airy.T @ h, float(-h @ E.sigma0)

    return QoI(name or f"P[{node_id}]", fn, linear)


def eccentricity(node_id: int, components=(0, 1), name: str | None = None) -> QoI:
    """In-plane joint eccentricity ``sqrt(u_x^2 + u_y^2)``."""
    def fn(z, E):
        d = _node_displacements(z, E, node_id)[:, list(components)]
        return np.sqrt(np.sum(d * d, axis=1))

    return QoI(name or f"ecc[{node_id}]", fn, None)


def qoi_from_spec(spec: dict) -> QoI:
    kind = spec.get("type")
    if kind == "displacement":
        return displacement(int(spec["node"]), int(spec["component"]), spec.get("name"))
    if kind == "reaction":
        return reaction(int(spec["node"]), spec["direction"], spec.get("name"))
    if kind == "eccentricity":
        return eccentricity(int(spec["node"]), tuple(spec.get("components", (0, 1))), spec.get("name"))
    raise ValueError(f"unknown quantity of interest type {kind!r}")


def expectation(values) -> float:
    """Population average ``(1/N_P) sum_p f(z_p)`` of precomputed QoI values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty population")
    return float(values.mean())


# -- Gaussian reference ---------------------------------------------------

@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian posterior over the coordinates ``x = (u, v)`` of ``E``."""

    E: ConstraintSet
    mean_u: np.ndarray
    mean_v: np.ndarray
    precision: np.ndarray   # of x, includes the 1/s^2 factor

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    def marginal(self, a, b, c: float = 0.0) -> tuple[float, float]:
        """Mean and variance of ``a.u + b.v + c``."""
        k = np.concatenate([np.asarray(a, dtype=float).reshape(-1), np.asarray(b, dtype=float).reshape(-1)])
        mean = float(k @ np.concatenate([self.mean_u, self.mean_v]) + c)
        var = float(k @ np.linalg.solve(self.precision, k))
        return mean, var

    def qoi_marginal(self, qoi: QoI) -> tuple[float, float]:
        if qoi.linear is None:
            raise ValueError(f"{qoi.name} is not linear in the state coordinates")
        return self.marginal(*qoi.linear(self.E))

    def sample(self, n: int, rng=None) -> np.ndarray:
        """Admissible states drawn from the posterior."""
        rng = np.random.default_rng(rng)
        L = np.linalg.cholesky(self.covariance)
        mean = np.concatenate([self.mean_u, self.mean_v])
        x = mean + rng.standard_normal((n, mean.size)) @ L.T
        return compose(x[:, :self.E.n], x[:, self.E.n:], self.E)


def gaussian_oracle(E: ConstraintSet, metric: Metric, s: float,
                    likelihood_weights=None) -> GaussianPosterior:
    """Exact posterior for sliding-Gaussian material behaviour.

    The likelihood is ``exp(-sum_e omega_e |sig_e - C_e eps_e|^2 / (2 s^2))``
    with the compliance norm on stresses.  By default ``omega = w`` (the
    metric weights), for which the ``u`` and ``v`` blocks decouple and the
    means reduce to inverting the stiffness ``B^T W C B`` and the compliance
    ``A^T W C^{-1} A``.  Other weights give a coupled Gaussian.
    """
    if metric.d != 1:
        raise ValueError("gaussian oracle is implemented for bars (d = 1)")
    C = metric.moduli[:, 0, 0]
    omega = metric.weights if likelihood_weights is None else np.broadcast_to(
        np.asarray(likelihood_weights, dtype=float), C.shape)
    # residual sig - C eps = J x + r0 with x = (u, v)
    J = np.hstack([-C[:, None] * E.B, E.airy])
    r0 = E.sigma0 - C * E.g
    D = omega / C
    H = J.T @ (D[:, None] * J)
    try:
        x = -np.linalg.solve(H, J.T @ (D * r0))
    except np.linalg.LinAlgError:
        raise MechanismError("stiffness or compliance matrix is singular") from None
    if np.linalg.cond(H) > 1e14:
        raise MechanismError("stiffness or compliance matrix is singular")
    return GaussianPosterior(E, x[:E.n], x[E.n:], H / s**2)


def gaussian_cdf(mean: float, var: float) -> Callable[[np.ndarray], np.ndarray]:
    from scipy.special import ndtr

    sd = np.sqrt(var)
    return lambda x: ndtr((np.asarray(x, dtype=float) - mean) / sd)


# -- Weibull mixture reference --------------------------------------------

@dataclass(frozen=True)
class MixtureComponent:
    failed: tuple[int, ...]     # bar ids
    value: float
    weight: float


def weibull_oracle(truss: TrussModel, modulus: float, sigma0: float, p: float,
                   qoi: QoI) -> list[MixtureComponent]:
    """Enumerate failure patterns of the tension bars and their likelihoods.

    Bars in tension in the intact elastic solution may fail.  For each
    pattern the structure is re-solved with failed bars carrying no stress,
    and the pattern weight is the product over tension bars of ``W(C eps)``
    (failed) or ``1 - W(C eps)`` (intact) at that pattern's strains.
    """
    E = assemble(truss)

    def solve(fset):
        k = np.array([0.0 if b.id in fset else modulus for b in truss.bars])
        if E.n:
            K = E.B.T @ ((E.weights * k)[:, None] * E.B)
            rhs = E.f - E.B.T @ (E.weights * k * E.g)
            eps = E.B @ np.linalg.lstsq(K, rhs, rcond=None)[0] + E.g
        else:
            eps = E.g.copy()
        return eps, k * eps

    eps0, _ = solve(set())
    tension = [b.id for b, e in zip(truss.bars, eps0) if e > 0]
    out = []
    for r in range(len(tension) + 1):
        for failed in itertools.combinations(tension, r):
            fset = set(failed)
            eps, sig = solve(fset)
            Wf = weibull_cdf(modulus * eps, sigma0, p)
            weight = 1.0
            for e, b in enumerate(truss.bars):
                if b.id in tension:
                    weight *= Wf[e] if b.id in fset else 1.0 - Wf[e]
            value = float(qoi(join(eps, sig), E)[0])
            out.append(MixtureComponent(tuple(sorted(failed)), value, float(weight)))
    total = sum(c.weight for c in out)
    if total <= 0:
        raise ValueError("no feasible failure pattern")
    return [MixtureComponent(c.failed, c.value, c.weight / total) for c in out]


# -- histograms and KS ----------------------------------------------------

def histogram(samples, bins=50, width: float | None = None, range=None):
    """Bin centres and normalized frequencies (summing to one)."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("no samples")
    lo, hi = (x.min(), x.max()) if range is None else range
    if width is not None:
        nb = max(1, int(np.ceil((hi - lo) / width)))
        edges = lo + width * np.arange(nb + 1)
        if edges[-1] < hi:
            edges = np.append(edges, edges[-1] + width)
    else:
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    counts, edges = np.histogram(x, bins=edges)
    return 0.5 * (edges[:-1] + edges[1:]), counts / x.size, edges


def ks_statistic(samples, reference) -> float:
    """Sup-distance between the empirical CDF of ``samples`` and a reference.

    ``reference`` is either a CDF callable or a second sample.
    """
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    if callable(reference):
        F = np.asarray(reference(x), dtype=float)
        i = np.arange(1, n + 1)
        return float(max(np.max(i / n - F), np.max(F - (i - 1) / n), 0.0))
    y = np.sort(np.asarray(reference, dtype=float).reshape(-1))
    if y.size == 0:
        raise ValueError("empty reference sample")
    grid = np.concatenate([x, y])
    Fx = np.searchsorted(x, grid, side="right") / n
    Fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(Fx - Fy)))
