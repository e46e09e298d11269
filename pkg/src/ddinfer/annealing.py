"""Population annealing over the constraint set.

The whole population is advanced in lock-step: every trial move, energy
evaluation and Metropolis test is a vectorized operation over walkers.
Walkers are kept in weighted coordinates internally, where random moves are
isotropic Gaussian steps in the span of the constraint-set basis.

Randomness: one ``numpy`` generator per stage (initialization, each quench),
derived from the run seed with :class:`numpy.random.SeedSequence`.  Draws are
made in walker order, so results do not depend on how energy evaluations are
spread over threads.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import ann_index
from .ann_index import DEFAULT_TOL, UNLIMITED, KMeansTree, TreeParams
from .material_data import LocalDataSet, beta_estimate, material_metric
from .phase_space import Metric, from_weighted, to_weighted
from .truss import ConstraintSet, TrussModel, pca_basis, project

INIT_MODES = ("projection", "min-dist")

log = logging.getLogger(__name__)


@dataclass(eq=False)
class MaterialIndex:
    """One data structure per material, shared by all members made of it."""

    name: str
    data: LocalDataSet
    modulus: float
    beta_final: float
    points: np.ndarray                 # weighted local coordinates (unit weight)
    tree: KMeansTree | None = None
    _kd: cKDTree | None = field(default=None, repr=False)

    @classmethod
    def create(cls, data: LocalDataSet, modulus: float, tree_params: TreeParams | None = None,
               rng=None, beta: float | None = None, name: str | None = None) -> "MaterialIndex":
        metric = material_metric(modulus, data.d)
        pts = data.weighted(metric)
        if beta is None:
            beta = data.beta if data.beta is not None else beta_estimate(data, metric)
        tree = ann_index.build(pts, tree_params, rng=rng, confidences=data.confidences)
        return cls(name or data.material, data, float(modulus), float(beta), pts, tree)

    @property
    def kdtree(self) -> cKDTree:
        if self._kd is None:
            self._kd = cKDTree(self.points)
        return self._kd


class EnergyModel:
    """Binds a constraint set, its metric and the per-material data indices."""

    def __init__(self, E: ConstraintSet, metric: Metric, materials: dict[str, MaterialIndex],
                 assignment: list[str], tol: float = DEFAULT_TOL, n_checks: int = UNLIMITED,
                 use_tree: bool = True):
        if len(assignment) != metric.m or metric.m != E.N:
            raise ValueError("member count mismatch between constraint set, metric and assignment")
        missing = set(assignment) - set(materials)
        if missing:
            raise ValueError(f"no data for materials {sorted(missing)}")
        if not 0 < tol < 1:
            raise ValueError("TOL must lie in (0, 1)")
        self.E = E
        self.metric = metric
        self.materials = materials
        self.assignment = list(assignment)
        self.tol = tol
        self.n_checks = int(n_checks)
        self.use_tree = use_tree
        self.names = sorted(materials)
        self.members = {k: np.array([e for e, a in enumerate(assignment) if a == k], dtype=int)
                        for k in self.names}
        self.sqrt_w = np.sqrt(metric.weights)
        self.beta_final = np.array([materials[k].beta_final for k in self.names])
        # member-averaged reference inverse temperature; equals beta_e for one material
        self._member_share = np.array([self.members[k].size for k in self.names]) / metric.m

    @classmethod
    def for_truss(cls, truss: TrussModel, E: ConstraintSet, datasets: dict[str, LocalDataSet],
                  moduli: dict[str, float], tree_params: TreeParams | None = None, rng=None,
                  betas: dict[str, float] | None = None, **kw) -> "EnergyModel":
        rng = np.random.default_rng(rng)
        metric = truss.metric(moduli)
        used = sorted(set(truss.materials))
        mats = {k: MaterialIndex.create(datasets[k], moduli[k], tree_params, rng,
                                        (betas or {}).get(k), k) for k in used}
        return cls(E, metric, mats, truss.materials, **kw)

    def with_search(self, tol: float | None = None, n_checks: int | None = None,
                    use_tree: bool | None = None) -> "EnergyModel":
        return EnergyModel(self.E, self.metric, self.materials, self.assignment,
                           self.tol if tol is None else tol,
                           self.n_checks if n_checks is None else n_checks,
                           self.use_tree if use_tree is None else use_tree)

    def reference_beta(self, betas: np.ndarray) -> float:
        return float(np.dot(self._member_share, betas))

    def member_loglik(self, Zw: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Per-member log thermalized likelihoods, shape ``(P, m)``."""
        Zw = np.atleast_2d(Zw)
        P, m = Zw.shape[0], self.metric.m
        d = self.metric.d
        loc = Zw.reshape(P, m, 2 * d) / self.sqrt_w[None, :, None]
        out = np.empty((P, m))
        for k, beta in zip(self.names, betas):
            idx = self.members[k]
            mat = self.materials[k]
            Q = loc[:, idx, :].reshape(-1, 2 * d)
            # member temperature in the member norm: beta_e * w_e = beta of the material
            beff = np.full(P * idx.size, beta)
            if self.use_tree:
                ll = ann_index.log_likelihood(mat.tree, Q, beff, self.tol, self.n_checks)
            else:
                ll = ann_index.log_likelihood(mat.points, Q, beff, self.tol,
                                              confidences=mat.data.confidences)
            out[:, idx] = np.reshape(ll, (P, idx.size))
        return out

    def phi(self, Zw: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Negative log thermalized likelihood ``sum_e -log L_e`` per walker."""
        return -self.member_loglik(Zw, betas).sum(axis=1)

    def energy(self, Zw: np.ndarray, betas: np.ndarray) -> np.ndarray:
        """Annealing energy ``phi / beta_ref`` per walker."""
        return self.phi(Zw, betas) / self.reference_beta(betas)

    def weighted(self, Z: np.ndarray) -> np.ndarray:
        return to_weighted(Z, self.metric)

    def unweighted(self, Zw: np.ndarray) -> np.ndarray:
        return from_weighted(Zw, self.metric)


def energy(z: np.ndarray, model: EnergyModel, betas) -> np.ndarray | float:
    """Annealing energy of raw (unweighted) state(s) at per-material ``betas``."""
    betas = np.broadcast_to(np.asarray(betas, dtype=float), (len(model.names),))
    e = model.energy(model.weighted(np.atleast_2d(z)), betas)
    return float(e[0]) if np.ndim(z) == 1 else e


# -- schedule, parameters, population -------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Linear quench schedule: ``beta_k = (q + 1) * beta_final_k / n_quenches``."""

    n_quenches: int
    beta_final: tuple[float, ...]

    def __post_init__(self):
        if self.n_quenches < 0:
            raise ValueError("number of quenches must be non-negative")
        if any(not b > 0 for b in self.beta_final):
            raise ValueError("target inverse temperatures must be positive")

    @property
    def increments(self) -> np.ndarray:
        return np.asarray(self.beta_final) / self.n_quenches

    def betas(self, q: int) -> np.ndarray:
        """Inverse temperatures in force during quench ``q`` (0-based)."""
        return (q + 1) * self.increments


@dataclass(frozen=True)
class PAParams:
    n_target: int = 1000
    n_trials: int = 20
    s0: float = 1.0
    r_target: float = 0.25
    seed: int = 0
    n_init: int | None = None         # initial population size, defaults to n_target
    init_mode: str = "projection"
    n_init_solutions: int | None = None  # distinct min-dist solutions, replicated to n_init
    basis: str = "pca"
    # re-evaluate e_p at the new temperature before the Metropolis trials of a quench;
    # False keeps the energy from the previous temperature
    refresh_energies: bool = True

    def __post_init__(self):
        if self.n_target < 1 or self.n_trials < 1:
            raise ValueError("population size and trial count must be positive")
        if not 0 < self.r_target < 1:
            raise ValueError("target acceptance must lie in (0, 1)")
        if not self.s0 > 0:
            raise ValueError("initial step size must be positive")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"unknown initialization mode {self.init_mode!r}")
        if self.basis not in ("pca", "exact"):
            raise ValueError(f"unknown basis construction {self.basis!r}")


@dataclass
class Population:
    """Walkers in weighted coordinates with their energies and step sizes."""

    states_w: np.ndarray
    energies: np.ndarray
    steps: np.ndarray
    accepted: np.ndarray

    @property
    def size(self) -> int:
        return self.states_w.shape[0]

    def states(self, model: EnergyModel) -> np.ndarray:
        return model.unweighted(self.states_w)

    def take(self, idx: np.ndarray) -> "Population":
        return Population(self.states_w[idx].copy(), self.energies[idx].copy(),
                          self.steps[idx].copy(), self.accepted[idx].copy())


def stage_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# -- building blocks ------------------------------------------------------

def random_data_tuples(model: EnergyModel, n: int, rng) -> np.ndarray:
    """Raw global states built from one random data point per member."""
    rng = np.random.default_rng(rng)
    m, d = model.metric.m, model.metric.d
    Y = np.empty((n, m, 2 * d))
    for e, name in enumerate(model.assignment):
        data = model.materials[name].data
        Y[:, e, :] = data.points[rng.integers(data.M, size=n)]
    return Y.reshape(n, -1)


def min_dist_solve(model: EnergyModel, start: np.ndarray, max_iters: int = 100,
                   return_history: bool = False):
    """Alternating nearest-data / closest-admissible-point iterations.

    ``start`` holds raw global states (not necessarily admissible).  Returns
    the admissible states and a mask of walkers whose data assignment became
    stationary; with ``return_history`` also the per-iteration distances
    ``|z - y|`` between each state and its assigned data tuple.
    """
    E, metric = model.E, model.metric
    Z = project(np.atleast_2d(start), E, metric)
    P, m, d = Z.shape[0], metric.m, metric.d
    prev = np.full((P, m), -1)
    converged = np.zeros(P, dtype=bool)
    history = []
    for _ in range(max_iters):
        loc = model.weighted(Z).reshape(P, m, 2 * d) / model.sqrt_w[None, :, None]
        assign = np.empty((P, m), dtype=int)
        Y = np.empty((P, m, 2 * d))
        for name in model.names:
            idx = model.members[name]
            mat = model.materials[name]
            _, nn = mat.kdtree.query(loc[:, idx, :].reshape(-1, 2 * d))
            assign[:, idx] = nn.reshape(P, idx.size)
            Y[:, idx, :] = mat.data.points[assign[:, idx]]
        Y = Y.reshape(P, -1)
        if return_history:
            history.append(np.linalg.norm(model.weighted(Z - Y), axis=1))
        converged = np.all(assign == prev, axis=1)
        if converged.all():
            break
        prev = assign
        Z = project(Y, E, metric)
    if not converged.all():
        log.warning("min-dist solver: %d of %d walkers not converged after %d iterations",
                    int((~converged).sum()), P, max_iters)
    if return_history:
        return Z, converged, np.array(history)
    return Z, converged


def initialize(model: EnergyModel, n: int, mode: str = "projection", rng=None,
               n_solutions: int | None = None, s0: float = 1.0) -> Population:
    """Initial admissible population with infinite energies."""
    if n < 1:
        raise ValueError("population size must be positive")
    rng = np.random.default_rng(rng)
    if mode == "projection":
        Z = project(random_data_tuples(model, n, rng), model.E, model.metric)
    elif mode == "min-dist":
        k = n if n_solutions is None else min(n, int(n_solutions))
        sols, _ = min_dist_solve(model, random_data_tuples(model, k, rng))
        Z = sols[np.arange(n) % k]
    else:
        raise ValueError(f"unknown initialization mode {mode!r}")
    return Population(model.weighted(Z), np.full(n, np.inf), np.full(n, float(s0)),
                      np.zeros(n, dtype=np.int64))


def copy_counts(log_weights: np.ndarray, n_target: int, rng) -> np.ndarray:
    """Copies ``l_p`` by stochastic rounding of ``tau_p = N* w_p / sum w``.

    All ``-inf`` or all equal log-weights give the uniform ``tau = N*/N_P``.
    """
    rng = np.random.default_rng(rng)
    a = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(a)
    if not finite.any() or (finite.all() and np.all(a == a[0])):
        tau = np.full(a.size, n_target / a.size)
    else:
        a = np.where(finite, a - a[finite].max(), -np.inf)
        w = np.exp(a)
        tau = n_target * w / w.sum()
    base = np.floor(tau)
    return (base + (rng.uniform(size=a.size) < tau - base)).astype(np.int64)


def resample_counts(energies: np.ndarray, dbeta: float, n_target: int, rng) -> np.ndarray:
    """Copies for the weights ``exp(-dbeta e_p)``; infinite energies count as uniform."""
    e = np.asarray(energies, dtype=float)
    if not np.isfinite(e).any():
        return copy_counts(np.zeros(e.size), n_target, rng)
    with np.errstate(invalid="ignore"):
        return copy_counts(np.where(np.isfinite(e), -dbeta * e, -np.inf), n_target, rng)


def _take_counts(pop: Population, counts: np.ndarray, fallback: int) -> Population:
    if counts.sum() == 0:
        # keep one walker rather than lose the population
        counts[fallback] = 1
    return pop.take(np.repeat(np.arange(pop.size), counts))


def resample(pop: Population, dbeta: float, n_target: int, rng) -> Population:
    counts = resample_counts(pop.energies, dbeta, n_target, rng)
    return _take_counts(pop, counts, int(np.argmin(pop.energies)))


def random_move(Zw: np.ndarray, steps, basis: np.ndarray, rng) -> np.ndarray:
    """Gaussian trial states ``z_w + s_p g A_E^T`` with ``g ~ N(0, I_N)``."""
    rng = np.random.default_rng(rng)
    Zw = np.atleast_2d(Zw)
    G = rng.standard_normal((Zw.shape[0], basis.shape[1]))
    return Zw + np.asarray(steps, dtype=float).reshape(-1, 1) * (G @ basis.T)


def mh_accept(e_current, e_trial, beta: float, rng=None, u=None) -> np.ndarray:
    """Metropolis test with probability ``min(1, exp(-beta (e_trial - e_current)))``."""
    e_current = np.asarray(e_current, dtype=float)
    e_trial = np.asarray(e_trial, dtype=float)
    if u is None:
        u = np.random.default_rng(rng).uniform(size=np.shape(e_trial))
    downhill = e_trial <= e_current
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.exp(-beta * (e_trial - e_current))
    return downhill | (u <= np.nan_to_num(w, nan=0.0))


def adapt_step(steps, rate, r_target: float, s0: float):
    """``s <- s + (r - r*) s``, floored at ``1e-12 * s0``."""
    s = np.asarray(steps, dtype=float) * (1.0 + np.asarray(rate, dtype=float) - r_target)
    return np.maximum(s, 1e-12 * s0)


# -- Algorithm ------------------------------------------------------------

@dataclass
class QuenchRecord:
    quench: int
    betas: list[float]
    size: int
    mean_energy: float
    mean_acceptance: float
    mean_step: float
    energy_seconds: float


def constraint_basis(model: EnergyModel, params: PAParams) -> np.ndarray:
    if params.basis == "exact":
        return model.E.basis(model.metric)
    return pca_basis(model.E, model.metric, rng=stage_rng(params.seed, 2))


def run(model: EnergyModel, schedule: Schedule, params: PAParams,
        population: Population | None = None,
        callback: Callable[[QuenchRecord], None] | None = None):
    """Population annealing; returns the final population and the quench log."""
    if len(schedule.beta_final) != len(model.names):
        raise ValueError("schedule needs one target inverse temperature per material")
    if population is None:
        population = initialize(model, params.n_init or params.n_target, params.init_mode,
                                stage_rng(params.seed, 0), params.n_init_solutions, params.s0)
    pop = population
    history: list[QuenchRecord] = []
    if schedule.n_quenches == 0:
        return pop, history
    basis = constraint_basis(model, params)
    ref_increment = model.reference_beta(schedule.increments)
    for q in range(schedule.n_quenches):
        rng = stage_rng(params.seed, 1, q)
        betas = schedule.betas(q)
        beta_ref = model.reference_beta(betas)
        pop = resample(pop, ref_increment, params.n_target, rng)
        pop.accepted[:] = 0
        t_energy = 0.0
        if params.refresh_energies:
            t0 = time.perf_counter()
            pop.energies = model.energy(pop.states_w, betas)
            t_energy += time.perf_counter() - t0
        for _ in range(params.n_trials):
            trial = random_move(pop.states_w, pop.steps, basis, rng)
            t0 = time.perf_counter()
            e_trial = model.energy(trial, betas)
            t_energy += time.perf_counter() - t0
            ok = mh_accept(pop.energies, e_trial, beta_ref, u=rng.uniform(size=pop.size))
            pop.states_w[ok] = trial[ok]
            pop.energies[ok] = e_trial[ok]
            pop.accepted += ok
        rate = pop.accepted / params.n_trials
        pop.steps = adapt_step(pop.steps, rate, params.r_target, params.s0)
        rec = QuenchRecord(q, [float(b) for b in betas], pop.size,
                           float(np.mean(pop.energies)), float(np.mean(rate)),
                           float(np.mean(pop.steps)), t_energy)
        history.append(rec)
        if callback is not None:
            callback(rec)
    return pop, history
