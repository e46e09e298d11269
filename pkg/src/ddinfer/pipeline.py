"""End-to-end runs shared by the command line and the test-suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import annealing, inference
from .config import (STREAM_ORACLE, STREAM_REPEAT, STREAM_TREE, ConfigError, RunConfig,
                     derived_seed, material_data, stream)
from .material_data import LocalDataSet
from .phase_space import Metric
from .truss import ConstraintSet, TrussModel, assemble, load_truss

log = logging.getLogger(__name__)


@dataclass
class Setup:
    truss: TrussModel
    E: ConstraintSet
    metric: Metric
    data: dict[str, LocalDataSet]
    model: annealing.EnergyModel
    qoi: inference.QoI


def build(cfg: RunConfig, data: dict[str, LocalDataSet] | None = None) -> Setup:
    truss = load_truss(cfg.geometry).scaled(cfg.load_factor, cfg.disp_factor)
    missing = set(truss.materials) - set(cfg.materials)
    if missing:
        raise ConfigError(f"geometry uses materials without a config entry: {sorted(missing)}")
    E = assemble(truss)
    moduli = {k: s.modulus for k, s in cfg.materials.items()}
    if data is None:
        data = material_data(cfg)
    betas = {k: s.beta for k, s in cfg.materials.items() if s.beta is not None}
    if cfg.beta_final:
        betas.update({k: float(v) for k, v in cfg.beta_final.items()})
    used = sorted(set(truss.materials))
    model = annealing.EnergyModel.for_truss(
        truss, E, {k: data[k] for k in used}, {k: moduli[k] for k in used}, cfg.tree,
        stream(cfg.seed, STREAM_TREE), betas, tol=cfg.tol, n_checks=cfg.n_checks,
        use_tree=cfg.use_tree)
    return Setup(truss, E, truss.metric(moduli), data, model, inference.qoi_from_spec(cfg.qoi))


@dataclass
class RunResult:
    values: np.ndarray          # QoI per walker
    states: np.ndarray          # raw admissible states, (N_P, 2N)
    history: list
    runtime: float
    beta_final: dict[str, float]
    initial_values: np.ndarray

    @property
    def energy_seconds(self) -> float:
        return float(sum(r.energy_seconds for r in self.history))

    def summary(self) -> dict:
        return {"n_samples": int(self.values.size), "mean": float(np.mean(self.values)),
                "std": float(np.std(self.values)), "runtime_s": self.runtime,
                "energy_s": self.energy_seconds, "beta_final": self.beta_final}


def run(cfg: RunConfig, setup: Setup | None = None) -> RunResult:
    setup = setup or build(cfg)
    model = setup.model
    params = cfg.annealing
    schedule = annealing.Schedule(cfg.n_quenches, tuple(model.beta_final))
    t0 = time.perf_counter()
    pop0 = annealing.initialize(model, params.n_init or params.n_target, params.init_mode,
                                annealing.stage_rng(params.seed, 0), params.n_init_solutions,
                                params.s0)
    initial = setup.qoi(pop0.states(model), setup.E)
    pop, history = annealing.run(model, schedule, params, population=pop0)
    runtime = time.perf_counter() - t0
    states = pop.states(model)
    return RunResult(setup.qoi(states, setup.E), states, history, runtime,
                     dict(zip(model.names, map(float, model.beta_final))), initial)


# -- references -------------------------------------------------------------

@dataclass
class Reference:
    kind: str
    mean: float
    std: float
    cdf: object = None                  # callable
    samples: np.ndarray | None = None
    mixture: list = field(default_factory=list)

    def ks(self, values) -> float | None:
        if self.cdf is not None:
            return inference.ks_statistic(values, self.cdf)
        if self.samples is not None:
            return inference.ks_statistic(values, self.samples)
        return None


def reference(cfg: RunConfig, setup: Setup | None = None) -> Reference:
    if not cfg.oracle:
        raise ConfigError("config has no oracle section")
    setup = setup or build(cfg)
    spec = dict(cfg.oracle)
    kind = spec.get("type")
    if kind == "gaussian":
        lw = spec.get("likelihood_weights", "unit")
        if lw not in ("unit", "metric"):
            raise ConfigError("oracle.likelihood_weights must be 'unit' or 'metric'")
        post = inference.gaussian_oracle(setup.E, setup.metric, float(spec["s"]),
                                         1.0 if lw == "unit" else None)
        if setup.qoi.linear is not None:
            mean, var = post.qoi_marginal(setup.qoi)
            return Reference("gaussian", mean, float(np.sqrt(var)), inference.gaussian_cdf(mean, var))
        n = int(float(spec.get("n_samples", 1e6)))
        rng = stream(cfg.seed, STREAM_ORACLE)
        vals = np.concatenate([setup.qoi(post.sample(min(n - i, 100_000), rng), setup.E)
                               for i in range(0, n, 100_000)])
        return Reference("gaussian-sampled", float(vals.mean()), float(vals.std()), samples=vals)
    if kind == "weibull":
        names = sorted(set(setup.truss.materials))
        mat = spec.get("material", names[0])
        mix = inference.weibull_oracle(setup.truss, cfg.materials[mat].modulus,
                                       float(spec["sigma0"]), float(spec["p"]), setup.qoi)
        v = np.array([c.value for c in mix])
        w = np.array([c.weight for c in mix])
        mean = float(w @ v)
        return Reference("weibull", mean, float(np.sqrt(w @ (v - mean) ** 2)), mixture=mix)
    raise ConfigError(f"unknown oracle type {kind!r}")


# -- studies ---------------------------------------------------------------

def study(cfg: RunConfig, parameter: str | None = None, values=None, repeats: int | None = None,
          callback=None) -> dict:
    """Sweep one parameter, ``repeats`` independent runs per value.

    Repeat ``r`` uses a seed derived from the config seed, shared across
    sweep values.  Reports per-value mean and max-deviation of ``e_KS`` (when
    an oracle is configured), QoI mean/std and timings; for a data-size sweep
    also the fitted log-log slope ``-d log e_KS / d log M``.
    """
    spec = cfg.study or {}
    parameter = parameter or spec.get("parameter")
    values = list(values if values is not None else spec.get("values", []))
    repeats = int(repeats or spec.get("repeats", 1))
    if not parameter or not values:
        raise ConfigError("study needs a parameter and a list of values")
    cells = []
    for value in values:
        rows = []
        for r in range(repeats):
            c = cfg.with_parameter(parameter, value).with_seed(derived_seed(cfg.seed, STREAM_REPEAT, r))
            setup = build(c)
            res = run(c, setup)
            ks = reference(c, setup).ks(res.values) if c.oracle else None
            row = {"repeat": r, "seed": c.seed, "ks": ks, **res.summary()}
            rows.append(row)
            if callback:
                callback(parameter, value, row)
        cells.append(_cell(parameter, value, rows))
    report = {"parameter": parameter, "repeats": repeats, "cells": cells}
    if parameter == "M" and all(c["ks_mean"] is not None for c in cells) and len(cells) > 1:
        report["slope"] = fit_slope([c["value"] for c in cells], [c["ks_mean"] for c in cells])
    return report


def _cell(parameter, value, rows):
    ks = [r["ks"] for r in rows]
    have = all(k is not None for k in ks)
    ks_arr = np.array(ks, dtype=float) if have else None
    return {
        "value": value,
        "ks_mean": float(ks_arr.mean()) if have else None,
        "ks_std": float(ks_arr.std(ddof=1)) if have and len(rows) > 1 else None,
        "ks_maxdev": float(np.max(np.abs(ks_arr - ks_arr.mean()))) if have else None,
        "qoi_mean": float(np.mean([r["mean"] for r in rows])),
        "qoi_std": float(np.mean([r["std"] for r in rows])),
        "runtime_s": float(np.mean([r["runtime_s"] for r in rows])),
        "energy_s": float(np.mean([r["energy_s"] for r in rows])),
        "runs": rows,
    }


def fit_slope(x, y) -> float:
    """Convergence rate ``alpha`` of ``y ~ x^-alpha`` by least squares in log-log."""
    x, y = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two points")
    return float(-np.polyfit(x, y, 1)[0])
