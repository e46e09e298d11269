"""Empirical local material data sets.

A :class:`LocalDataSet` is a cloud of ``M`` local states ``(eps, sig)`` in
``R^{2d}`` with per-point confidences.  Synthetic generators cover the
sliding-Gaussian and the Weibull-strength (failed/unfailed) materials.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .phase_space import Metric, to_weighted


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LocalDataSet:
    """Local data points stored as rows ``[eps (d), sig (d)]``."""

    points: np.ndarray
    confidences: np.ndarray
    material: str = "default"
    beta: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] % 2 or pts.shape[0] < 1:
            raise DataFormatError("points must have shape (M, 2d) with M >= 1")
        c = np.broadcast_to(np.asarray(self.confidences, dtype=float), (pts.shape[0],)).copy()
        if not np.all(np.isfinite(pts)):
            raise DataFormatError("non-finite data point")
        if np.any((c < 0) | (c > 1)) or not np.all(np.isfinite(c)):
            raise DataFormatError("confidences must lie in [0, 1]")
        if self.beta is not None and not self.beta > 0:
            raise DataFormatError("beta must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidences", c)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1] // 2

    @property
    def strains(self) -> np.ndarray:
        return self.points[:, : self.d]

    @property
    def stresses(self) -> np.ndarray:
        return self.points[:, self.d:]

    def weighted(self, metric: Metric) -> np.ndarray:
        """Points in the weighted coordinates of a one-member metric."""
        return to_weighted(self.points, metric)

    def with_beta(self, metric: Metric) -> "LocalDataSet":
        return replace(self, beta=beta_estimate(self, metric))


def material_metric(modulus, d: int = 1) -> Metric:
    """Unit-weight local metric for a material of the given modulus."""
    C = np.asarray(modulus, dtype=float)
    if C.ndim == 0:
        C = C * np.eye(d)
    return Metric(np.ones(1), C[None])


def beta_estimate(data: LocalDataSet, metric: Metric) -> float:
    """Inverse temperature from the mean squared nearest-neighbour distance.

    ``1/beta = (1/M) sum_i min_{j != i} |y_i - y_j|^2`` in the local metric.
    """
    if data.M < 2:
        raise ValueError("beta estimate needs at least two data points")
    y = data.weighted(metric)
    dist, _ = cKDTree(y).query(y, k=2)
    mean_sq = float(np.mean(dist[:, 1] ** 2))
    if mean_sq == 0.0:
        raise ValueError("all data points coincide; beta is undefined")
    return 1.0 / mean_sq


def _strains(strain_range, M, rng):
    lo, hi = map(float, strain_range)
    if not hi > lo:
        raise ValueError("strain range must be a non-empty interval")
    return rng.uniform(lo, hi, M)


def sample_sliding_gaussian(modulus: float, s: float, strain_range, M: int, rng=None,
                            weight: float = 1.0, material: str = "default") -> LocalDataSet:
    """Sample the sliding-Gaussian likelihood ``exp(-w |sig - C eps|^2 / (2 s^2))``.

    The stress norm is the compliance norm, so the stress residual has
    standard deviation ``s * sqrt(C / w)``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if s < 0 or modulus <= 0 or weight <= 0:
        raise ValueError("invalid sliding-Gaussian parameters")
    rng = np.random.default_rng(rng)
    eps = _strains(strain_range, M, rng)
    sig = modulus * eps + s * np.sqrt(modulus / weight) * rng.standard_normal(M)
    return LocalDataSet(np.column_stack([eps, sig]), np.ones(M), material)


def weibull_cdf(stress, sigma0: float, p: float) -> np.ndarray:
    """Failure probability ``1 - exp(-(stress/sigma0)^p)``; zero for ``stress <= 0``."""
    t = np.maximum(np.asarray(stress, dtype=float), 0.0)
    return -np.expm1(-((t / sigma0) ** p))


def sample_weibull_bimodal(modulus: float, sigma0: float, p: float, noise_s: float,
                           strain_range, M: int, rng=None, material: str = "default",
                           return_branches: bool = False):
    """Sample the failed/unfailed bimodal likelihood of a brittle material.

    A tensile point is on the failed branch ``sig = 0`` with probability
    ``W(C eps)`` and on the elastic branch ``sig = C eps`` otherwise.
    Compressive points are always elastic.  ``noise_s`` is measured in the
    same weighted units as the sliding-Gaussian width, i.e. the stress noise
    has standard deviation ``noise_s * sqrt(C)``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if not (sigma0 > 0 and p > 0 and modulus > 0 and noise_s >= 0):
        raise ValueError("invalid Weibull parameters")
    rng = np.random.default_rng(rng)
    eps = _strains(strain_range, M, rng)
    failed = rng.uniform(size=M) < weibull_cdf(modulus * eps, sigma0, p)
    sig = np.where(failed, 0.0, modulus * eps)
    sig = sig + noise_s * np.sqrt(modulus) * rng.standard_normal(M)
    data = LocalDataSet(np.column_stack([eps, sig]), np.ones(M), material)
    return (data, failed) if return_branches else data


# -- files ----------------------------------------------------------------

_HEADER = re.compile(r"(\w+)=(\S+)")


def save(data: LocalDataSet, path) -> None:
    """Write rows ``eps_1..eps_d sig_1..sig_d confidence`` with a key=value header."""
    meta = f"material={data.material} d={data.d}"
    if data.beta is not None:
        meta += f" beta={data.beta!r}"
    table = np.column_stack([data.points, data.confidences])
    np.savetxt(path, table, fmt="%.17g", header=meta)


def load(path) -> LocalDataSet:
    text = Path(path).read_text()
    meta = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            meta.update(dict(_HEADER.findall(line)))
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed row") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: rows have inconsistent widths {sorted(widths)}")
    width = widths.pop()
    if width < 3 or (width - 1) % 2:
        raise DataFormatError(f"{path}: expected 2d+1 columns, found {width}")
    d = (width - 1) // 2
    if "d" in meta and int(meta["d"]) != d:
        raise DataFormatError(f"{path}: header says d={meta['d']}, rows have d={d}")
    table = np.array(rows)
    beta = float(meta["beta"]) if "beta" in meta else None
    return LocalDataSet(table[:, :-1], table[:, -1], meta.get("material", "default"), beta)
