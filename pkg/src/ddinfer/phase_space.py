"""Phase-space algebra: the energy norm and the weighted-coordinate map.

A global state ``z`` of a structure with ``m`` members of local dimension
``d`` is stored as a flat array of length ``2N`` (``N = m * d``) in
member-major order::

    [eps_1 (d), sig_1 (d), eps_2 (d), sig_2 (d), ...]

Batches of states are arrays of shape ``(..., 2N)``.  Every function here
accepts either a single state or a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _sym_sqrt(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (C^{1/2}, C^{-1/2}) for a stack of SPD matrices."""
    vals, vecs = np.linalg.eigh(C)
    root = np.sqrt(vals)
    half = np.einsum("...ij,...j,...kj->...ik", vecs, root, vecs)
    inv_half = np.einsum("...ij,...j,...kj->...ik", vecs, 1.0 / root, vecs)
    return half, inv_half


@dataclass(frozen=True, eq=False)
class Metric:
    """Per-member weights ``w_e`` and moduli ``C_e`` defining the norm

    ``|z|^2 = sum_e w_e (C_e eps_e . eps_e + C_e^{-1} sig_e . sig_e)``.

    ``moduli`` may be given as an array of shape ``(m,)`` (scalar moduli,
    ``d = 1``) or ``(m, d, d)``.
    """

    weights: np.ndarray
    moduli: np.ndarray
    _half: np.ndarray = field(init=False, repr=False, compare=False)
    _inv_half: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        C = np.asarray(self.moduli, dtype=float)
        if C.ndim == 1:
            C = C[:, None, None]
        if C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise ValueError("moduli must have shape (m,) or (m, d, d)")
        if C.shape[0] != w.shape[0]:
            raise ValueError(
                f"{w.shape[0]} weights but {C.shape[0]} moduli"
            )
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive")
        if not np.allclose(C, np.swapaxes(C, 1, 2), rtol=1e-12, atol=0):
            raise ValueError("moduli must be symmetric")
        if np.any(np.linalg.eigvalsh(C) <= 0):
            raise ValueError("moduli must be positive definite")
        half, inv_half = _sym_sqrt(C)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "moduli", C)
        object.__setattr__(self, "_half", half)
        object.__setattr__(self, "_inv_half", inv_half)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.moduli.shape[1]

    @property
    def N(self) -> int:
        return self.m * self.d

    def scale_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Strain and stress scaling blocks, each of shape ``(m, d, d)``."""
        sw = np.sqrt(self.weights)[:, None, None]
        return sw * self._half, sw * self._inv_half

    def weighting_matrix(self) -> np.ndarray:
        """Dense ``(2N, 2N)`` matrix ``S`` with ``z_w = S @ z``."""
        Se, Ss = self.scale_factors()
        m, d = self.m, self.d
        S = np.zeros((2 * self.N, 2 * self.N))
        for e in range(m):
            i = 2 * d * e
            S[i:i + d, i:i + d] = Se[e]
            S[i + d:i + 2 * d, i + d:i + 2 * d] = Ss[e]
        return S

    def member(self, e: int) -> "Metric":
        return Metric(self.weights[e:e + 1], self.moduli[e:e + 1])


def _blocks(z: np.ndarray, metric: Metric) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 2 * metric.N:
        raise ValueError(
            f"state has length {z.shape[-1]}, metric expects {2 * metric.N}"
        )
    return z.reshape(z.shape[:-1] + (metric.m, 2, metric.d))


def split(z: np.ndarray, d: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return strains and stresses, each of shape ``(..., m, d)``."""
    z = np.asarray(z, dtype=float)
    b = z.reshape(z.shape[:-1] + (-1, 2, d))
    return b[..., 0, :], b[..., 1, :]


def join(eps: np.ndarray, sig: np.ndarray, d: int = 1) -> np.ndarray:
    """Inverse of :func:`split`.

    For ``d = 1`` the inputs have shape ``(..., m)``; otherwise
    ``(..., m, d)``.
    """
    eps = np.asarray(eps, dtype=float)
    sig = np.asarray(sig, dtype=float)
    if eps.shape != sig.shape:
        raise ValueError("strain and stress arrays differ in shape")
    if d == 1:
        eps, sig = eps[..., None], sig[..., None]
    b = np.stack([eps, sig], axis=-2)
    return b.reshape(b.shape[:-3] + (b.shape[-3] * 2 * b.shape[-1],))


def to_weighted(z: np.ndarray, metric: Metric) -> np.ndarray:
    """Scale strains by ``sqrt(w_e) C_e^{1/2}`` and stresses by ``sqrt(w_e) C_e^{-1/2}``."""
    b = _blocks(z, metric)
    Se, Ss = metric.scale_factors()
    out = np.empty_like(b)
    out[..., 0, :] = np.einsum("eij,...ej->...ei", Se, b[..., 0, :])
    out[..., 1, :] = np.einsum("eij,...ej->...ei", Ss, b[..., 1, :])
    return out.reshape(np.shape(z))


def from_weighted(zw: np.ndarray, metric: Metric) -> np.ndarray:
    b = _blocks(zw, metric)
    sw = np.sqrt(metric.weights)[:, None, None]
    Se_inv = metric._inv_half / sw
    Ss_inv = metric._half / sw
    out = np.empty_like(b)
    out[..., 0, :] = np.einsum("eij,...ej->...ei", Se_inv, b[..., 0, :])
    out[..., 1, :] = np.einsum("eij,...ej->...ei", Ss_inv, b[..., 1, :])
    return out.reshape(np.shape(zw))


def norm(z: np.ndarray, metric: Metric) -> np.ndarray | float:
    """Energy norm of a state (or of each state in a batch)."""
    b = _blocks(z, metric)
    eps, sig = b[..., 0, :], b[..., 1, :]
    Cinv = np.linalg.inv(metric.moduli)
    e_part = np.einsum("eij,...ej,...ei->...e", metric.moduli, eps, eps)
    s_part = np.einsum("eij,...ej,...ei->...e", Cinv, sig, sig)
    val = np.sqrt(np.sum(metric.weights * (e_part + s_part), axis=-1))
    return float(val) if np.ndim(val) == 0 else val
