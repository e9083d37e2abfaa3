"""Sobolev-type seminorms and norms over finite coefficient sets.

Three scales appear: the physical scale weights a coefficient at lattice
index k by the wave vector P k, the parent-torus scale weights it by k
itself, and the mixed scale splits k into (k_I, k_II) and weights the two
parts separately through the slant coordinates k_I + Q k_II.  All sums use
the convention 0**0 = 1, so order zero reduces to the plain l2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProjectionMatrix
from .errors import OutOfRange, ShapeMismatch

__all__ = [
    "NormOrder",
    "qp_seminorm",
    "qp_norm",
    "periodic_seminorm",
    "periodic_norm",
    "mixed_seminorm",
]


@dataclass(frozen=True)
class NormOrder:
    """Regularity orders for error measurement.

    alpha weights physical directions, beta the lifted lattice directions;
    mu and nu are the (lower) orders errors are measured in.
    """

    alpha: float
    beta: float = 0.0
    mu: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise OutOfRange("orders must be nonnegative")
        if not 0 <= self.mu <= self.alpha:
            raise OutOfRange(f"mu must lie in [0, alpha], got {self.mu}")
        if not 0 <= self.nu <= self.beta:
            raise OutOfRange(f"nu must lie in [0, beta], got {self.nu}")


def _require_order(value, name="order"):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise OutOfRange(f"{name} must be a nonnegative real, got {value}")
    return value


def _iter_coeffs(coeffs):
    """Yield (k_block, c_block) pairs from a dict or a SpectralField."""
    if hasattr(coeffs, "index_set"):
        set_ = coeffs.index_set
        for start, stop, kb in set_.iter_blocks():
            yield kb.astype(np.float64), coeffs.coeffs[start:stop]
        return
    if isinstance(coeffs, dict):
        if coeffs:
            k = np.array([np.asarray(key, dtype=np.float64) for key in coeffs])
            c = np.array([coeffs[key] for key in coeffs], dtype=np.complex128)
            yield k, c
        return
    raise ShapeMismatch(
        "coeffs must be a {lattice index: coefficient} dict or a SpectralField"
    )


def _weighted_sum(coeffs, weight_fn) -> float:
    total = 0.0
    for k, c in _iter_coeffs(coeffs):
        w = weight_fn(k)
        total += float(np.sum(w * (c.real**2 + c.imag**2)))
    return total


def qp_seminorm(coeffs, P, alpha) -> float:
    """Seminorm (sum_k ||P k||^(2 alpha) |c_k|^2)^(1/2)."""
    alpha = _require_order(alpha, "alpha")
    mat = P.matrix if isinstance(P, ProjectionMatrix) else np.asarray(P, float)

    def weight(k):
        q = k @ mat.T
        return np.sum(q * q, axis=-1) ** alpha

    return float(np.sqrt(_weighted_sum(coeffs, weight)))


def qp_norm(coeffs, P, alpha) -> float:
    """Norm with the constant term: (sum_k (1 + ||P k||^(2 alpha)) |c_k|^2)^(1/2)."""
    alpha = _require_order(alpha, "alpha")
    mat = P.matrix if isinstance(P, ProjectionMatrix) else np.asarray(P, float)

    def weight(k):
        q = k @ mat.T
        return 1.0 + np.sum(q * q, axis=-1) ** alpha

    return float(np.sqrt(_weighted_sum(coeffs, weight)))


def periodic_seminorm(coeffs, beta) -> float:
    """Parent-torus seminorm (sum_k ||k||^(2 beta) |c_k|^2)^(1/2)."""
    beta = _require_order(beta, "beta")

    def weight(k):
        return np.sum(k * k, axis=-1) ** beta

    return float(np.sqrt(_weighted_sum(coeffs, weight)))


def periodic_norm(coeffs, beta) -> float:
    """Parent-torus norm (sum_k (1 + ||k||^(2 beta)) |c_k|^2)^(1/2)."""
    beta = _require_order(beta, "beta")

    def weight(k):
        return 1.0 + np.sum(k * k, axis=-1) ** beta

    return float(np.sqrt(_weighted_sum(coeffs, weight)))


def mixed_seminorm(coeffs, Q, alpha, beta) -> float:
    """Split seminorm (sum_k (||k_I + Q k_II||^(2a) + ||k_II||^(2b)) |c_k|^2)^(1/2).

    Q is the d-by-(n-d) slant matrix; the split point d is taken from its
    row count.
    """
    alpha = _require_order(alpha, "alpha")
    beta = _require_order(beta, "beta")
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    d = Q.shape[0]

    def weight(k):
        if k.shape[-1] != d + Q.shape[1]:
            raise ShapeMismatch(
                f"index length {k.shape[-1]} incompatible with Q shape {Q.shape}"
            )
        w = k[..., :d] + k[..., d:] @ Q.T
        k2 = k[..., d:]
        lead = np.sum(w * w, axis=-1) ** alpha
        trail = np.sum(k2 * k2, axis=-1) ** beta
        return lead + trail

    return float(np.sqrt(_weighted_sum(coeffs, weight)))
