"""Closed-form Bures-Wasserstein geometry on multivariate Gaussians.

Everything here is exact linear algebra: W2 distance, OT maps (SPD affine
maps), KL divergence, subgradient fields of the objective, and L2 norms of
affine vector fields under a Gaussian measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianMeasure",
    "AffineMap",
    "spd_sqrt",
    "w2_bw",
    "ot_map_bw",
    "kl_gaussian",
    "kl_between",
    "subgradient_field",
    "field_l2_norm",
    "pushforward_affine",
    "compose_affine",
    "invert_affine",
]

_SYM_RTOL = 1e-12
_EIG_CLAMP = 1e-14
_POSDEF_MIN = 1e-10


@dataclass(frozen=True)
class GaussianMeasure:
    """Mean vector and symmetric positive semi-definite covariance.

    Semi-definite covariances are allowed (they arise as degenerate W2
    endpoints, e.g. the minimizer of a potential-only objective); strictly
    positive definite covariance is required for entropy-bearing operations.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean dimension")
        asym = np.max(np.abs(cov - cov.T))
        scale = max(np.max(np.abs(cov)), 1.0)
        if asym > _SYM_RTOL * scale * 100:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        evals = np.linalg.eigvalsh(cov)
        if evals.size and evals[0] < -1e-10 * scale:
            raise ValueError("covariance has a negative eigenvalue")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_nondegenerate(self) -> bool:
        return float(np.linalg.eigvalsh(self.cov)[0]) >= _POSDEF_MIN

    def require_nondegenerate(self):
        if not self.is_nondegenerate():
            raise ValueError("operation requires a strictly positive definite covariance")


@dataclass(frozen=True)
class AffineMap:
    """x -> A x + b.  Also used for affine vector fields x -> J x + c."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.linear, dtype=float))
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if a.shape != (b.size, b.size):
            raise ValueError("linear part shape does not match offset dimension")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "linear", a)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self) -> int:
        return self.offset.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.linear.T + self.offset

    @staticmethod
    def identity(d: int) -> "AffineMap":
        return AffineMap(np.eye(d), np.zeros(d))


def spd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition.

    Eigenvalues below the 1e-14 roundoff floor are treated as exact zeros,
    which keeps singular inputs singular instead of leaking sqrt(1e-14)
    into every degenerate distance.
    """
    mat = 0.5 * (mat + mat.T)
    evals, vecs = np.linalg.eigh(mat)
    evals = np.where(evals < _EIG_CLAMP, 0.0, evals)
    return (vecs * np.sqrt(evals)) @ vecs.T


def _spd_inv(mat: np.ndarray) -> np.ndarray:
    mat = 0.5 * (mat + mat.T)
    evals, vecs = np.linalg.eigh(mat)
    if evals[0] < _POSDEF_MIN:
        raise ValueError("matrix is singular (smallest eigenvalue below 1e-10)")
    return (vecs / evals) @ vecs.T


def _check_dims(g1: GaussianMeasure, g2: GaussianMeasure):
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")


def w2_bw(g1: GaussianMeasure, g2: GaussianMeasure) -> float:
    """Bures-Wasserstein distance; valid for singular covariances too."""
    _check_dims(g1, g2)
    dm = g1.mean - g2.mean
    s2_half = spd_sqrt(g2.cov)
    cross = spd_sqrt(s2_half @ g1.cov @ s2_half)
    val = float(dm @ dm + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(val, 0.0)))


def bw_linear(cov1: np.ndarray, cov2: np.ndarray) -> np.ndarray:
    """Linear part of the OT map from N(0, cov1) to N(0, cov2)."""
    s1_half = spd_sqrt(cov1)
    s1_half_inv = _spd_inv(s1_half)
    inner = spd_sqrt(s1_half @ cov2 @ s1_half)
    return s1_half_inv @ inner @ s1_half_inv


def ot_map_bw(g1: GaussianMeasure, g2: GaussianMeasure) -> AffineMap:
    """OT map from g1 to g2: x -> A(x - m1) + m2 with SPD A."""
    _check_dims(g1, g2)
    g1.require_nondegenerate()
    a = bw_linear(g1.cov, g2.cov)
    return AffineMap(a, g2.mean - a @ g1.mean)


def pushforward_affine(g: GaussianMeasure, t: AffineMap) -> GaussianMeasure:
    """T#g = N(A m + b, A Sigma A^T), exact."""
    return GaussianMeasure(t.linear @ g.mean + t.offset, t.linear @ g.cov @ t.linear.T)


def compose_affine(outer: AffineMap, inner: AffineMap) -> AffineMap:
    """outer(inner(x))."""
    return AffineMap(outer.linear @ inner.linear, outer.linear @ inner.offset + outer.offset)


def invert_affine(t: AffineMap) -> AffineMap:
    a_inv = np.linalg.inv(t.linear)
    return AffineMap(a_inv, -a_inv @ t.offset)


def kl_between(g1: GaussianMeasure, g2: GaussianMeasure) -> float:
    """KL(g1 || g2) between two nondegenerate Gaussians, closed form."""
    _check_dims(g1, g2)
    g1.require_nondegenerate()
    g2.require_nondegenerate()
    prec2 = _spd_inv(g2.cov)
    dm = g1.mean - g2.mean
    _, logdet1 = np.linalg.slogdet(g1.cov)
    _, logdet2 = np.linalg.slogdet(g2.cov)
    val = 0.5 * (np.trace(prec2 @ g1.cov) + dm @ prec2 @ dm - g1.dim + logdet2 - logdet1)
    return max(float(val), 0.0)


def kl_gaussian(g: GaussianMeasure, spec) -> float:
    """KL(g || q) against the target q = N(mu*, Lambda^{-1}) of `spec`."""
    pot = spec.potential
    target = GaussianMeasure(pot.center, _spd_inv(pot.lambda_mat))
    return kl_between(g, target)


def subgradient_field(g: GaussianMeasure, spec) -> AffineMap:
    """The W2 gradient of the objective at g: grad V + alpha * grad log rho.

    For Gaussian rho this is the affine field
    x -> Lambda (x - mu*) - alpha Sigma^{-1} (x - m).
    """
    g.require_nondegenerate()
    pot = spec.potential
    alpha = spec.entropy_weight
    prec = _spd_inv(g.cov)
    j = pot.lambda_mat - alpha * prec
    c = -pot.lambda_mat @ pot.center + alpha * prec @ g.mean
    return AffineMap(j, c)


def field_l2_norm(fld: AffineMap, g: GaussianMeasure) -> float:
    """L2(g) norm of an affine field: sqrt(||J m + c||^2 + tr(J Sigma J^T))."""
    if fld.dim != g.dim:
        raise ValueError("field and measure dimensions differ")
    v = fld.linear @ g.mean + fld.offset
    val = float(v @ v + np.trace(fld.linear @ g.cov @ fld.linear.T))
    return float(np.sqrt(max(val, 0.0)))
