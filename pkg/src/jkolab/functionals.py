"""The objective functional: KL divergence and its entropy-weighted variants.

The target is always q proportional to exp(-V) with a quadratic potential
V(x) = (1/2)(x - mu*)^T Lambda (x - mu*), Lambda SPD.  The objective is

    G(rho) = alpha * H(rho) + E_rho[V] + log Z,

with alpha = 1 (plain KL), alpha = 0 (potential only), or a general
alpha >= 0.  The constant log Z is fixed so the KL variant is a true
divergence (zero at q).  The convexity modulus is lambda_min(Lambda) for
every variant (the entropy contributes convexity >= 0).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import gaussian as ga
from . import quantile as qt

__all__ = [
    "Variant",
    "QuadraticPotential",
    "ObjectiveSpec",
    "lambda_of",
    "rescale_to_unit_lambda",
    "evaluate",
    "global_minimizer",
]


class Variant(enum.Enum):
    KL = "kl"
    POTENTIAL_ONLY = "potential_only"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class QuadraticPotential:
    """V(x) = (1/2)(x - center)^T lambda_mat (x - center), lambda_mat SPD."""

    lambda_mat: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambda_mat, dtype=float))
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if lam.shape != (c.size, c.size):
            raise ValueError("lambda_mat shape does not match center dimension")
        lam = 0.5 * (lam + lam.T)
        if np.linalg.eigvalsh(lam)[0] <= 0:
            raise ValueError("lambda_mat must be strictly positive definite")
        lam.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "lambda_mat", lam)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def log_z(self) -> float:
        """log normalizer of q = e^{-V}/Z: (d/2) log(2 pi) - (1/2) log det Lambda."""
        _, logdet = np.linalg.slogdet(self.lambda_mat)
        return 0.5 * self.dim * math.log(2 * math.pi) - 0.5 * logdet

    def v(self, x: np.ndarray) -> np.ndarray:
        """V at rows of x, shape (n, d) -> (n,)."""
        dx = np.atleast_2d(x) - self.center
        return 0.5 * np.einsum("ij,jk,ik->i", dx, self.lambda_mat, dx)

    def grad_v(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.center) @ self.lambda_mat.T


@dataclass(frozen=True)
class ObjectiveSpec:
    potential: QuadraticPotential
    variant: Variant = Variant.KL
    alpha: float = 1.0

    def __post_init__(self):
        if self.variant is Variant.KL:
            object.__setattr__(self, "alpha", 1.0)
        elif self.variant is Variant.POTENTIAL_ONLY:
            object.__setattr__(self, "alpha", 0.0)
        elif self.alpha < 0:
            raise ValueError("entropy weight must be nonnegative")

    @property
    def entropy_weight(self) -> float:
        return self.alpha

    @property
    def lam(self) -> float:
        return lambda_of(self)

    @property
    def dim(self) -> int:
        return self.potential.dim


def lambda_of(spec: ObjectiveSpec) -> float:
    """Convexity modulus: the smallest eigenvalue of Lambda."""
    return float(np.linalg.eigvalsh(spec.potential.lambda_mat)[0])


def rescale_to_unit_lambda(spec: ObjectiveSpec) -> tuple[ObjectiveSpec, float]:
    """Rescale x -> x/a so the convexity modulus is at most 1.

    V(ax) is (a^2 lambda)-convex, so a = min(1, 1/sqrt(lambda)) gives
    lambda' = a^2 lambda <= 1; a no-op (a = 1) when lambda <= 1 already.
    """
    lam = lambda_of(spec)
    a = min(1.0, 1.0 / math.sqrt(lam))
    if a == 1.0:
        return spec, 1.0
    pot = spec.potential
    new_pot = QuadraticPotential(a * a * pot.lambda_mat, pot.center / a)
    return ObjectiveSpec(new_pot, spec.variant, spec.alpha), a


def evaluate(spec: ObjectiveSpec, measure) -> float:
    """G(measure) = alpha * H + E[V] + log Z, for either representation."""
    pot = spec.potential
    if isinstance(measure, qt.QuantileGrid):
        if pot.dim != 1:
            raise ValueError("grid measures require a 1-D objective")
        e_v = float(np.mean(pot.v(measure.values[:, None])))
        h = qt.entropy(measure) if spec.alpha > 0 else 0.0
        return spec.alpha * h + e_v + pot.log_z
    if isinstance(measure, ga.GaussianMeasure):
        if spec.alpha > 0:
            if not measure.is_nondegenerate():
                raise ValueError("entropy-bearing objective is +inf at a degenerate measure")
            _, logdet = np.linalg.slogdet(measure.cov)
            h = -0.5 * measure.dim * math.log(2 * math.pi * math.e) - 0.5 * logdet
        else:
            h = 0.0
        dm = measure.mean - pot.center
        e_v = 0.5 * (np.trace(pot.lambda_mat @ measure.cov) + dm @ pot.lambda_mat @ dm)
        return float(spec.alpha * h + e_v + pot.log_z)
    raise TypeError(f"unsupported measure type {type(measure)!r}")


def global_minimizer(spec: ObjectiveSpec) -> ga.GaussianMeasure:
    """The unique global minimizer of G.

    KL: N(mu*, Lambda^{-1}); weighted: N(mu*, alpha Lambda^{-1});
    potential-only: the point mass at mu* (zero covariance), valid only as a
    W2 endpoint.
    """
    pot = spec.potential
    if spec.variant is Variant.POTENTIAL_ONLY:
        return ga.GaussianMeasure(pot.center, np.zeros((pot.dim, pot.dim)))
    lam_inv = np.linalg.inv(pot.lambda_mat)
    lam_inv = 0.5 * (lam_inv + lam_inv.T)
    return ga.GaussianMeasure(pot.center, spec.alpha * lam_inv)


def minimum_value(spec: ObjectiveSpec) -> float:
    """G at the global minimizer (0 for the KL variant)."""
    if spec.variant is Variant.POTENTIAL_ONLY:
        return spec.potential.log_z
    return evaluate(spec, global_minimizer(spec))
