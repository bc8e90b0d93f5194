"""Forward and reverse process orchestration.

Runs the N-step forward chain of proximal steps (with optional calibrated
first-order error per step), the exact reverse chain through inverted
transports, the computed reverse chain with calibrated inversion error, OU
smoothing of atomic measures, and the bookkeeping the certifier consumes:
Lipschitz/K estimates, step-count formula, CSV and JSON serialization.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from . import functionals as fn
from . import gaussian as ga
from . import jko
from . import quantile as qt

__all__ = [
    "Trajectory",
    "ReverseRun",
    "AtomicMeasure",
    "steps_needed",
    "run_forward",
    "run_reverse_exact",
    "run_reverse_perturbed",
    "ou_smooth",
    "estimate_K",
    "w2_between",
    "kl_between_measures",
    "w2_grid_to_atoms",
    "w2_sq_smoothed_to_atoms",
]


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Trajectory:
    """Forward-process record: p_0..p_N, transports T_1..T_N, per-step ||xi||."""

    spec: fn.ObjectiveSpec
    gamma: float
    measures: list
    transports: list
    xi_norms: list
    solver_iterations: list
    family: str  # "grid" | "gaussian"

    @property
    def n_steps(self) -> int:
        return len(self.transports)


@dataclass(frozen=True)
class ReverseRun:
    """Reverse-process record, indexed 0..N (measures[n] is q_n or q~_n).

    residuals[n-1] is ||T_n o S_n - Id|| under the measure entering S_n.
    """

    measures: list
    transports: list
    residuals: list
    exact: bool


@dataclass(frozen=True)
class AtomicMeasure:
    """Finitely many atoms with positive weights summing to one."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if loc.shape[0] != w.size:
            raise ValueError("number of locations and weights differ")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    def second_moment(self) -> float:
        return float(np.sum(self.weights * np.sum(self.locations ** 2, axis=1)))


# ---------------------------------------------------------------------------
# Generic helpers across the two families


def w2_between(a, b) -> float:
    if isinstance(a, qt.QuantileGrid):
        return qt.w2(a, b)
    return ga.w2_bw(a, b)


def kl_between_measures(a, b) -> float:
    if isinstance(a, qt.QuantileGrid):
        return qt.grid_kl(a, b)
    return ga.kl_between(a, b)


def transport_lipschitz(t) -> float:
    if isinstance(t, qt.MonotoneMap1D):
        return qt.lipschitz(t)
    return float(np.linalg.norm(t.linear, 2))


def invert_transport(t):
    if isinstance(t, qt.MonotoneMap1D):
        return qt.invert_map(t)
    return ga.invert_affine(t)


def push(measure, t):
    if isinstance(measure, qt.QuantileGrid):
        return qt.pushforward(measure, t)
    return ga.pushforward_affine(measure, t)


def minimizer_in_family(spec: fn.ObjectiveSpec, family: str, m: int | None = None):
    """Global minimizer of G rendered in the requested family."""
    g = fn.global_minimizer(spec)
    if family == "gaussian":
        return g
    if g.dim != 1:
        raise ValueError("grid family requires a 1-D objective")
    sd = math.sqrt(float(g.cov[0, 0]))
    return qt.from_gaussian(float(g.mean[0]), sd, m)


# ---------------------------------------------------------------------------
# Step-count formula


def steps_needed(w2_p0_q: float, lam: float, gamma: float, eps: float) -> int:
    """N = ceil((8/(gamma lambda)) (log W2(p0,q) + log(lambda/eps))), clamped >= 1."""
    if w2_p0_q <= 0 or lam <= 0 or gamma <= 0 or eps <= 0:
        raise ValueError("all arguments must be positive")
    n = math.ceil(8.0 / (gamma * lam) * (math.log(w2_p0_q) + math.log(lam / eps)))
    return max(1, n)


# ---------------------------------------------------------------------------
# Forward process


def run_forward(
    p0,
    spec: fn.ObjectiveSpec,
    gamma: float,
    n_steps: int,
    eps_schedule=None,
    mode: jko.PerturbMode = jko.PerturbMode.MEAN_SHIFT,
    seed: int = 0,
    tol: float | None = None,
) -> Trajectory:
    """Run N proximal steps from p0; schedule entries > 0 get calibrated xi.

    The schedule may be None (all exact), a scalar, or a length-N sequence.
    The seed only feeds perturbation placement (bump centers), so exact runs
    are seed-independent.
    """
    family = "grid" if isinstance(p0, qt.QuantileGrid) else "gaussian"
    if eps_schedule is None:
        schedule = [0.0] * n_steps
    elif np.isscalar(eps_schedule):
        schedule = [float(eps_schedule)] * n_steps
    else:
        schedule = [float(e) for e in eps_schedule]
        if len(schedule) != n_steps:
            raise ValueError("eps schedule length must equal the number of steps")

    rng = np.random.default_rng(seed)
    measures = [p0]
    transports, xi_norms, iters = [], [], []
    current = p0
    for n, eps in enumerate(schedule):
        try:
            result = jko.jko_step(current, spec, gamma, tol)
            if eps > 0:
                kwargs = {}
                if mode is jko.PerturbMode.GRID_BUMP:
                    lo, hi = result.transport.x[0], result.transport.x[-1]
                    kwargs["bump_center"] = float(rng.uniform(lo + 0.2 * (hi - lo),
                                                              hi - 0.2 * (hi - lo)))
                result = jko.perturb_step(current, result, spec, gamma, eps, mode, **kwargs)
        except (jko.SolverError, jko.CalibrationError) as exc:
            raise type(exc)(f"forward step {n + 1}: {exc}") from exc
        measures.append(result.next_measure)
        transports.append(result.transport)
        xi_norms.append(result.xi_norm)
        iters.append(result.solver_iterations)
        current = result.next_measure
    return Trajectory(
        spec=spec,
        gamma=gamma,
        measures=measures,
        transports=transports,
        xi_norms=xi_norms,
        solver_iterations=iters,
        family=family,
    )


# ---------------------------------------------------------------------------
# Reverse processes


def _inversion_residual(t_forward, s_reverse, measure) -> float:
    """||T o S - Id|| under `measure` (the input of S)."""
    if isinstance(measure, qt.QuantileGrid):
        x = measure.values
        r = t_forward(s_reverse(x)) - x
        return float(np.sqrt(np.mean(r * r)))
    comp = ga.compose_affine(t_forward, s_reverse)
    d = comp.dim
    fld = ga.AffineMap(comp.linear - np.eye(d), comp.offset)
    return ga.field_l2_norm(fld, measure)


def run_reverse_exact(traj: Trajectory) -> ReverseRun:
    """Pull the global minimizer back through the inverted forward transports."""
    n = traj.n_steps
    m = traj.measures[0].m if traj.family == "grid" else None
    q_top = minimizer_in_family(traj.spec, traj.family, m)
    measures = [None] * (n + 1)
    measures[n] = q_top
    transports = [None] * n
    residuals = [0.0] * n
    for k in range(n, 0, -1):
        s = invert_transport(traj.transports[k - 1])
        transports[k - 1] = s
        residuals[k - 1] = _inversion_residual(traj.transports[k - 1], s, measures[k])
        measures[k - 1] = push(measures[k], s)
    return ReverseRun(measures=measures, transports=transports,
                      residuals=residuals, exact=True)


def _perturb_reverse_map(s_exact, mode: jko.PerturbMode, a: float, *,
                         center: float, bump_center: float, bump_width: float):
    if isinstance(s_exact, ga.AffineMap):
        d = s_exact.dim
        if mode is jko.PerturbMode.MEAN_SHIFT:
            return ga.AffineMap(s_exact.linear, s_exact.offset + a * np.eye(d)[0])
        if mode is jko.PerturbMode.DILATION:
            c = np.full(d, center)
            return ga.AffineMap((1 + a) * s_exact.linear,
                                (1 + a) * (s_exact.offset - c) + c)
        raise ValueError(f"mode {mode} is not available in the Gaussian family")
    if mode is jko.PerturbMode.MEAN_SHIFT:
        return qt.MonotoneMap1D(s_exact.x, s_exact.y + a)
    if mode is jko.PerturbMode.DILATION:
        return qt.MonotoneMap1D(s_exact.x, (1 + a) * (s_exact.y - center) + center)
    if mode is jko.PerturbMode.GRID_BUMP:
        return qt.MonotoneMap1D(
            s_exact.x, s_exact.y + a * jko._bump((s_exact.x - bump_center) / bump_width)
        )
    raise ValueError(f"unknown perturbation mode {mode}")


def run_reverse_perturbed(
    traj: Trajectory,
    eps_inv: float,
    mode: jko.PerturbMode = jko.PerturbMode.MEAN_SHIFT,
    seed: int = 0,
) -> ReverseRun:
    """Reverse chain with per-step inversion error calibrated to eps_inv.

    Calibration runs n = N down to 1: the measure q~_n entering S_n is
    already materialized, so the residual norm ||T_n o S_n - Id||_{q~_n} is
    well defined before S_n is fixed.  eps_inv = 0 reproduces the exact
    reverse run.
    """
    if eps_inv < 0:
        raise ValueError("eps_inv must be nonnegative")
    if eps_inv == 0:
        return run_reverse_exact(traj)
    n = traj.n_steps
    m = traj.measures[0].m if traj.family == "grid" else None
    rng = np.random.default_rng(seed)
    measures = [None] * (n + 1)
    measures[n] = minimizer_in_family(traj.spec, traj.family, m)
    transports = [None] * n
    residuals = [0.0] * n
    for k in range(n, 0, -1):
        t_fwd = traj.transports[k - 1]
        s_exact = invert_transport(t_fwd)
        cur = measures[k]
        if isinstance(s_exact, qt.MonotoneMap1D):
            center = float(np.mean(s_exact.y))
            lo, hi = s_exact.x[0], s_exact.x[-1]
            bump_center = float(rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo)))
            bump_width = 0.25 * (hi - lo)
        else:
            center = float(np.mean(s_exact.offset))
            bump_center = bump_width = 0.0

        def resid(a: float) -> float:
            s = _perturb_reverse_map(s_exact, mode, a, center=center,
                                     bump_center=bump_center, bump_width=bump_width)
            return _inversion_residual(t_fwd, s, cur)

        a_hi = 1e-3
        while resid(a_hi) < eps_inv:
            a_hi *= 2.0
            if a_hi > 1e9:
                raise jko.CalibrationError(f"reverse step {k}: cannot reach eps_inv")
        a_star = brentq(lambda a: resid(a) - eps_inv, 0.0, a_hi,
                        xtol=1e-15, rtol=8.9e-16)
        s = _perturb_reverse_map(s_exact, mode, a_star, center=center,
                                 bump_center=bump_center, bump_width=bump_width)
        r = _inversion_residual(t_fwd, s, cur)
        if abs(r - eps_inv) > 0.01 * eps_inv:
            raise jko.CalibrationError(
                f"reverse step {k}: residual {r} misses eps_inv={eps_inv} by more than 1%"
            )
        transports[k - 1] = s
        residuals[k - 1] = r
        measures[k - 1] = push(cur, s)
    return ReverseRun(measures=measures, transports=transports,
                      residuals=residuals, exact=False)


# ---------------------------------------------------------------------------
# OU smoothing of atomic measures


def _mixture_cdf(x, centers, weights, sd):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.sum(weights[None, :] * ndtr((x[:, None] - centers[None, :]) / sd), axis=1)


def _mixture_quantiles(u, centers, weights, sd, xtol=1e-12):
    """Invert the Gaussian-mixture CDF by bisection (vectorized over u)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    pad = sd * (np.max(np.abs(ndtri(np.clip(u, 1e-300, 1 - 1e-16)))) + 2.0) + 1.0
    lo = np.full(u.shape, np.min(centers) - pad)
    hi = np.full(u.shape, np.max(centers) + pad)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = _mixture_cdf(mid, centers, weights, sd) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < xtol:
            break
    return 0.5 * (lo + hi)


def ou_smooth(p: AtomicMeasure, delta: float, m: int = 4096):
    """Marginal of the OU process at time delta started from the atoms.

    This is the mixture of N(e^{-delta} x_i, 1 - e^{-2 delta}).  Multi-atom
    measures must be 1-D and come back as a quantile grid (mixture CDF
    inverted by bisection); a single atom in any dimension comes back as the
    exact Gaussian.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    shrink = math.exp(-delta)
    var = 1.0 - math.exp(-2.0 * delta)
    if p.n_atoms == 1:
        x0 = p.locations[0]
        return ga.GaussianMeasure(shrink * x0, var * np.eye(p.dim))
    if p.dim != 1:
        raise ValueError("multi-atom OU smoothing is 1-D only")
    centers = shrink * p.locations[:, 0]
    vals = _mixture_quantiles(qt.midpoints(m), centers, p.weights, math.sqrt(var))
    return qt.QuantileGrid(vals)


# ---------------------------------------------------------------------------
# W2 against atomic measures (1-D)


def _atom_breaks(p: AtomicMeasure):
    order = np.argsort(p.locations[:, 0])
    locs = p.locations[order, 0]
    cum = np.cumsum(p.weights[order])
    cum[-1] = 1.0
    return locs, cum


def w2_grid_to_atoms(grid: qt.QuantileGrid, p: AtomicMeasure) -> float:
    """W2 between a grid measure and a 1-D atomic measure.

    Integrates (Q_grid(u) - Q_atom(u))^2 exactly over the piecewise-linear /
    piecewise-constant partition of (0, 1).
    """
    if p.dim != 1:
        raise ValueError("atomic W2 comparison is 1-D only")
    locs, cum = _atom_breaks(p)
    u_knots = grid.u
    breaks = np.unique(np.concatenate([[0.0], u_knots, cum[:-1], [1.0]]))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a < 1e-300:
            continue
        umid = 0.5 * (a + b)
        atom = locs[np.searchsorted(cum, umid)]
        # local linear form of the grid quantile on (a, b)
        j = np.clip(np.searchsorted(u_knots, umid) - 1, 0, grid.m - 2)
        slope = (grid.values[j + 1] - grid.values[j]) / (u_knots[j + 1] - u_knots[j])
        q_a = grid.values[j] + slope * (a - u_knots[j]) - atom
        q_b = grid.values[j] + slope * (b - u_knots[j]) - atom
        total += (b - a) * (q_a * q_a + q_a * q_b + q_b * q_b) / 3.0
    return float(np.sqrt(max(total, 0.0)))


def _gauss_partial_sq(mu: float, sd: float, a: float, b: float, c: float) -> float:
    """int_a^b (x - c)^2 N(x; mu, sd^2) dx, closed form."""
    ta, tb = (a - mu) / sd, (b - mu) / sd
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    d_cdf = ndtr(tb) - ndtr(ta)
    d_phi = phi(ta) - phi(tb)
    int_t2 = d_cdf + ta * phi(ta) - tb * phi(tb)
    mc = mu - c
    return float(mc * mc * d_cdf + 2 * mc * sd * d_phi + sd * sd * int_t2)


def w2_sq_smoothed_to_atoms(p: AtomicMeasure, delta: float) -> float:
    """Exact W2^2 between the OU-smoothed measure and its 1-D atomic source.

    Partitions the real line at the mixture quantiles of the cumulative atom
    weights; within each cell the atomic quantile is constant and the
    squared displacement integrates in closed form against each mixture
    component (Gaussian partial moments).
    """
    if p.dim != 1:
        raise ValueError("exact smoothing distance is 1-D only")
    shrink = math.exp(-delta)
    sd = math.sqrt(1.0 - math.exp(-2.0 * delta))
    centers = shrink * p.locations[:, 0]
    locs, cum = _atom_breaks(p)
    cuts = _mixture_quantiles(cum[:-1], centers, p.weights, sd) if len(locs) > 1 else np.array([])
    edges = np.concatenate([[-np.inf], cuts, [np.inf]])
    big = np.max(np.abs(centers)) + 40 * sd + 40  # effective support cutoff
    edges = np.clip(edges, -big, big)
    total = 0.0
    for i, atom in enumerate(locs):
        a, b = edges[i], edges[i + 1]
        for mu_j, w_j in zip(centers, p.weights):
            total += w_j * _gauss_partial_sq(mu_j, sd, a, b, atom)
    return float(max(total, 0.0))


# ---------------------------------------------------------------------------
# Lipschitz / K estimation


def estimate_K(traj: Trajectory) -> float:
    """K = max_n log Lip(T_n^{-1}) / gamma, floored at zero."""
    if not traj.transports:
        raise ValueError("trajectory has no transports")
    worst = max(transport_lipschitz(invert_transport(t)) for t in traj.transports)
    return max(0.0, math.log(worst) / traj.gamma)


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(x) -> str:
    return "%.17g" % x


def forward_csv(traj: Trajectory) -> str:
    """Rows n = 0..N; step columns are empty on the n = 0 row."""
    q = minimizer_in_family(traj.spec, traj.family,
                            traj.measures[0].m if traj.family == "grid" else None)
    buf = io.StringIO()
    buf.write("n,w2_to_q,G_value,xi_norm,lipschitz_Tinv,solver_iterations\n")
    for n, meas in enumerate(traj.measures):
        w = w2_between(meas, q)
        g = fn.evaluate(traj.spec, meas)
        if n == 0:
            buf.write("0,%s,%s,,,\n" % (_fmt(w), _fmt(g)))
        else:
            lip = transport_lipschitz(invert_transport(traj.transports[n - 1]))
            buf.write("%d,%s,%s,%s,%s,%d\n" % (
                n, _fmt(w), _fmt(g), _fmt(traj.xi_norms[n - 1]), _fmt(lip),
                traj.solver_iterations[n - 1]))
    return buf.getvalue()


def reverse_csv(run: ReverseRun, exact_run: ReverseRun | None = None) -> str:
    """Rows n = N..0 with the per-step residual and distance to the exact chain."""
    buf = io.StringIO()
    buf.write("n,residual,w2_qtilde_to_q_exact\n")
    n_steps = len(run.transports)
    for n in range(n_steps, -1, -1):
        resid = _fmt(run.residuals[n - 1]) if n >= 1 else ""
        if exact_run is not None:
            dist = _fmt(w2_between(run.measures[n], exact_run.measures[n]))
        else:
            dist = _fmt(0.0)
        buf.write("%d,%s,%s\n" % (n, resid, dist))
    return buf.getvalue()
