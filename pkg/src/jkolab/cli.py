"""Experiment runner CLI.

Subcommands: forward, reverse, certify, sweep, report.  Configuration is a
flat key = value text format with dotted keys (objective.lambda_mat,
p0.mean, ...); every run gets a short id hashed from its canonicalized
config, and all artifacts are named {run_id}_*.

Exit codes: 0 success / all bounds hold, 1 a certified bound failed,
2 solver or calibration failure, 64 config parse error, 66 missing run data.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import itertools
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import certify as ct
from . import functionals as fn
from . import gaussian as ga
from . import jko
from . import process as pr
from . import quantile as qt
from . import serialize as sz

EXIT_OK = 0
EXIT_BOUND_FAILED = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 64
EXIT_MISSING_DATA = 66

OUTPUT_ROOT_ENV = "JKOLAB_OUTPUT_ROOT"

ALL_CHECKS = ["evi", "forward_rate", "kl_tv", "dpi_chain", "inversion"]

SWEEP_KEYS = {"gamma", "eps", "eps_inv", "seed", "family.m", "objective.dim"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing and canonicalization


def _parse_vector(s: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in s.split()])
    except ValueError as exc:
        raise ConfigError(f"bad vector {s!r}") from exc


def _parse_matrix(s: str, d: int) -> np.ndarray:
    rows = [r for r in s.split(";") if r.strip()]
    try:
        mat = np.array([[float(t) for t in r.split()] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"bad matrix {s!r}") from exc
    if mat.shape == (1, 1):
        return float(mat[0, 0]) * np.eye(d)
    if mat.shape != (d, d):
        raise ConfigError(f"matrix {s!r} is not {d}x{d}")
    return mat


def _fmt_vector(v: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.atleast_1d(v))


def _fmt_matrix(m: np.ndarray) -> str:
    return "; ".join(_fmt_vector(row) for row in np.atleast_2d(m))


@dataclass
class RunConfig:
    spec: fn.ObjectiveSpec
    family: str
    m: int
    p0_kind: str  # "gaussian" | "atoms"
    p0_mean: np.ndarray | None
    p0_cov: np.ndarray | None
    p0_atoms: pr.AtomicMeasure | None
    p0_delta: float
    gamma: float
    eps: list  # length 1 (constant) or explicit schedule
    eps_inv: float
    n_steps: object  # int or the string "auto"
    seed: int
    mode: jko.PerturbMode
    checks: list = field(default_factory=lambda: list(ALL_CHECKS))

    def canonical(self) -> str:
        pot = self.spec.potential
        d: dict[str, str] = {
            "objective.variant": self.spec.variant.value,
            "objective.lambda_mat": _fmt_matrix(pot.lambda_mat),
            "objective.center": _fmt_vector(pot.center),
            "objective.alpha": repr(float(self.spec.alpha)),
            "family": self.family,
            "gamma": repr(float(self.gamma)),
            "eps": " ".join(repr(float(e)) for e in self.eps),
            "eps_inv": repr(float(self.eps_inv)),
            "n": str(self.n_steps),
            "seed": str(self.seed),
            "mode": self.mode.value,
            "checks": " ".join(self.checks),
        }
        if self.family == "grid":
            d["family.m"] = str(self.m)
        if self.p0_kind == "gaussian":
            d["p0.mean"] = _fmt_vector(self.p0_mean)
            d["p0.cov"] = _fmt_matrix(self.p0_cov)
        else:
            at = self.p0_atoms
            d["p0.atoms"] = "; ".join(
                f"{_fmt_vector(loc)} {w!r}" for loc, w in zip(at.locations, at.weights)
            )
            d["p0.delta"] = repr(float(self.p0_delta))
        return "".join(f"{k} = {d[k]}\n" for k in sorted(d))

    def run_id(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def max_eps(self) -> float:
        return max(self.eps)

    def resolve_n(self, p0, q) -> int:
        if self.n_steps != "auto":
            return int(self.n_steps)
        eps = self.max_eps()
        if eps <= 0:
            raise ConfigError("n = auto requires eps > 0")
        return pr.steps_needed(pr.w2_between(p0, q), self.spec.lam, self.gamma, eps)


def _raw_pairs(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_config(text: str) -> RunConfig:
    raw = _raw_pairs(text)

    def take(key, default=None):
        if key in raw:
            return raw.pop(key)
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    try:
        center = _parse_vector(take("objective.center", "0"))
        d = center.size
        lam_mat = _parse_matrix(take("objective.lambda_mat", "1"), d)
        variant = fn.Variant(take("objective.variant", "kl"))
        alpha = float(take("objective.alpha", "1"))
        spec = fn.ObjectiveSpec(fn.QuadraticPotential(lam_mat, center), variant, alpha)

        family = take("family")
        if family not in ("grid", "gaussian"):
            raise ConfigError(f"unknown family {family!r}")
        m = int(take("family.m", "2048" if family == "grid" else "0"))
        if family == "grid" and d != 1:
            raise ConfigError("grid family requires a 1-D objective")

        p0_mean = p0_cov = p0_atoms = None
        p0_delta = 0.0
        if "p0.atoms" in raw:
            if family != "grid":
                raise ConfigError("atomic p0 is only available in the grid family")
            rows = [r for r in take("p0.atoms").split(";") if r.strip()]
            locs, weights = [], []
            for r in rows:
                parts = [float(t) for t in r.split()]
                locs.append(parts[:-1])
                weights.append(parts[-1])
            p0_atoms = pr.AtomicMeasure(np.array(locs), np.array(weights))
            p0_delta = float(take("p0.delta"))
            if p0_delta <= 0:
                raise ConfigError("p0.delta must be positive")
            p0_kind = "atoms"
        else:
            p0_mean = _parse_vector(take("p0.mean"))
            if p0_mean.size != d:
                raise ConfigError("p0.mean dimension does not match the objective")
            p0_cov = _parse_matrix(take("p0.cov", "1"), d)
            p0_kind = "gaussian"

        gamma = float(take("gamma"))
        if not (0 < gamma < 2):
            raise ConfigError("gamma must be in (0, 2)")
        eps = [float(t) for t in take("eps", "0").split()]
        if any(e < 0 for e in eps):
            raise ConfigError("eps entries must be nonnegative")
        eps_inv = float(take("eps_inv", "0"))
        if eps_inv < 0:
            raise ConfigError("eps_inv must be nonnegative")
        n_raw = take("n")
        n_steps = "auto" if n_raw == "auto" else int(n_raw)
        if n_steps != "auto" and n_steps < 0:
            raise ConfigError("n must be nonnegative or 'auto'")
        seed = int(take("seed", "0"))
        mode = jko.PerturbMode(take("mode", "mean_shift"))
        checks_raw = take("checks", "all")
        checks = list(ALL_CHECKS) if checks_raw == "all" else checks_raw.split()
        for c in checks:
            if c not in ALL_CHECKS:
                raise ConfigError(f"unknown check {c!r}")
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    if raw:
        raise ConfigError(f"unrecognized keys: {sorted(raw)}")
    return RunConfig(
        spec=spec, family=family, m=m, p0_kind=p0_kind, p0_mean=p0_mean,
        p0_cov=p0_cov, p0_atoms=p0_atoms, p0_delta=p0_delta, gamma=gamma,
        eps=eps, eps_inv=eps_inv, n_steps=n_steps, seed=seed, mode=mode,
        checks=checks,
    )


def build_p0(cfg: RunConfig):
    if cfg.p0_kind == "atoms":
        smoothed = pr.ou_smooth(cfg.p0_atoms, cfg.p0_delta, cfg.m)
        if not isinstance(smoothed, qt.QuantileGrid):
            # single atom comes back Gaussian; render it on the grid
            sd = math.sqrt(float(smoothed.cov[0, 0]))
            smoothed = qt.from_gaussian(float(smoothed.mean[0]), sd, cfg.m)
        return smoothed
    if cfg.family == "gaussian":
        return ga.GaussianMeasure(cfg.p0_mean, cfg.p0_cov)
    sd = math.sqrt(float(cfg.p0_cov[0, 0]))
    return qt.from_gaussian(float(cfg.p0_mean[0]), sd, cfg.m)


# ---------------------------------------------------------------------------
# Pipeline stages


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(args) -> RunConfig:
    with open(args.config) as f:
        cfg = parse_config(f.read())
    if getattr(args, "seed_override", None) is not None:
        cfg.seed = args.seed_override
    return cfg


def _path(out: str, rid: str, suffix: str) -> str:
    return os.path.join(out, f"{rid}_{suffix}")


def do_forward(cfg: RunConfig, out: str) -> pr.Trajectory:
    p0 = build_p0(cfg)
    q = pr.minimizer_in_family(cfg.spec, cfg.family, cfg.m if cfg.family == "grid" else None)
    n = cfg.resolve_n(p0, q)
    schedule = cfg.eps * n if len(cfg.eps) == 1 else cfg.eps
    if len(schedule) != n:
        raise ConfigError(f"eps schedule length {len(schedule)} != n = {n}")
    traj = pr.run_forward(p0, cfg.spec, cfg.gamma, n, schedule, cfg.mode, cfg.seed)
    rid = cfg.run_id()
    with open(_path(out, rid, "config.txt"), "w") as f:
        f.write(cfg.canonical())
    with open(_path(out, rid, "forward.csv"), "w") as f:
        f.write(pr.forward_csv(traj))
    with open(_path(out, rid, "trajectory.json"), "w") as f:
        f.write(sz.trajectory_to_json(traj))
    return traj


def _load_trajectory(cfg: RunConfig, out: str) -> pr.Trajectory:
    path = _path(out, cfg.run_id(), "trajectory.json")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        return sz.trajectory_from_json(f.read())


def do_reverse(cfg: RunConfig, out: str):
    traj = _load_trajectory(cfg, out)
    rid = cfg.run_id()
    exact = pr.run_reverse_exact(traj)
    with open(_path(out, rid, "reverse_exact.json"), "w") as f:
        f.write(sz.reverse_to_json(exact))
    with open(_path(out, rid, "reverse.csv"), "w") as f:
        f.write(pr.reverse_csv(exact))
    pert = None
    if cfg.eps_inv > 0:
        pert = pr.run_reverse_perturbed(traj, cfg.eps_inv, cfg.mode, cfg.seed)
        with open(_path(out, rid, "reverse_perturbed.json"), "w") as f:
            f.write(sz.reverse_to_json(pert))
        with open(_path(out, rid, "reverse_perturbed.csv"), "w") as f:
            f.write(pr.reverse_csv(pert, exact))
    return exact, pert


def _load_reverse(cfg: RunConfig, out: str, suffix: str) -> pr.ReverseRun:
    path = _path(out, cfg.run_id(), suffix)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        return sz.reverse_from_json(f.read())


def run_checks(cfg: RunConfig, traj: pr.Trajectory, exact_rev, pert_rev,
               checks: list) -> list:
    reports = []
    q = pr.minimizer_in_family(cfg.spec, traj.family,
                               traj.measures[0].m if traj.family == "grid" else None)
    for name in checks:
        if name == "evi":
            reports.extend(ct.check_evi(traj, q))
        elif name == "forward_rate":
            reports.extend(ct.check_forward_rate(traj))
        elif name == "kl_tv":
            if exact_rev is None:
                raise FileNotFoundError("kl_tv check needs the exact reverse run")
            reports.extend(ct.check_kl_tv_guarantee(traj, exact_rev))
        elif name == "dpi_chain":
            if exact_rev is None:
                raise FileNotFoundError("dpi_chain check needs the exact reverse run")
            reports.append(ct.check_dpi_chain(traj, exact_rev))
        elif name == "inversion":
            if cfg.eps_inv <= 0:
                continue
            if exact_rev is None or pert_rev is None:
                raise FileNotFoundError("inversion check needs both reverse runs")
            reports.extend(ct.check_inversion_bound(traj, exact_rev, pert_rev, cfg.eps_inv))
        else:
            raise ConfigError(f"unknown check {name!r}")
    return reports


def do_certify(cfg: RunConfig, out: str, checks=None) -> int:
    traj = _load_trajectory(cfg, out)
    checks = checks or cfg.checks
    exact_rev = pert_rev = None
    rid = cfg.run_id()
    if os.path.exists(_path(out, rid, "reverse_exact.json")):
        exact_rev = _load_reverse(cfg, out, "reverse_exact.json")
    if os.path.exists(_path(out, rid, "reverse_perturbed.json")):
        pert_rev = _load_reverse(cfg, out, "reverse_perturbed.json")
    reports = run_checks(cfg, traj, exact_rev, pert_rev, checks)
    with open(_path(out, rid, "report.csv"), "w") as f:
        f.write(ct.report_lines(reports))
    failed = [r for r in reports if not r.holds]
    for r in failed:
        print(f"FAILED {r.name}: lhs={r.lhs:.6g} rhs={r.rhs:.6g} "
              f"slack={r.slack:.6g}", file=sys.stderr)
    print(f"{rid}: {len(reports) - len(failed)}/{len(reports)} bounds hold")
    return EXIT_BOUND_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands


def cmd_forward(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    traj = do_forward(cfg, out)
    print(f"{cfg.run_id()}: forward run, {traj.n_steps} steps")
    return EXIT_OK


def cmd_reverse(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    do_reverse(cfg, out)
    print(f"{cfg.run_id()}: reverse run"
          + (" (exact + perturbed)" if cfg.eps_inv > 0 else " (exact)"))
    return EXIT_OK


def cmd_certify(args) -> int:
    out = _out_dir(args)
    cfg = _load_config(args)
    checks = args.checks.split(",") if args.checks else None
    return do_certify(cfg, out, checks)


def _sweep_entry(base_text: str, overrides: dict, out: str, seed_override) -> tuple:
    cfg = parse_config(base_text)
    raw = _raw_pairs(cfg.canonical())
    raw.update(overrides)
    cfg = parse_config("".join(f"{k} = {v}\n" for k, v in raw.items()))
    if seed_override is not None:
        cfg.seed = seed_override
    try:
        do_forward(cfg, out)
        do_reverse(cfg, out)
        status = do_certify(cfg, out)
    except (jko.SolverError, jko.CalibrationError) as exc:
        print(f"{cfg.run_id()}: solver failure: {exc}", file=sys.stderr)
        return cfg.run_id(), EXIT_SOLVER
    return cfg.run_id(), status


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    with open(args.config) as f:
        base_text = f.read()
    parse_config(base_text)  # fail fast on a bad template
    axes = []
    for ax in args.axis or []:
        if "=" not in ax:
            raise ConfigError(f"bad axis {ax!r}: expected key=v1,v2,...")
        key, vals = ax.split("=", 1)
        if key not in SWEEP_KEYS:
            raise ConfigError(f"axis key {key!r} not sweepable (allowed: {sorted(SWEEP_KEYS)})")
        axes.append([(key, v) for v in vals.split(",")])
    combos = [dict(c) for c in itertools.product(*axes)] if axes else [{}]
    results = []
    if args.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.workers) as ex:
            futs = [ex.submit(_sweep_entry, base_text, c, out, args.seed_override)
                    for c in combos]
            results = [f.result() for f in futs]
    else:
        results = [_sweep_entry(base_text, c, out, args.seed_override) for c in combos]
    worst = max((st for _, st in results), default=EXIT_OK)
    print(f"sweep: {len(results)} runs, "
          f"{sum(1 for _, st in results if st == EXIT_OK)} fully passing")
    return worst


def cmd_report(args) -> int:
    out = _out_dir(args)
    rids = args.run_ids
    if not rids:
        rids = sorted({f.split("_report.csv")[0] for f in os.listdir(out)
                       if f.endswith("_report.csv")})
    if not rids:
        print("no report files found", file=sys.stderr)
        return EXIT_MISSING_DATA
    lines = ["run_id,name,holds,lhs,rhs,slack,tol,context"]
    n_fail = 0
    for rid in rids:
        path = _path(out, rid, "report.csv")
        if not os.path.exists(path):
            print(f"missing report for run {rid}", file=sys.stderr)
            return EXIT_MISSING_DATA
        with open(path) as f:
            rows = f.read().strip().splitlines()[1:]
        for row in rows:
            lines.append(f"{rid},{row}")
            if row.split(",")[1] == "0":
                n_fail += 1
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out, "report_summary.csv"), "w") as f:
        f.write(summary)
    print(f"{len(rids)} runs, {len(lines) - 1} bound reports, {n_fail} failing")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="jkolab")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed-override", type=int, default=None)

    p = sub.add_parser("forward", help="run the forward process")
    common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("reverse", help="run the reverse process(es)")
    common(p)
    p.set_defaults(func=cmd_reverse)

    p = sub.add_parser("certify", help="run bound checks on stored run data")
    common(p)
    p.add_argument("--checks", default=None,
                   help=f"comma-separated subset of {ALL_CHECKS}")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sweep", help="cross-product of axis values over a template")
    common(p)
    p.add_argument("--axis", action="append",
                   help="key=v1,v2,... (repeatable); keys: " + ", ".join(sorted(SWEEP_KEYS)))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate report files")
    common(p, needs_config=False)
    p.add_argument("run_ids", nargs="*")
    p.set_defaults(func=cmd_report)
    return top


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing run data: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except (jko.SolverError, jko.CalibrationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
