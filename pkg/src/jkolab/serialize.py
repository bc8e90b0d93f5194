"""JSON round-tripping for run data.

Python's json module prints floats with repr, which round-trips doubles
exactly, so re-running a check from serialized data reproduces the verdict
bit-for-bit.
"""

from __future__ import annotations

import json

import numpy as np

from . import functionals as fn
from . import gaussian as ga
from . import process as pr
from . import quantile as qt

__all__ = [
    "spec_to_dict",
    "spec_from_dict",
    "trajectory_to_json",
    "trajectory_from_json",
    "reverse_to_json",
    "reverse_from_json",
]


def spec_to_dict(spec: fn.ObjectiveSpec) -> dict:
    return {
        "variant": spec.variant.value,
        "lambda_mat": spec.potential.lambda_mat.tolist(),
        "center": spec.potential.center.tolist(),
        "alpha": spec.alpha,
    }


def spec_from_dict(d: dict) -> fn.ObjectiveSpec:
    pot = fn.QuadraticPotential(np.array(d["lambda_mat"]), np.array(d["center"]))
    return fn.ObjectiveSpec(pot, fn.Variant(d["variant"]), d["alpha"])


def _measure_to_dict(m) -> dict:
    if isinstance(m, qt.QuantileGrid):
        return {"kind": "grid", "values": m.values.tolist()}
    return {"kind": "gaussian", "mean": m.mean.tolist(), "cov": m.cov.tolist()}


def _measure_from_dict(d):
    if d["kind"] == "grid":
        return qt.QuantileGrid(np.array(d["values"]))
    return ga.GaussianMeasure(np.array(d["mean"]), np.array(d["cov"]))


def _transport_to_dict(t) -> dict:
    if isinstance(t, qt.MonotoneMap1D):
        return {"kind": "monotone1d", "x": t.x.tolist(), "y": t.y.tolist()}
    return {"kind": "affine", "linear": t.linear.tolist(), "offset": t.offset.tolist()}


def _transport_from_dict(d):
    if d["kind"] == "monotone1d":
        return qt.MonotoneMap1D(np.array(d["x"]), np.array(d["y"]))
    return ga.AffineMap(np.array(d["linear"]), np.array(d["offset"]))


def trajectory_to_json(traj: pr.Trajectory) -> str:
    return json.dumps(
        {
            "spec": spec_to_dict(traj.spec),
            "gamma": traj.gamma,
            "family": traj.family,
            "measures": [_measure_to_dict(m) for m in traj.measures],
            "transports": [_transport_to_dict(t) for t in traj.transports],
            "xi_norms": list(traj.xi_norms),
            "solver_iterations": list(traj.solver_iterations),
        },
        indent=1,
    )


def trajectory_from_json(text: str) -> pr.Trajectory:
    d = json.loads(text)
    return pr.Trajectory(
        spec=spec_from_dict(d["spec"]),
        gamma=d["gamma"],
        measures=[_measure_from_dict(m) for m in d["measures"]],
        transports=[_transport_from_dict(t) for t in d["transports"]],
        xi_norms=d["xi_norms"],
        solver_iterations=d["solver_iterations"],
        family=d["family"],
    )


def reverse_to_json(run: pr.ReverseRun) -> str:
    return json.dumps(
        {
            "measures": [_measure_to_dict(m) for m in run.measures],
            "transports": [_transport_to_dict(t) for t in run.transports],
            "residuals": list(run.residuals),
            "exact": run.exact,
        },
        indent=1,
    )


def reverse_from_json(text: str) -> pr.ReverseRun:
    d = json.loads(text)
    return pr.ReverseRun(
        measures=[_measure_from_dict(m) for m in d["measures"]],
        transports=[_transport_from_dict(t) for t in d["transports"]],
        residuals=d["residuals"],
        exact=d["exact"],
    )
