"""File formats: versioned CSV for trajectories, grids and benchmark
tables, JSON for parameters, fit results and scenarios.

Every CSV starts with the schema comment line ``# tordiff-v1``.  Floats
are written with ``repr`` so that parse(emit(x)) round-trips exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .bench import ReCell, ReTable, Scenario
from .diffusion import WNParams
from .exceptions import ConfigError
from .fpe import GridDensity
from .inference import FitResult
from .tpd import Trajectory

CSV_HEADER = "# tordiff-v1"

__all__ = [
    "trajectory_to_csv",
    "trajectory_from_csv",
    "grid_to_csv",
    "grid_from_csv",
    "params_to_dict",
    "params_from_dict",
    "fit_result_to_json",
    "fit_result_from_json",
    "scenario_to_json",
    "scenario_from_json",
    "retable_to_csv",
    "retable_from_csv",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def _data_lines(text: str):
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            yield line


def _check_header(text: str, what: str):
    if not text.lstrip().startswith(CSV_HEADER):
        raise ConfigError(f"{what}: missing '{CSV_HEADER}' header line")


# --- trajectories -----------------------------------------------------------


def trajectory_to_csv(traj: Trajectory) -> str:
    lines = [CSV_HEADER, f"# delta={_fmt(traj.delta)}"]
    lines.append(",".join(f"theta{j + 1}" for j in range(traj.p)))
    for row in traj.points:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def trajectory_from_csv(text: str) -> Trajectory:
    _check_header(text, "trajectory CSV")
    delta = None
    for line in text.splitlines():
        if line.startswith("# delta="):
            delta = float(line.split("=", 1)[1])
    if delta is None:
        raise ConfigError("trajectory CSV: missing '# delta=' line")
    rows = []
    for line in _data_lines(text):
        if line.startswith("theta"):
            continue
        rows.append([float(v) for v in line.split(",")])
    return Trajectory(delta=delta, points=np.array(rows))


# --- grid densities ---------------------------------------------------------


def grid_to_csv(grid: GridDensity) -> str:
    p = grid.p
    mx = grid.shape[0]
    my = grid.shape[1] if p == 2 else 1
    lines = [CSV_HEADER, f"{p},{mx},{my}"]
    vals = np.atleast_2d(grid.values) if p == 2 else grid.values[:, None]
    for row in vals:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def grid_from_csv(text: str) -> GridDensity:
    _check_header(text, "grid CSV")
    lines = list(_data_lines(text))
    p, mx, my = (int(v) for v in lines[0].split(","))
    vals = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if vals.shape != (mx, my):
        raise ConfigError(
            f"grid CSV: expected {mx}x{my} values, got {vals.shape}"
        )
    return GridDensity(vals[:, 0] if p == 1 else vals)


# --- parameters and fit results --------------------------------------------


def params_to_dict(params: WNParams) -> dict:
    return {
        "p": params.p,
        "alpha": [float(a) for a in params.alpha],
        "mu": [float(m) for m in params.mu],
        "sigma": [float(s) for s in params.sigma],
    }


def params_from_dict(d: dict) -> WNParams:
    return WNParams(alpha=d["alpha"], mu=d["mu"], sigma=d["sigma"])


def fit_result_to_json(res: FitResult, kind=None) -> str:
    doc = {
        "schema": "tordiff-fit-v1",
        "params": params_to_dict(res.params),
        "loglik": float(res.loglik),
        "converged": bool(res.converged),
        "evaluations": int(res.evaluations),
    }
    if kind is not None:
        doc["kind"] = str(kind)
    return json.dumps(doc, indent=2) + "\n"


def fit_result_from_json(text: str) -> FitResult:
    doc = json.loads(text)
    return FitResult(
        params=params_from_dict(doc["params"]),
        loglik=doc["loglik"],
        converged=doc["converged"],
        evaluations=doc["evaluations"],
    )


# --- scenarios and RE tables ------------------------------------------------


def scenario_to_json(scn: Scenario) -> str:
    return json.dumps(
        {
            "schema": "tordiff-scenario-v1",
            "params": params_to_dict(scn.params),
            "delta_list": list(scn.delta_list),
            "n_obs": scn.n_obs,
            "replicates": scn.replicates,
            "kinds": list(scn.kinds),
            "seed": scn.seed,
        },
        indent=2,
    ) + "\n"


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    if doc.get("schema") != "tordiff-scenario-v1":
        raise ConfigError("scenario JSON: unknown or missing schema")
    return Scenario(
        params=params_from_dict(doc["params"]),
        delta_list=tuple(doc["delta_list"]),
        n_obs=int(doc["n_obs"]),
        replicates=int(doc["replicates"]),
        kinds=tuple(doc["kinds"]),
        seed=int(doc["seed"]),
    )


def retable_to_csv(table: ReTable) -> str:
    mse_cols = ",".join(f"mse_{n}" for n in table.component_names)
    lines = [CSV_HEADER, f"delta,kind,re,failures,flagged,{mse_cols}"]
    for c in table.cells:
        mse = ",".join(_fmt(v) for v in c.mse)
        lines.append(
            f"{_fmt(c.delta)},{c.kind},{_fmt(c.re)},{c.failures},"
            f"{int(c.flagged)},{mse}"
        )
    return "\n".join(lines) + "\n"


def retable_from_csv(text: str) -> ReTable:
    _check_header(text, "RE table CSV")
    lines = list(_data_lines(text))
    header = lines[0].split(",")
    names = tuple(h[4:] for h in header if h.startswith("mse_"))
    cells = []
    for line in lines[1:]:
        parts = line.split(",")
        cells.append(
            ReCell(
                delta=float(parts[0]),
                kind=parts[1],
                re=float(parts[2]),
                failures=int(parts[3]),
                flagged=bool(int(parts[4])),
                mse=tuple(float(v) for v in parts[5:]),
            )
        )
    return ReTable(component_names=names, cells=tuple(cells))
