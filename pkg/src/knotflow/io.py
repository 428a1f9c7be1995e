"""Curve files, run configuration and output writers."""
from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .energies import make_params
from .errors import CurveFormatError, ParameterError
from .flow import FlowConfig, InnerSolverConfig, MonitorConfig, TrajectorySample
from .geometry import ClosedCurve
from .sobolev import TotalEnergyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# -- curves -------------------------------------------------------------------


def curve_from_dict(data) -> ClosedCurve:
    if not isinstance(data, dict) or "nodes" not in data:
        raise CurveFormatError('curve file must be an object with a "nodes" array')
    try:
        nodes = np.array(data["nodes"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise CurveFormatError(f"nodes are not a numeric array: {exc}") from None
    if "dim" in data and nodes.ndim == 2 and nodes.shape[1] != data["dim"]:
        raise CurveFormatError(f"dim = {data['dim']} does not match node width {nodes.shape[1]}")
    return ClosedCurve(nodes)


def read_curve(path) -> ClosedCurve:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CurveFormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return curve_from_dict(data)


def curve_to_dict(curve: ClosedCurve) -> dict:
    return {"dim": curve.dim, "nodes": curve.nodes.tolist()}


def write_curve(curve: ClosedCurve, path) -> None:
    Path(path).write_text(json.dumps(curve_to_dict(curve)) + "\n")


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    energy: TotalEnergyConfig
    flow: FlowConfig = field(default_factory=FlowConfig)
    sample_stride: int = 10
    seed: int = 0
    allow_scale_invariant: bool = False
    eps: tuple[float, ...] = ()

    def validate_for_flow(self) -> None:
        """The strict parameter table: the closed end alpha*p = 2 needs an explicit opt-in."""
        if self.allow_scale_invariant:
            return
        violations = self.energy.energy.flow_violations()
        if violations:
            raise ParameterError("; ".join(violations) + " (set energy.allow_scale_invariant to accept alpha*p = 2)")


DEFAULT_ENERGY = {"family": "ohara", "alpha": 2.5, "p": 1.0}


def _pick(section: dict, cls, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(section) - known
    if extra:
        raise ParameterError(f"unknown keys in [{name}]: {sorted(extra)}")
    return {k: v for k, v in section.items() if k in known}


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ParameterError("config must be a table")
    energy = dict(data.get("energy", DEFAULT_ENERGY))
    family = energy.pop("family", "ohara")
    kappa = float(energy.pop("kappa", 2.0))
    epsilon = float(energy.pop("epsilon", 0.1))
    allow = bool(energy.pop("allow_scale_invariant", False))
    try:
        params = make_params(family, **energy)
    except KeyError as exc:
        raise ParameterError(f"[energy] is missing {exc.args[0]!r} for family {family!r}") from None
    except TypeError as exc:
        raise ParameterError(f"[energy]: {exc}") from None
    energy_cfg = TotalEnergyConfig(params, kappa=kappa, epsilon=epsilon)

    flow = dict(data.get("flow", {}))
    inner = InnerSolverConfig(**_pick(flow.pop("inner", {}), InnerSolverConfig, "flow.inner"))
    monitors = MonitorConfig(**_pick(flow.pop("monitors", {}), MonitorConfig, "flow.monitors"))
    flow_cfg = FlowConfig(inner=inner, monitors=monitors, **_pick(flow, FlowConfig, "flow"))

    io = data.get("io", {})
    stride = int(io.get("sample_stride", 10))
    if stride < 1:
        raise ParameterError("sample_stride >= 1 violated")
    eps = tuple(float(e) for e in data.get("sweep", {}).get("eps", ()))
    return RunConfig(energy_cfg, flow_cfg, stride, int(data.get("seed", 0)), allow, eps)


def load_config(path) -> RunConfig:
    """Read a TOML config; files ending in .json (or that fail as TOML) are read as JSON."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = _parse_json(text, path)
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            try:
                data = json.loads(text)
            except json.JSONDecodeError:
                raise ParameterError(f"{path}: not valid TOML ({exc}) nor JSON") from None
    return config_from_dict(data)


def _parse_json(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def default_config() -> RunConfig:
    return config_from_dict({})


# -- outputs ------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_trajectory(samples: list[TrajectorySample], path, stride: int = 10) -> None:
    """One JSON object per line; nodes are inlined every ``stride`` samples and on the last one."""
    last = len(samples) - 1
    with open(path, "w") as fh:
        for k, s in enumerate(samples):
            rec = s.to_record(include_nodes=(k % stride == 0 or k == last))
            rec = {key: _jsonable(v) for key, v in rec.items()}
            rec["index"] = k
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


LEDGER_HEADER = ("t_start", "t_end", "dphi", "int_g_beta", "int_speed_theta", "residual")


def write_ledger(ledger, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_HEADER)
        for row in ledger.rows():
            writer.writerow([repr(float(v)) for v in row])


def jsonable(obj):
    """Recursively convert numpy scalars and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    return _jsonable(obj)


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(jsonable(data), indent=2) + "\n")
