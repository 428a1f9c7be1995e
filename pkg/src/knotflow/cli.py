"""Command-line interface: knotflow {energy, gradcheck, flow, eps-sweep, generate}."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .energies import OharaParams, evaluate_energy
from .errors import CurveFormatError, GeometryError, KnotFlowError, MonitorTripped, ParameterError
from .flow import FlowResult, eps_sweep, run_flow
from .geometry import (
    arclength_table,
    generate_curve,
    geometry_report,
    intrinsic_distance_matrix,
    node_speeds,
)
from .io import (
    RunConfig,
    default_config,
    jsonable,
    load_config,
    read_curve,
    write_curve,
    write_json,
    write_ledger,
    write_trajectory,
)
from .sobolev import penalty
from .variations import arc_tie_margin, f1_check, gradient_check, random_smooth_field

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_VALIDATION = 2
EXIT_GEOMETRY = 3
EXIT_MONITOR = 4

GRADIENT_TOL = 1e-7
F1_TOL = 1e-5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else default_config()


def _curve(args):
    if not args.curve:
        raise CliError("--curve is required", EXIT_VALIDATION)
    return read_curve(args.curve)


def _emit(data) -> None:
    print(json.dumps(jsonable(data), indent=2))


# -- subcommands --------------------------------------------------------------


def cmd_energy(args) -> int:
    cfg = _config(args)
    cfg.validate_for_flow()
    curve = _curve(args)
    value = evaluate_energy(curve, cfg.energy.energy)
    rep = geometry_report(curve)
    pen = penalty(curve, cfg.energy)
    _emit(
        {
            "family": cfg.energy.family,
            "value": value.value,
            "n_terms": value.n_terms,
            "excluded": value.excluded,
            "length": rep.total_length,
            "bilip": rep.bilip,
            "min_speed": rep.min_speed,
            "penalty": pen,
            "phi": value.value + pen,
        }
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    cfg.validate_for_flow()
    curve = _curve(args)
    params = cfg.energy.energy
    evaluate_energy(curve, params)  # surfaces geometry failures up front
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    n, dim = curve.nodes.shape
    perts = [np.zeros((n, dim))] + [random_smooth_field(n, dim, rng) for _ in range(args.directions)]
    rows = gradient_check(curve, params, perts)
    worst = max(r["error"] for r in rows)
    report = {
        "family": cfg.energy.family,
        "N": n,
        "seed": seed,
        "h_values": [r["h"] for r in rows],
        "errors": [r["error"] for r in rows],
        "oracles": [r["oracle"] for r in rows],
        "worst": worst,
        "tolerance": GRADIENT_TOL,
    }
    ok = worst < GRADIENT_TOL
    if isinstance(params, OharaParams):
        f1_rows = _f1_suite(curve, params, rng, args.pairs)
        f1_worst = max((r["error"] for r in f1_rows), default=0.0)
        report["f1"] = {"pairs": len(f1_rows), "worst": f1_worst, "tolerance": F1_TOL}
        ok = ok and f1_worst < F1_TOL
    report["pass"] = ok
    _emit(report)
    return EXIT_OK if ok else EXIT_TOLERANCE


def _f1_suite(curve, params, rng, count):
    table = arclength_table(curve)
    n = curve.n_nodes
    _, wraps = intrinsic_distance_matrix(table)
    rows = []
    attempts = 0
    while len(rows) < count and attempts < 50 * count:
        attempts += 1
        i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
        if arc_tie_margin(table, i, j) < 1e-2 * table.total_length:
            continue
        pert = random_smooth_field(n, curve.dim, rng)
        row = f1_check(curve, params.alpha, i, j, pert)
        if abs(row["fd"]) < 1e-8:
            continue
        rows.append(row)
    return rows


def _write_run(result: FlowResult, out: Path, stride: int, extra=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(result.samples, out / "trajectory.jsonl", stride)
    write_ledger(result.ledger, out / "ledger.csv")
    write_curve(result.samples[-1].curve, out / "final_curve.json")
    summary = {
        "termination": result.termination,
        "error": result.error,
        "steps": result.steps,
        "samples": len(result.samples),
        "t_end": result.samples[-1].t,
        "phi_start": result.phi_start,
        "phi_end": result.phi_end,
        "energy_end": result.samples[-1].energy,
        "penalty_end": result.samples[-1].penalty,
        "ledger_cumulative_residual": result.ledger.cumulative_residual,
        "inner_stalls": sum(s.inner_stall for s in result.samples),
    }
    summary.update(extra or {})
    write_json(summary, out / "summary.json")
    return summary


def _exit_for(result: FlowResult) -> int:
    if result.termination.startswith("monitor"):
        return EXIT_MONITOR
    if result.termination == "geometry":
        return EXIT_GEOMETRY
    if result.termination == "step_failure":
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_flow(args) -> int:
    cfg = _config(args)
    cfg.validate_for_flow()
    curve = _curve(args)
    out = Path(args.out or "flow_out")
    result = run_flow(curve, cfg.energy, cfg.flow)
    summary = _write_run(result, out, cfg.sample_stride, {"scheme": cfg.flow.scheme, "family": cfg.energy.family})
    _emit(summary)
    if result.error:
        print(result.error, file=sys.stderr)
    return _exit_for(result)


def _parse_eps(text: str) -> list[float]:
    items = [t for t in text.replace(",", " ").split() if t]
    try:
        return [float(t) for t in items]
    except ValueError:
        raise CliError(f"--eps must be a list of numbers (got {text!r})", EXIT_VALIDATION) from None


def cmd_eps_sweep(args) -> int:
    cfg = _config(args)
    cfg.validate_for_flow()
    eps = _parse_eps(args.eps) if args.eps is not None else list(cfg.eps)
    if not eps:
        raise CliError("eps list is empty", EXIT_VALIDATION)
    curve = _curve(args)
    out = Path(args.out or "sweep_out")
    report = eps_sweep(curve, cfg.energy, eps, cfg.flow)
    codes = []
    for k, (e, res) in enumerate(zip(report.eps, report.results)):
        if res is None:
            codes.append(EXIT_TOLERANCE)
            continue
        _write_run(res, out / f"eps_{k:02d}_{e:g}", cfg.sample_stride, {"eps": e})
        codes.append(_exit_for(res))
    data = report.to_dict()
    write_json(data, out / "sweep_report.json")
    _emit({"phi_bound_ok": data["phi_bound_ok"], "max_phi_excess": data["max_phi_excess"], "runs": data["runs"]})
    if not report.phi_bound_ok:
        return EXIT_TOLERANCE
    return max(codes, default=EXIT_OK)


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def cmd_generate(args) -> int:
    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise CliError(f"--param expects KEY=VALUE (got {item!r})", EXIT_VALIDATION)
        key, value = item.split("=", 1)
        params[key.strip()] = _parse_value(value.strip())
    curve = generate_curve(args.shape, args.n, args.dim, **params)
    if args.noise:
        rng = np.random.default_rng(args.seed or 0)
        bump = random_smooth_field(curve.n_nodes, curve.dim, rng)
        scale = float(np.mean(node_speeds(curve))) / (2 * np.pi)
        curve = curve.with_nodes(curve.nodes + args.noise * scale * bump)
    if args.out:
        write_curve(curve, args.out)
    else:
        _emit({"dim": curve.dim, "nodes": curve.nodes.tolist()})
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML (or JSON) run configuration")
    common.add_argument("--curve", help="curve JSON file")
    common.add_argument("--out", help="output directory (file for generate)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1, help="accepted for compatibility; results never depend on it")

    parser = argparse.ArgumentParser(prog="knotflow", description="Knot energies and their Sobolev gradient flows.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("energy", parents=[common], help="evaluate energy, penalty and geometry")
    p = sub.add_parser("gradcheck", parents=[common], help="check gradients against finite differences")
    p.add_argument("--directions", type=int, default=5)
    p.add_argument("--pairs", type=int, default=20)
    sub.add_parser("flow", parents=[common], help="run a gradient flow")
    p = sub.add_parser("eps-sweep", parents=[common], help="run the flow for several epsilon values")
    p.add_argument("--eps", help="comma-separated epsilon values")
    p = sub.add_parser("generate", parents=[common], help="write a sampled curve")
    p.add_argument("--shape", required=True, choices=["circle", "ellipse", "torus_knot", "perturbed"])
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--param", action="append", help="shape parameter KEY=VALUE (repeatable)")
    p.add_argument("--noise", type=float, default=0.0, help="amplitude of a seeded smooth perturbation")
    return parser


COMMANDS = {
    "energy": cmd_energy,
    "gradcheck": cmd_gradcheck,
    "flow": cmd_flow,
    "eps-sweep": cmd_eps_sweep,
    "generate": cmd_generate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ParameterError, CurveFormatError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GeometryError as exc:
        print(f"geometry error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except MonitorTripped as exc:
        print(f"monitor tripped: {exc}", file=sys.stderr)
        return EXIT_MONITOR
    except KnotFlowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
