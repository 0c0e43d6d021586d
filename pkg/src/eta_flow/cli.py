"""Command line driver: ``eta-flow {evolve, sweep, analyze}``.

Exit codes: 0 success, 1 failed analysis checks, 2 invalid input,
3 numerical engine failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import __version__
from .config import (ExperimentConfig, build_config, load_document, parse_value, preset_names,
                     set_path)
from .errors import DomainError, EngineError
from .eta import commutator_residuals, state_a, state_b
from .effective import (EffectiveModelWarning, analytic_evolution, build_h_eff, collective_matrix,
                        doublon_basis, ep_order, eta_z_total, nilpotency_exact,
                        projected_collective_matrix)
from .fock import adjoint, commutator, frobenius_norm
from .model import build_full, hermitize_check, sector_basis
from .observables import TimeSeries, scaling_fit, simulate, u_sweep

EXIT_OK, EXIT_CHECKS, EXIT_INPUT, EXIT_ENGINE = 0, 1, 2, 3
COLUMNS = TimeSeries.COLUMNS

# frozen tolerances for the analysis report
TOL_ALGEBRA = 1e-12
TOL_EIGEN = 1e-12
TOL_ORTHO = 1e-14
TOL_PROJECTION = 1e-10
TOL_ANALYTIC = 1e-9


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_table(rows, header: dict) -> str:
    """CSV text with a one-line ``#`` JSON header above the column row."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True, default=_json_default) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        if len(row) != len(COLUMNS):
            raise ValueError(f"row has {len(row)} fields, expected {len(COLUMNS)}")
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def read_table(path) -> tuple[dict, list[tuple[float, ...]]]:
    """Parse a file written by ``render_table``: ``(header, rows)``."""
    text = Path(path).read_text()
    first, _, body = text.partition("\n")
    if not first.startswith("# "):
        raise DomainError(f"{path}: missing '#' header line")
    header = json.loads(first[2:])
    reader = csv.reader(io.StringIO(body))
    columns = next(reader)
    if tuple(columns) != COLUMNS:
        raise DomainError(f"{path}: unexpected columns {columns}")
    return header, [tuple(float(x) for x in row) for row in reader if row]


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fit_or_reason(series: TimeSeries, cfg: ExperimentConfig):
    try:
        return scaling_fit(series.t, series.p, cfg.fit_window).to_document()
    except DomainError as exc:
        return {"skipped": str(exc)}


def run_evolve(cfg: ExperimentConfig, out_dir: Path, name: str | None = None) -> Path:
    start = time.perf_counter()
    series, traj = simulate(cfg.spec, cfg.sample_times(), cfg.initial, cfg.target, cfg.engine,
                            cfg.tolerance)
    header = {
        "digest": cfg.digest(),
        "config": cfg.to_document(),
        "engine_report": {**traj.report(), "tolerance": cfg.tolerance,
                          "seconds": round(time.perf_counter() - start, 3)},
        "fit": _fit_or_reason(series, cfg),
        "snapshots": {_fmt(s): series.at(s) for s in cfg.snapshots},
        "metadata": series.metadata,
        "version": __version__,
    }
    path = out_dir / f"{name or cfg.name}.csv"
    atomic_write(path, render_table(series.rows, header))
    return path


def run_sweep(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> Path:
    if not cfg.sweep:
        raise DomainError("sweep needs a grid: pass --sweep param=v1,v2,... or a 'sweep' config entry")
    param, values = cfg.sweep["param"], cfg.sweep["values"]
    result = u_sweep(cfg.spec, values, cfg.sample_times(), cfg.snapshots, cfg.initial, cfg.target,
                     param, cfg.engine, cfg.tolerance, jobs)
    for value, series in sorted(result.series.items()):
        header = {"digest": cfg.digest(), "config": cfg.to_document(), "sweep": {param: value},
                  "metadata": series.metadata, "fit": _fit_or_reason(series, cfg)}
        atomic_write(out_dir / f"{cfg.name}_{param}={_fmt(value)}.csv", render_table(series.rows, header))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param", "value"] + [f"F@{_fmt(s)}" for s in result.snapshots] + ["status"])
    for value in sorted(values):
        if value in result.errors:
            writer.writerow([param, _fmt(value)] + [""] * len(result.snapshots) + [result.errors[value]])
        else:
            writer.writerow([param, _fmt(value)] + [_fmt(f) for f in result.fidelity[value]] + ["ok"])
    path = out_dir / f"{cfg.name}_summary.csv"
    atomic_write(path, buf.getvalue())
    return path


def _check(name, value, tol, detail=None):
    value = float(value)
    out = {"name": name, "value": value, "tolerance": tol, "passed": bool(value <= tol)}
    if detail is not None:
        out["detail"] = detail
    return out


def analysis_checks(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """Structural checks on the configured lattice: collective Jordan block,
    pair-operator algebra, eigen-relations and the effective model."""
    spec = cfg.spec
    checks, dumps = [], {}
    sector = collective_matrix(spec.n_a, spec.n_b, spec.kappa, spec.u)
    dumps["m_matrix"] = [[float(x.real) for x in row] for row in sector.m_matrix]
    dumps["labels"] = sector.labels
    ep = ep_order(sector.m_matrix, sector.eigenvalue)
    checks.append({"name": "ep_order at N_a U", "value": ep.order, "expected": spec.n_a + 1,
                   "passed": ep.order == spec.n_a + 1})
    exact = nilpotency_exact(spec.n_a, spec.n_b, spec.kappa, spec.u)
    checks.append({"name": "exact nilpotency of M - N_a U", "value": exact["power_n_a_plus_1_is_zero"],
                   "passed": bool(exact["power_n_a_plus_1_is_zero"] and exact["power_n_a_nonzero"])})
    resid = [float(r) for r in ep.residuals]
    dumps["nilpotency_residuals"] = resid

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EffectiveModelWarning)
        projected = projected_collective_matrix(spec)
        dbasis = doublon_basis(spec)
        h_eff = build_h_eff(spec, dbasis)
    checks.append(_check("projected H_eff vs M", np.max(np.abs(projected - sector.m_matrix)),
                         TOL_PROJECTION))
    checks.append(_check("[eta_z, H_eff]", frobenius_norm(commutator(eta_z_total(dbasis), h_eff)),
                         TOL_ALGEBRA))

    ts = np.array([0.5, 2.0, 10.0]) * spec.n_b * abs(spec.u) / max(spec.kappa**2, 1e-300)
    analytic = analytic_evolution(sector, ts)
    numeric = np.array([sla.expm(-1j * t * sector.nilpotent_part())[:, 0] for t in ts])
    scale = np.max(np.abs(analytic.amplitudes), axis=1, keepdims=True)
    checks.append(_check("analytic vs numeric collective evolution",
                         np.max(np.abs(numeric - analytic.amplitudes) / scale), TOL_ANALYTIC))

    basis = sector_basis(spec)
    for key, value in commutator_residuals(spec, basis).items():
        checks.append(_check(key, value, TOL_ALGEBRA))
    # the eigen-relations belong to the unidirectional model; back-tunneling breaks them
    one_way = spec.replace(lam=0.0) if spec.lam else spec
    h = build_full(one_way, basis)
    a, b = state_a(spec), state_b(spec)
    e = spec.n_a * spec.u
    suffix = " (lambda=0)" if spec.lam else ""
    checks.append(_check("H|B> - N_a U|B>" + suffix,
                         np.linalg.norm(h @ b.amplitudes - e * b.amplitudes), TOL_EIGEN))
    checks.append(_check("H^dag|A> - N_a U|A>" + suffix,
                         np.linalg.norm(adjoint(h) @ a.amplitudes - e * a.amplitudes), TOL_EIGEN))
    checks.append(_check("<A|B>", abs(np.vdot(a.amplitudes, b.amplitudes)), TOL_ORTHO))
    if spec.lam > 0:
        checks.append(_check("hermitized H'_AB", hermitize_check(spec, basis), 1e-12))
    return checks, dumps


def run_analyze(cfg: ExperimentConfig, out_dir: Path) -> tuple[Path, bool]:
    checks, dumps = analysis_checks(cfg)
    failed = [c["name"] for c in checks if not c["passed"]]
    report = {"digest": cfg.digest(), "config": cfg.to_document(), "checks": checks,
              "failed": failed, "passed": not failed, **dumps}
    path = out_dir / f"{cfg.name}_analysis.json"
    atomic_write(path, json.dumps(report, indent=2, default=_json_default) + "\n")
    return path, not failed


def _grid(text: str) -> dict:
    if "=" not in text:
        raise DomainError(f"--sweep expects param=v1,v2,..., got {text!r}")
    param, _, values = text.partition("=")
    try:
        grid = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise DomainError(f"--sweep values must be numbers, got {values!r}") from None
    return {"param": param.strip(), "values": grid}


def load_config(args) -> ExperimentConfig:
    doc = load_document(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise DomainError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        set_path(doc, key.strip(), parse_value(value))
    if args.engine:
        doc["engine"] = args.engine
    if args.tol is not None:
        doc["tolerance"] = args.tol
    if getattr(args, "sweep", None):
        doc["sweep"] = _grid(args.sweep)
    return build_config(doc)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eta-flow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help=f"JSON config path or preset name ({', '.join(preset_names())})")
    common.add_argument("--engine", choices=["dense", "rk", "krylov"])
    common.add_argument("--tol", type=float)
    common.add_argument("--out", default="results", type=Path, help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. spec.u=5 (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="evolve one configuration to CSV")
    sweep = sub.add_parser("sweep", parents=[common], help="fidelity sweep over U or J")
    sweep.add_argument("--sweep", metavar="PARAM=GRID", help="e.g. u=0.5,1,2,5")
    sweep.add_argument("--jobs", type=int, default=1)
    sub.add_parser("analyze", parents=[common], help="structural checks to a JSON report")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # reserved; the dynamics are deterministic
    os.environ.get("ETA_FLOW_SEED")
    try:
        cfg = load_config(args)
        if args.command == "evolve":
            path = run_evolve(cfg, args.out)
        elif args.command == "sweep":
            if args.jobs < 1:
                raise DomainError("--jobs must be >= 1")
            path = run_sweep(cfg, args.out, args.jobs)
        else:
            path, ok = run_analyze(cfg, args.out)
            print(path)
            if not ok:
                print("analysis checks failed; see report", file=sys.stderr)
                return EXIT_CHECKS
            return EXIT_OK
    except DomainError as exc:
        print(f"eta-flow: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EngineError as exc:
        print(f"eta-flow: engine failure: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
