"""Command-line entry point.

Exit codes: 0 success or feasible, 1 ill-posed loop, 2 diverged training,
3 infeasible certificate, 4 numerical failure (solver, equilibrium search,
falsified certificate), 64 usage error or malformed input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (SolverOptions, build_lmi, neutral_directions, shift_equilibrium, solve_feasibility,
                      validate_certificate)
from .dataset import IngestManifest, ingest, synth_sequences
from .errors import (DimensionMismatch, DivergedLoss, FalsifiedCertificate, MalformedRow, NoEquilibrium,
                     SnofError, SolverFailure, UnsupportedChannel)
from .plant_loop import load_loop_manifest
from .rnn import (LpGrnnCell, TrainConfig, analyze_gating, componentwise_field, effective_memory,
                  hadamard_field, lpgrnn_to_snof, rmse, train_bptt)
from .sim import run_comparison, simulate, steady_state, trace_metrics, write_comparison_csv, write_metrics_csv
from .snof import Snof, check_well_posed

EXIT_OK, EXIT_ILL_POSED, EXIT_DIVERGED, EXIT_INFEASIBLE, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2, 3, 4, 64

log = logging.getLogger("snofcert")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# provenance


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_files(path: Path) -> list:
    """The input file plus any artifacts a loop manifest refers to."""
    files = [path]
    try:
        raw = json.loads(path.read_text())
    except (OSError, ValueError):
        return files
    if isinstance(raw, dict) and "plant" in raw:
        for key in ("plant", "controller", "sensor", "scaler"):
            if isinstance(raw.get(key), str):
                files.append(path.parent / raw[key])
    return files


def run_manifest(args, inputs) -> dict:
    """Command, inputs with their hashes, seed and options; hashed as a whole.

    The output directory and verbosity do not affect results and are left out,
    so identical runs carry identical hashes.
    """
    opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "out_dir", "verbose")}
    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in opts.items()}
    files = []
    for p in inputs:
        for f in _input_files(Path(p)):
            files.append({"path": str(f), "sha256": _sha256_file(f)})
    run = {"command": args.command, "inputs": files, "options": opts}
    run["manifest_sha256"] = hashlib.sha256(json.dumps(run, sort_keys=True).encode()).hexdigest()
    return run


def _versions() -> dict:
    import scipy

    out = {"snofcert": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
           "python": sys.version.split()[0]}
    try:
        import scs

        out["scs"] = scs.__version__
    except ImportError:
        pass
    return out


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(o):
    """Strict JSON: non-finite floats become null."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, float) and not np.isfinite(o):
        return None
    return o


def _write_report(out_dir: Path, name: str, run: dict, body: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = json.loads(json.dumps({"run": run, "versions": _versions(), **body}, default=_json_default))
    path = out_dir / name
    path.write_text(json.dumps(_finite(report), indent=1, allow_nan=False) + "\n")
    return path


def _stamp_csv(path: Path, run: dict) -> None:
    """Prefix a CSV with a comment line naming the manifest hash."""
    text = path.read_text()
    path.write_text(f"# manifest_sha256={run['manifest_sha256']}\n{text}")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except ValueError as e:
        raise UsageError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path} must hold a JSON object")
    return doc


def _load_system(path, no_sensor: bool = False, setpoint=None):
    """A bare SNOF document or a loop manifest -> (snof, setpoint, extra report fields)."""
    doc = _load_json(path)
    if "dims" in doc:
        s = Snof.from_dict(doc)
        r = np.zeros(s.m) if setpoint is None else np.asarray(setpoint, dtype=float)
        return s, r, {"input_kind": "snof"}
    if "plant" in doc and "controller" in doc:
        m = load_loop_manifest(path)
        cl = m.assemble(sensor=not no_sensor)
        r = m.schedule_for(not no_sensor)[0][1] if setpoint is None else np.asarray(setpoint, dtype=float)
        return cl, r, {"input_kind": "loop", "feedback": list(cl.feedback),
                       "output_names": list(cl.output_names), "sensor": not no_sensor}
    raise UsageError(f"{path} is neither a SNOF document (needs 'dims') nor a loop manifest")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    if args.data:
        if not args.ingest:
            raise UsageError("--data needs --ingest (windowing manifest)")
        man = IngestManifest.from_json(args.ingest)
        data = ingest(args.data, man)
        inputs = [args.data, args.ingest]
    else:
        data = synth_sequences(a=args.pole, count=args.count, length=args.length, seed=args.seed)
        inputs = []
    if args.init:
        cell = LpGrnnCell.from_json(args.init)
        inputs.append(args.init)
    else:
        cell = LpGrnnCell.init(args.hidden, data.X.shape[-1], 1, rng=np.random.default_rng(args.seed))
    run = run_manifest(args, inputs)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed)
    t0 = time.perf_counter()
    try:
        best, trace = train_bptt(cell, (data.X, data.Y), cfg)
    except DivergedLoss as e:
        _write_report(args.out_dir, "train_report.json", run, {"status": "diverged", "error": str(e)})
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = best.to_dict()
    doc["manifest_sha256"] = run["manifest_sha256"]
    (out / "cell.json").write_text(json.dumps(doc, indent=1) + "\n")
    trace_path = out / "loss_trace.csv"
    best_so_far = np.minimum.accumulate(trace) if trace else []
    lines = ["epoch,rmse,best_rmse"] + [f"{i + 1},{float(v)!r},{float(b)!r}" for i, (v, b) in
                                         enumerate(zip(trace, best_so_far))]
    trace_path.write_text("\n".join(lines) + "\n")
    _stamp_csv(trace_path, run)
    final = rmse(best, (data.X, data.Y))
    body = {"status": "ok", "config": asdict(cfg), "windows": len(data), "final_rmse": final,
            "epochs_run": len(trace), "seconds": time.perf_counter() - t0,
            "effective_memory": effective_memory(best, min(data.window_len, 30), seed=args.seed)}
    _write_report(out, "train_report.json", run, body)
    print(f"final RMSE {final:.6g} after {len(trace)} epochs -> {out / 'cell.json'}")
    return EXIT_OK


def cmd_export_snof(args) -> int:
    doc = _load_json(args.cell)
    try:
        cell = LpGrnnCell.from_dict(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"{args.cell} is not an LP-GRNN cell: {e}") from None
    run = run_manifest(args, [args.cell])
    s = lpgrnn_to_snof(cell)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    d = s.to_dict()
    d["manifest_sha256"] = run["manifest_sha256"]
    (out / "snof.json").write_text(json.dumps(d, indent=1) + "\n")
    wp = check_well_posed(s, seed=args.seed)
    _write_report(out, "export_report.json", run, {"dims": d["dims"], "well_posed": wp.to_dict()})
    print(f"exported n={s.n} h={s.h} m={s.m} l={s.l} -> {out / 'snof.json'}")
    return EXIT_OK


def cmd_check_wellposed(args) -> int:
    system, _, extra = _load_system(args.input, args.no_sensor)
    run = run_manifest(args, [args.input])
    s = system.snof if hasattr(system, "snof") else system
    wp = check_well_posed(s, seed=args.seed)
    _write_report(args.out_dir, "wellposed_report.json", run, {**extra, "well_posed": wp.to_dict()})
    print(f"well-posed: {wp.verdict} (method {wp.method}, det R = 1: {wp.det_one})")
    return EXIT_OK if wp.verdict else EXIT_ILL_POSED


def cmd_certify(args) -> int:
    system, r, extra = _load_system(args.input, args.no_sensor, args.setpoint)
    run = run_manifest(args, [args.input])
    opts = SolverOptions(eps_abs=args.eps_abs, eps_rel=args.eps_rel, max_iters=args.max_iters,
                         margin=args.margin, verbose=args.verbose)
    s = system.snof if hasattr(system, "snof") else system
    body = dict(extra, setpoint=np.asarray(r))
    t0 = time.perf_counter()

    def finish(code, status):
        body.update(status=status, seconds=time.perf_counter() - t0)
        path = _write_report(args.out_dir, "certificate.json", run, body)
        print(f"{status} -> {path}")
        return code

    wp = check_well_posed(s, seed=args.seed)
    body["well_posed"] = wp.to_dict()
    if not wp.verdict:
        return finish(EXIT_ILL_POSED, "ill-posed")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            shift = shift_equilibrium(system, r)
        body["equilibrium"] = shift.to_dict()
        body["warnings"] = [str(w.message) for w in caught]
        pencil = build_lmi(shift)
        body["pencil"] = {k: v for k, v in pencil.report().items() if k != "nonzeros_per_variable"}
        cert = solve_feasibility(pencil, opts)
    except NoEquilibrium as e:
        body["error"] = str(e)
        return finish(EXIT_FAILURE, "no-equilibrium")
    except SolverFailure as e:
        body["error"] = str(e)
        return finish(EXIT_FAILURE, "solver-failure")
    body["certificate"] = cert.to_dict()
    if not cert.feasible:
        body["neutral_directions"] = [e.tolist() for e in neutral_directions(pencil, shift)]
        return finish(EXIT_INFEASIBLE, "infeasible")
    if args.trials > 0:
        try:
            rep = validate_certificate(shift, cert, trials=args.trials, seed=args.seed)
        except FalsifiedCertificate as e:
            body["validation"] = {"falsified": True, "message": str(e),
                                  "trajectory_head": np.asarray(e.trajectory)[:5]}
            return finish(EXIT_FAILURE, "falsified")
        body["validation"] = rep.to_dict()
    return finish(EXIT_OK, "feasible")


def cmd_simulate(args) -> int:
    doc = _load_json(args.input)
    if "plant" not in doc:
        raise UsageError(f"{args.input} is not a loop manifest")
    m = load_loop_manifest(args.input)
    if args.horizon is not None:
        m.horizon = args.horizon
    run = run_manifest(args, [args.input])
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if m.sensor is not None and not args.no_compare:
        tr_a, tr_b, report = run_comparison(m)
        names_a = list(m.assemble(False).feedback)
        names_b = list(m.assemble(True).feedback)
        write_comparison_csv(tr_a, tr_b, out / "comparison.csv", names_a, names_b)
        write_metrics_csv(report, out / "metrics.csv")
        tr_b.to_csv(out / "trace.csv")
        for f in ("comparison.csv", "metrics.csv", "trace.csv"):
            _stamp_csv(out / f, run)
        body = {"step_index": m.step_index, "horizon": m.horizon, "metrics": report}
    else:
        sensor = m.sensor is not None and not args.no_sensor
        cl = m.assemble(sensor)
        sched = m.schedule_for(sensor)
        tr = simulate(cl, sched, m.horizon, steady_state(cl, sched[0][1]))
        tr.to_csv(out / "trace.csv")
        _stamp_csv(out / "trace.csv", run)
        metrics = {k: v.to_dict() for k, v in trace_metrics(tr, m.step_index, list(cl.feedback)).items()}
        body = {"step_index": m.step_index, "horizon": m.horizon, "metrics": metrics}
    path = _write_report(out, "simulation_report.json", run, body)
    print(f"simulated {m.horizon} samples -> {path}")
    return EXIT_OK


def cmd_analyze_gating(args) -> int:
    run = run_manifest(args, [])
    rng = np.random.default_rng(args.seed)
    probes = [[0.0, 1.0]] + rng.uniform(-2.0, 2.0, size=(args.probes - 1, 2)).tolist() if args.probes > 0 else []
    if not probes:
        raise UsageError("--probes must be positive")
    fields = {"tanh": componentwise_field(), "hadamard": hadamard_field()}
    body = {}
    for name in args.field:
        res = analyze_gating(fields[name], probes, segments=args.segments)
        end = analyze_gating(fields[name], [[1.0, 1.0]], segments=args.segments)
        body[name] = {"max_asymmetry": res.max_asymmetry, "asymmetry_at_first_probe": float(res.asymmetry[0]),
                      "path_discrepancy_to_ones": float(end.path_discrepancy[0]), "detail": res.to_dict()}
        print(f"{name}: max asymmetry {res.max_asymmetry:.3g}, "
              f"path discrepancy to (1,1) {end.path_discrepancy[0]:.3g}")
    _write_report(args.out_dir, "gating_report.json", run, body)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snofcert", description="Train, export, certify and simulate LP-GRNN feedback loops.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", type=Path, default=Path("out"))
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("train", help="fit an LP-GRNN by truncation-free BPTT")
    common(sp)
    sp.add_argument("--data", type=Path, help="run-to-failure table (CSV or whitespace)")
    sp.add_argument("--ingest", type=Path, help="windowing manifest for --data")
    sp.add_argument("--init", type=Path, help="start from this cell instead of a fresh one")
    sp.add_argument("--hidden", type=int, default=3)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--pole", type=float, default=0.9, help="synthetic generator pole")
    sp.add_argument("--count", type=int, default=2000)
    sp.add_argument("--length", type=int, default=30)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("export-snof", help="write the all-tanh SNOF of a trained cell")
    common(sp)
    sp.add_argument("cell", type=Path)
    sp.set_defaults(func=cmd_export_snof)

    sp = sub.add_parser("check-wellposed", help="invertibility of the algebraic loop")
    common(sp)
    sp.add_argument("input", type=Path, help="SNOF document or loop manifest")
    sp.add_argument("--no-sensor", action="store_true", help="close the loop on measured outputs")
    sp.set_defaults(func=cmd_check_wellposed)

    sp = sub.add_parser("certify", help="search for a Lur'e-Postnikov stability certificate")
    common(sp)
    sp.add_argument("input", type=Path, help="SNOF document or loop manifest")
    sp.add_argument("--no-sensor", action="store_true")
    sp.add_argument("--setpoint", type=float, nargs="+")
    sp.add_argument("--eps-abs", type=float, default=1e-5)
    sp.add_argument("--eps-rel", type=float, default=1e-5)
    sp.add_argument("--max-iters", type=int, default=100_000)
    sp.add_argument("--margin", type=float, default=1e-6)
    sp.add_argument("--trials", type=int, default=1000, help="validation trials for a feasible certificate")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("simulate", help="closed-loop step responses with and without the sensor")
    common(sp)
    sp.add_argument("input", type=Path, help="loop manifest")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--no-sensor", action="store_true")
    sp.add_argument("--no-compare", action="store_true", help="simulate one configuration only")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze-gating", help="path dependence of gated update fields")
    common(sp)
    sp.add_argument("--field", choices=("tanh", "hadamard"), nargs="+", default=["tanh", "hadamard"])
    sp.add_argument("--probes", type=int, default=100)
    sp.add_argument("--segments", type=int, default=10_000)
    sp.set_defaults(func=cmd_analyze_gating)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    for k in ("eps_abs", "eps_rel", "max_iters", "margin"):
        if k in vars(args) and getattr(args, k) <= 0:
            print(f"snofcert: error: --{k.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"snofcert: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DimensionMismatch, UnsupportedChannel, MalformedRow, KeyError, TypeError, ValueError) as e:
        print(f"snofcert: error: malformed input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SnofError as e:
        print(f"snofcert: error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
