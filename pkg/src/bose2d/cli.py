"""Command line entry point: ``bose2d <command> ...``.

Exit codes: 0 success, 1 a verdict failed, 2 invalid input or missing
artifact, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import __version__
from .classical import build_ensemble, estimate_partition_z, moment_matrix, single_mode_z, wick_cauchy_check, write_ensemble_csv
from .compare import (
    convergence_report,
    read_comparison_csv,
    theorem_quantities,
    write_comparison_csv,
    write_summary_csv,
)
from .config import ExperimentConfig, load_config
from .errors import Bose2DError, ConfigurationError, DivergenceError, DomainError, TruncationError, UsageError
from .gibbs import reduced_density_matrix, truncation_control
from .model import ModeSet, counterterm_density
from .selftest import FAULTS, run_selftest

EXIT_OK, EXIT_VERDICT, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, samples=args.samples, streams=args.streams, output_dir=args.out)


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _verdict_record(cfg: ExperimentConfig, report: dict) -> dict:
    rec = dict(report)
    rec["tool"] = f"bose2d {__version__}"
    rec["config_sha256"] = cfg.sha256
    rec["seed"] = cfg.sampling.seed
    rec["samples"] = cfg.sampling.samples
    rec["streams"] = cfg.sampling.streams
    required = cfg.required_quantities()
    rec["required"] = required
    rec["pass"] = bool(not report["failed_rows"] and all(report["quantities"][n]["pass"] for n in required))
    return rec


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    ens = None
    if cfg.sampling.dump_ensemble:
        s = cfg.sampling
        ens = build_ensemble(cfg.modes, cfg.potential, cfg.kappa, s.samples, s.streams, s.seed)
        with open(out / "ensemble.csv", "w") as fh:
            fh.write(cfg.header() + "\n")
            write_ensemble_csv(ens, fh)

    def progress(row):
        state = "ok" if row.ok else row.status
        print(f"T = {row.T:g}: {state}", file=sys.stderr)

    rows = theorem_quantities(cfg, ensemble=ens, progress=progress)
    quantities = cfg.compare.quantities()
    with open(out / "comparison.csv", "w") as fh:
        write_comparison_csv(rows, fh, cfg.header(), quantities)
    with open(out / "gibbs_summary.csv", "w") as fh:
        write_summary_csv([rec for r in rows for rec in r.summaries], fh, cfg.header())
    if len(rows) < 3:
        print("fewer than 3 temperatures: no verdict written", file=sys.stderr)
        return EXIT_NUMERIC if any(not r.ok for r in rows) else EXIT_OK
    verdict = _verdict_record(cfg, convergence_report(rows, cfg.tolerances, quantities))
    _write_json(out / "verdict.json", verdict)
    _print_verdict(verdict)
    if verdict["failed_rows"]:
        for fr in verdict["failed_rows"]:
            print(f"numerical failure at T = {fr['T']:g}: {fr['status']}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if verdict["pass"] else EXIT_VERDICT


def _print_verdict(verdict: dict) -> None:
    for name, d in verdict["quantities"].items():
        slope = "n/a" if d["slope"] is None else f"{d['slope']:.3f}"
        tol = "" if d["tolerance"] is None else f" tol {d['tolerance']:g}"
        print(
            f"{'PASS' if d['pass'] else 'FAIL'} {name}: terminal {d['terminal']:.6g}{tol}, "
            f"monotone {d['monotone']}, slope {slope}"
        )
    print(f"verdict: {'PASS' if verdict['pass'] else 'FAIL'}")


def cmd_classical_sample(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    s = cfg.sampling
    ens = build_ensemble(cfg.modes, cfg.potential, cfg.kappa, s.samples, s.streams, s.seed)
    z, se = estimate_partition_z(ens)
    single = [tuple(m) for m in cfg.modes] == [(0, 0)]
    z_ref = single_mode_z(cfg.kappa, cfg.potential((0, 0))) if single else math.nan
    with open(out / "classical.csv", "w") as fh:
        fh.write(cfg.header() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["samples", "streams", "z", "z_err", "z_quadrature", "counterterm", "mean_E_int", "min_E_int"])
        w.writerow(
            [s.samples, s.streams, _fmt(z), _fmt(se), _fmt(z_ref), _fmt(counterterm_density(cfg.modes, cfg.kappa)),
             _fmt(ens.energies.mean()), _fmt(ens.energies.min())]
        )
    with open(out / "moments.csv", "w") as fh:
        fh.write(cfg.header() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "row", "col", "re", "im"])
        for k in sorted(set(cfg.compare.ks) | {1}):
            m = moment_matrix(ens, k)
            for i, j in np.ndindex(m.shape):
                w.writerow([k, i, j, _fmt(m[i, j].real), _fmt(m[i, j].imag)])
    if s.dump_ensemble:
        with open(out / "ensemble.csv", "w") as fh:
            fh.write(cfg.header() + "\n")
            write_ensemble_csv(ens, fh)
    print(f"z = {z:.8g} +- {se:.2g}" + ("" if math.isnan(z_ref) else f" (quadrature {z_ref:.10g})"))
    return EXIT_OK


def cmd_quantum_exact(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    t = cfg.truncation
    records, mats, failures = [], [], []
    for i, (T, lam, nu, E0) in enumerate(cfg.schedule.points(cfg.modes, cfg.potential)):
        try:
            res = truncation_control(
                cfg.modes, cfg.potential, cfg.kappa, T, lam, eps_z=t.eps_z, eps_tail=t.eps_tail,
                growth=t.growth, max_states=t.max_states, max_block_dim=t.max_block_dim,
                max_iter=t.max_iter, nu=nu, E0=E0,
            )
        except (TruncationError, DivergenceError, DomainError) as exc:
            failures.append((T, exc))
            continue
        rec = res.solution.summary()
        rec["Z"] = res.solution.partition_function
        rec["converged"] = int(res.converged)
        records.append(rec)
        g1 = reduced_density_matrix(res.solution, 1).matrix
        mats += [(T, lam, a, b, g1[a, b]) for a, b in np.ndindex(g1.shape)]
        del res
    with open(out / "gibbs_summary.csv", "w") as fh:
        write_summary_csv(records, fh, cfg.header())
    with open(out / "one_body.csv", "w") as fh:
        fh.write(cfg.header() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "lambda", "row", "col", "gamma1"])
        for T, lam, a, b, v in mats:
            w.writerow([_fmt(T), _fmt(lam), a, b, _fmt(v)])
    for rec in records:
        print(f"T = {rec['T']:g}: Z = {rec['Z']:.10g}, F = {rec['F']:.10g}, caps {rec['caps']}")
    for T, exc in failures:
        print(f"numerical failure at T = {T:g}: {exc}", file=sys.stderr)
    return EXIT_NUMERIC if failures else EXIT_OK


def cmd_wick_check(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    wk = cfg.wick
    samples = wk.samples if args.samples is None else args.samples
    streams = wk.streams if args.streams is None else args.streams
    sets = [ModeSet.ball(r) for r in wk.radii]
    res = wick_cauchy_check(sets, cfg.potential, cfg.kappa, samples, cfg.sampling.seed, streams)
    zcrit = float(norm.ppf(0.5 + wk.confidence / 2))
    with open(out / "wick_check.csv", "w") as fh:
        fh.write(cfg.header() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        rows = res.rows()
        w.writerow(["radius"] + list(rows[0].keys()))
        for r, row in zip(wk.radii, rows):
            w.writerow([_fmt(r)] + [v if isinstance(v, int) else _fmt(v) for v in row.values()])
    flags = {"positive": res.positive, "gaps_decreasing": res.decreasing(zcrit), "raw_mean_grows": res.raw_growing()}
    rec = {
        "tool": f"bose2d {__version__}",
        "config_sha256": cfg.sha256,
        "seed": cfg.sampling.seed,
        "samples": samples,
        "confidence": wk.confidence,
        "gap_drop_z": res.gap_drop_z.tolist(),
        **flags,
        "pass": all(flags.values()),
    }
    _write_json(out / "wick_check.json", rec)
    for name, ok in flags.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if rec["pass"] else EXIT_VERDICT


def _parse_tol(items) -> dict:
    tols = {}
    for item in items or []:
        name, sep, val = item.partition("=")
        try:
            if not sep:
                raise ValueError
            tols[name.strip()] = float(val)
        except ValueError:
            raise UsageError(f"--tol expects NAME=VALUE, got {item!r}") from None
    return tols


def cmd_report(args) -> int:
    d = Path(args.directory)
    path = d / "comparison.csv"
    if not path.is_file():
        raise UsageError(f"missing prerequisite artifact {path}")
    text = path.read_text()
    rows = read_comparison_csv(text)
    tols = {}
    tol_file = d / "tolerances.json"
    if tol_file.is_file():
        try:
            tols.update({k: float(v) for k, v in json.loads(tol_file.read_text()).items()})
        except (ValueError, AttributeError) as exc:
            raise ConfigurationError(f"{tol_file}: invalid tolerances: {exc}") from None
    tols.update(_parse_tol(args.tol))
    report = convergence_report(rows, tols)
    report["tool"] = f"bose2d {__version__}"
    report["comparison_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    report["source_header"] = next((ln for ln in text.splitlines() if ln.startswith("#")), "")
    _write_json(d / "verdict.json", report)
    _print_verdict(report)
    return EXIT_OK if report["pass"] else EXIT_VERDICT


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest(fault=args.inject_fault) == 0 else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bose2d", description="Quantum versus classical 2D Bose gas on finite mode sets.")
    p.add_argument("--version", action="version", version=f"bose2d {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="INI or JSON experiment config")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--streams", type=int, help="random stream count override")
        sp.add_argument("--samples", type=int, help="sample count override")
        sp.set_defaults(func=func)
        return sp

    with_config("sweep", cmd_sweep, "full comparison along the temperature schedule")
    with_config("classical-sample", cmd_classical_sample, "classical ensemble, z and moment matrices")
    with_config("quantum-exact", cmd_quantum_exact, "exact Gibbs states along the schedule")
    with_config("wick-check", cmd_wick_check, "L1 Cauchy check of the renormalized interaction")
    sp = sub.add_parser("report", help="verdict from an existing comparison.csv")
    sp.add_argument("directory")
    sp.add_argument("--tol", action="append", metavar="NAME=VALUE", help="terminal tolerance for a quantity")
    sp.set_defaults(func=cmd_report)
    sp = sub.add_parser("selftest", help="fast built-in checks")
    sp.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"bose2d: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TruncationError, DivergenceError, DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"bose2d: numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"diagnostics: {diag}", file=sys.stderr)
        return EXIT_NUMERIC
    except Bose2DError as exc:
        print(f"bose2d: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
