"""Quantum versus classical comparison along the ``lam = 1/T`` schedule.

The continuum limit cannot be taken at desk scale; every quantity here is the
finite-mode-set version of the corresponding limit statement, with the same
formulas and finite sums.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .classical import (
    WeightedEnsemble,
    build_ensemble,
    estimate_partition_z,
    free_moment_matrix,
    single_mode_z,
    stream_moment_sums,
)
from .config import ExperimentConfig, gap_name
from .errors import ConfigurationError, DivergenceError, DomainError, TruncationError, UsageError
from .gibbs import reduced_density_matrix, truncation_control
from .model import coupling_schedule

DESK_SCALE_NOTE = (
    "finite mode set surrogate: quantities are computed on a fixed truncation, "
    "not in the continuum limit"
)


def schatten_norm(A, p: float) -> float:
    """``(sum_i s_i^p)^(1/p)`` over singular values; ``p = inf`` gives the largest."""
    if not p >= 1:
        raise UsageError(f"Schatten exponent must be >= 1, got {p}")
    A = np.asarray(A)
    if A.ndim != 2:
        raise UsageError("schatten_norm expects a matrix")
    if A.size == 0:
        return 0.0
    if A.shape[0] == A.shape[1] and np.allclose(A, A.conj().T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
        s = np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))
    else:
        s = np.linalg.svd(A, compute_uv=False)
    if math.isinf(p):
        return float(s.max())
    if p == 1:
        return float(s.sum())
    top = s.max()
    if top == 0:
        return 0.0
    return float(top * np.sum((s / top) ** p) ** (1.0 / p))


@dataclass
class ComparisonRow:
    """Theorem quantities at one temperature; ``gaps`` maps quantity names to values."""

    T: float
    lam: float
    nu: float = math.nan
    E0: float = math.nan
    F_lambda: float = math.nan
    F_0: float = math.nan
    delta_F: float = math.nan
    z: float = math.nan
    z_err: float = math.nan
    z_ref: float = math.nan
    minus_log_z: float = math.nan
    minus_log_z_err: float = math.nan
    gaps: dict = field(default_factory=dict)
    gap_errors: dict = field(default_factory=dict)
    caps_lambda: str = ""
    caps_0: str = ""
    status: str = "ok"
    replicates: dict = field(default_factory=dict, repr=False, compare=False)
    summaries: list = field(default_factory=list, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _jackknife_error(reps: np.ndarray) -> float:
    n = len(reps)
    if n < 2:
        return 0.0
    return float(math.sqrt((n - 1) / n * np.sum((reps - reps.mean()) ** 2)))


def _leave_one_out(sums: np.ndarray, totals: np.ndarray) -> np.ndarray:
    full_sum, full_tot = sums.sum(axis=0), totals.sum()
    return (full_sum[None] - sums) / (full_tot - totals)[:, None, None]


@dataclass
class _ClassicalSide:
    z: float
    z_err: float
    z_ref: float
    log_z_reps: np.ndarray
    moments: dict  # k -> (full M_k, leave-one-out stack)
    m1_free: np.ndarray


def _classical_side(cfg: ExperimentConfig, ks: set[int], ens: WeightedEnsemble | None) -> _ClassicalSide:
    s = cfg.sampling
    if ens is None:
        ens = build_ensemble(cfg.modes, cfg.potential, cfg.kappa, s.samples, s.streams, s.seed)
    z, z_err = estimate_partition_z(ens)
    counts = np.diff(ens.stream_bounds)
    tot_w = np.array([ens.weights[sl].sum() for sl in ens.stream_slices()])
    z_loo = (tot_w.sum() - tot_w) / (counts.sum() - counts) if ens.n_streams > 1 else np.array([z])
    if cfg.compare.z_reference == "quadrature":
        z_ref = single_mode_z(cfg.kappa, cfg.potential((0, 0)))
        log_z_reps = np.full(ens.n_streams, math.log(z_ref))
    else:
        z_ref = math.nan
        log_z_reps = np.log(z_loo)
    moments = {}
    for k in sorted(ks):
        sums, totals = stream_moment_sums(ens, k)
        full = sums.sum(axis=0) / totals.sum()
        loo = _leave_one_out(sums, totals) if ens.n_streams > 1 else full[None]
        moments[k] = (full, loo)
    return _ClassicalSide(z, z_err, z_ref, log_z_reps, moments, free_moment_matrix(cfg.modes, cfg.kappa, 1))


def _solve(cfg: ExperimentConfig, T: float, lam: float, nu=None, E0=None):
    t = cfg.truncation
    return truncation_control(
        cfg.modes,
        cfg.potential,
        cfg.kappa,
        T,
        lam,
        eps_z=t.eps_z,
        eps_tail=t.eps_tail,
        growth=t.growth,
        max_states=t.max_states,
        max_block_dim=t.max_block_dim,
        max_iter=t.max_iter,
        nu=nu,
        E0=E0,
    )


def _summary(sol, converged: bool) -> dict:
    rec = sol.summary()
    rec["Z"] = sol.partition_function
    rec["converged"] = int(converged)
    return rec


def _row(cfg: ExperimentConfig, T: float, lam: float, cl: _ClassicalSide) -> ComparisonRow:
    nu, E0 = coupling_schedule(cfg.modes, cfg.potential, cfg.kappa, T, lam)
    row = ComparisonRow(T=T, lam=lam, nu=nu, E0=E0, z=cl.z, z_err=cl.z_err, z_ref=cl.z_ref)
    need = set(cfg.compare.ks) | ({1} if cfg.compare.s1 else set())

    res = _solve(cfg, T, lam, nu, E0)
    sol = res.solution
    gammas = {k: reduced_density_matrix(sol, k).matrix for k in sorted(need)}
    row.F_lambda = sol.free_energy
    row.caps_lambda = " ".join(map(str, res.caps))
    row.summaries.append(_summary(sol, res.converged))
    del sol, res

    free = _solve(cfg, T, 0.0, -cfg.kappa, 0.0)
    gamma0 = reduced_density_matrix(free.solution, 1).matrix if cfg.compare.s1 else None
    row.F_0 = free.solution.free_energy
    row.caps_0 = " ".join(map(str, free.caps))
    row.summaries.append(_summary(free.solution, free.converged))
    del free

    row.delta_F = (row.F_lambda - row.F_0) / T
    log_z = math.log(cl.z_ref) if not math.isnan(cl.z_ref) else math.log(cl.z)
    row.minus_log_z = -log_z
    row.minus_log_z_err = 0.0 if not math.isnan(cl.z_ref) else cl.z_err / cl.z
    row.gaps["free_energy"] = abs(row.delta_F + log_z)
    row.replicates["free_energy"] = np.abs(row.delta_F + cl.log_z_reps)

    for k in cfg.compare.ks:
        scaled = math.factorial(k) / T**k * gammas[k]
        full, loo = cl.moments[k]
        for p in cfg.compare.schatten:
            name = gap_name(k, p)
            row.gaps[name] = schatten_norm(scaled - full, p)
            row.replicates[name] = np.array([schatten_norm(scaled - m, p) for m in loo])
    if cfg.compare.s1:
        quantum = (gammas[1] - gamma0) / T
        full, loo = cl.moments[1]
        # difference of differences, assembled before taking the norm
        row.gaps["s1"] = schatten_norm(quantum - (full - cl.m1_free), 1)
        row.replicates["s1"] = np.array([schatten_norm(quantum - (m - cl.m1_free), 1) for m in loo])
    for name, reps in row.replicates.items():
        row.gap_errors[name] = _jackknife_error(reps)
    return row


def theorem_quantities(
    cfg: ExperimentConfig,
    T_schedule=None,
    *,
    ensemble: WeightedEnsemble | None = None,
    progress=None,
) -> list[ComparisonRow]:
    """Rows of theorem quantities for each temperature of the schedule.

    The classical ensemble does not depend on ``T`` and is shared by all
    rows, so differences between rows are paired.  A row whose quantum solve
    fails carries the error in ``status`` and NaN values.
    """
    if T_schedule is None:
        temps = cfg.schedule.temperatures
        lams = [cfg.schedule.coupling(i) for i in range(len(temps))]
    else:
        temps = tuple(float(t) for t in T_schedule)
        lams = [1.0 / T for T in temps]
    if any(b <= a for a, b in zip(temps, temps[1:])):
        raise UsageError("temperatures must be strictly increasing")
    ks = set(cfg.compare.ks) | ({1} if cfg.compare.s1 else set())
    cl = _classical_side(cfg, ks, ensemble)
    rows = []
    for T, lam in zip(temps, lams):
        try:
            row = _row(cfg, T, lam, cl)
        except (TruncationError, ConfigurationError, DivergenceError, DomainError) as exc:
            row = ComparisonRow(T=T, lam=lam, status=f"error: {type(exc).__name__}: {exc}")
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def _values(rows, name):
    vals = np.array([r.gaps.get(name, math.nan) for r in rows], dtype=float)
    errs = np.array([r.gap_errors.get(name, 0.0) for r in rows], dtype=float)
    return vals, np.nan_to_num(errs, nan=0.0)


def convergence_report(rows, tolerances: dict | None = None, quantities=None) -> dict:
    """Verdict per tracked quantity plus an overall pass flag.

    A quantity passes when no step increases beyond the combined error bars
    of its two rows and, if a tolerance is set, its value at the largest
    ``T`` is within it.  The log-log slope against ``T`` is reported only.
    """
    rows = list(rows)
    if len(rows) < 3:
        raise UsageError(f"need at least 3 rows, got {len(rows)}")
    Ts = np.array([r.T for r in rows], dtype=float)
    if np.any(np.diff(Ts) <= 0):
        raise UsageError("rows must have strictly increasing T")
    tolerances = dict(tolerances or {})
    if quantities is None:
        quantities = []
        for r in rows:
            quantities += [n for n in r.gaps if n not in quantities]
    failed_rows = [{"T": r.T, "status": r.status} for r in rows if not r.ok]
    report = {"T": Ts.tolist(), "n_rows": len(rows), "note": DESK_SCALE_NOTE, "failed_rows": failed_rows}
    details = {}
    for name in quantities:
        vals, errs = _values(rows, name)
        finite = bool(np.isfinite(vals).all())
        bars = np.sqrt(errs[:-1] ** 2 + errs[1:] ** 2)
        steps = np.diff(vals)
        violations = [int(i) for i in np.flatnonzero(~(steps <= bars))]
        monotone = finite and not violations
        tol = tolerances.get(name)
        terminal = float(vals[-1])
        terminal_pass = None if tol is None else bool(terminal <= tol)
        pos = np.isfinite(vals) & (vals > 0)
        slope = float(np.polyfit(np.log(Ts[pos]), np.log(vals[pos]), 1)[0]) if pos.sum() >= 2 else None
        details[name] = {
            "values": vals.tolist(),
            "errors": errs.tolist(),
            "monotone": monotone,
            "violations": [{"from_T": float(Ts[i]), "to_T": float(Ts[i + 1])} for i in violations],
            "terminal": terminal,
            "tolerance": tol,
            "terminal_pass": terminal_pass,
            "slope": slope,
            "pass": bool(monotone and terminal_pass is not False),
        }
    report["quantities"] = details
    report["pass"] = bool(not failed_rows and all(d["pass"] for d in details.values()))
    return report


BASE_FIELDS = [
    "T", "lambda", "nu", "E0", "F_lambda", "F_0", "delta_F",
    "z", "z_err", "z_ref", "minus_log_z", "minus_log_z_err",
]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_comparison_csv(rows, fh, header: str | None = None, quantities=None) -> None:
    """One row per temperature; floats with 17 significant digits."""
    if quantities is None:
        quantities = []
        for r in rows:
            quantities += [n for n in r.gaps if n not in quantities]
    if header:
        fh.write(header.rstrip("\n") + "\n")
    cols = BASE_FIELDS + [c for n in quantities for c in (f"gap_{n}", f"gap_{n}_err")] + ["caps_lambda", "caps_0", "status"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        vals = [r.T, r.lam, r.nu, r.E0, r.F_lambda, r.F_0, r.delta_F, r.z, r.z_err, r.z_ref, r.minus_log_z, r.minus_log_z_err]
        for n in quantities:
            vals += [r.gaps.get(n, math.nan), r.gap_errors.get(n, math.nan)]
        vals += [r.caps_lambda, r.caps_0, r.status]
        w.writerow([_fmt(v) for v in vals])


def read_comparison_csv(fh) -> list[ComparisonRow]:
    """Inverse of :func:`write_comparison_csv`; missing columns read as NaN."""
    text = fh.read() if hasattr(fh, "read") else str(fh)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames is None or "T" not in reader.fieldnames:
        raise UsageError("comparison table needs a 'T' column")
    names = [c[4:] for c in reader.fieldnames if c.startswith("gap_") and not c.endswith("_err")]
    if not names:
        raise UsageError("comparison table has no gap_* columns")
    num = lambda rec, key: float(rec[key]) if rec.get(key) not in (None, "") else math.nan  # noqa: E731
    rows = []
    for rec in reader:
        row = ComparisonRow(
            T=num(rec, "T"),
            lam=num(rec, "lambda"),
            nu=num(rec, "nu"),
            E0=num(rec, "E0"),
            F_lambda=num(rec, "F_lambda"),
            F_0=num(rec, "F_0"),
            delta_F=num(rec, "delta_F"),
            z=num(rec, "z"),
            z_err=num(rec, "z_err"),
            z_ref=num(rec, "z_ref"),
            minus_log_z=num(rec, "minus_log_z"),
            minus_log_z_err=num(rec, "minus_log_z_err"),
            caps_lambda=rec.get("caps_lambda") or "",
            caps_0=rec.get("caps_0") or "",
            status=rec.get("status") or "ok",
        )
        for n in names:
            row.gaps[n] = num(rec, f"gap_{n}")
            e = num(rec, f"gap_{n}_err")
            row.gap_errors[n] = 0.0 if math.isnan(e) else e
        rows.append(row)
    return rows


SUMMARY_FIELDS = ["T", "lambda", "nu", "E0", "log_Z", "Z", "F", "mean_N", "caps", "tail", "converged"]


def write_summary_csv(records, fh, header: str | None = None) -> None:
    if header:
        fh.write(header.rstrip("\n") + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for rec in records:
        w.writerow([_fmt(rec[k]) if not isinstance(rec[k], (int, str)) else str(rec[k]) for k in SUMMARY_FIELDS])
