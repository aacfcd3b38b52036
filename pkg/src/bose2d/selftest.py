"""Fast built-in checks: closed-form cases and cheap oracles, one line each."""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np

from .classical import (
    build_ensemble,
    estimate_partition_z,
    free_moment_matrix,
    interaction_energy,
    moment_matrix,
    single_mode_z,
    stream_moment_matrices,
    stream_rng,
    sample_free_fields,
)
from .compare import ComparisonRow, convergence_report, schatten_norm
from .fock import assemble_hamiltonian, enumerate_sector, number_and_momentum
from .gibbs import free_energy_noninteracting, gibbs_state, reduced_density_matrix
from .model import ModeSet, Potential, bose_occupations, counterterm_density

FAULTS = ("counterterm",)


def _close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def _check_trivial_energies(fault):
    S, w = ModeSet.ball(0), Potential.constant(1.0)
    vals = [interaction_energy(np.array([x]), S, w, 1.0) for x in (0j, 1 + 0j, 2 + 0j)]
    ok = all(_close(v, t, 1e-15) for v, t in zip(vals, (0.5, 0.0, 4.5)))
    return ok, "E_int(0, 1, 2) = " + ", ".join(f"{v:.6g}" for v in vals)


def _check_counterterm_baseline(fault):
    # E_int vanishes exactly where every |u(k)|^2 matches its free mean
    S, w = ModeSet.ball(1), Potential.gaussian(1.0, 0.02)
    c = counterterm_density(S, 1.0) + (1e-3 if fault == "counterterm" else 0.0)
    kappa = 1.0
    u = np.zeros(len(S), dtype=complex)
    u[S.zero_index] = math.sqrt(counterterm_density(S, kappa))
    e = interaction_energy(u, S, w, kappa, counterterm=c)
    rng = stream_rng(0, 0)
    fields = sample_free_fields(S, kappa, rng, 2000)
    mins = min(interaction_energy(f, S, w, kappa, counterterm=c) for f in fields[:200])
    return e <= 1e-14 and mins >= 0, f"E_int at |u0|^2 = c: {e:.3g}, min over samples {mins:.3g}"


def _check_schatten(fault):
    vals = (schatten_norm(np.diag([3.0, -4.0]), 1), schatten_norm(np.diag([3.0, -4.0]), 2), schatten_norm(np.eye(2), 2))
    ok = _close(vals[0], 7, 1e-14) and _close(vals[1], 5, 1e-14) and _close(vals[2], math.sqrt(2), 1e-14)
    return ok, "||diag(3,-4)||_1,2 and ||I||_2 = " + ", ".join(f"{v:.15g}" for v in vals)


def _check_free_z(fault):
    ens = build_ensemble(ModeSet.ball(1), Potential.zero(), 1.0, 1000, 4, 1)
    z, se = estimate_partition_z(ens)
    return z == 1.0 and se == 0.0, f"w = 0: z = {z}, se = {se}"


def _check_quadrature_z(fault):
    zq = single_mode_z(1.0, 1.0)
    ens = build_ensemble(ModeSet.ball(0), Potential.constant(1.0), 1.0, 200_000, 8, 11)
    z, se = estimate_partition_z(ens)
    ok = abs(zq - 0.7601734505331404) < 1e-12 and abs(z - zq) <= 3 * se
    return ok, f"quadrature z = {zq:.12f}, MC z = {z:.5f} +- {se:.5f}"


def _check_geometric_z(fault):
    S, T, kappa = ModeSet.ball(0), 4.0, 1.0
    sol = gibbs_state(S, Potential.zero(), kappa, T, 0.0, (400,), nu=-kappa, E0=0.0)
    exact = -math.log1p(-math.exp(-kappa / T))
    return _close(sol.log_z, exact, 1e-12), f"log Z = {sol.log_z:.15g}, series {exact:.15g}"


def _check_free_energy(fault):
    S, T, kappa = ModeSet.ball(1), 2.0, 1.0
    caps = [4] * len(S)
    caps[S.zero_index] = 60
    sol = gibbs_state(S, Potential.zero(), kappa, T, 0.0, caps, nu=-kappa, E0=0.0)
    exact = free_energy_noninteracting(S, kappa, T)
    g1 = reduced_density_matrix(sol, 1).matrix
    occ_err = float(np.abs(np.diag(g1) - bose_occupations(S, kappa, T)).max())
    ok = _close(sol.free_energy, exact, 1e-8) and occ_err < 1e-8
    return ok, f"F0 = {sol.free_energy:.12g} vs {exact:.12g}, max occupation error {occ_err:.2g}"


def _check_wick_moments(fault):
    S = ModeSet.ball(1)
    ens = build_ensemble(S, Potential.zero(), 1.0, 100_000, 20, 5)
    exact = free_moment_matrix(S, 1.0, 2)
    est = moment_matrix(ens, 2)
    per = stream_moment_matrices(ens, 2)
    se = per.std(axis=0, ddof=1) / math.sqrt(len(per))
    dev = np.abs(est - exact)
    ok = bool((dev <= 4 * np.abs(se) + 1e-12).all())
    return ok, f"k = 2 Wick moments, max deviation {dev.max():.3g} (max 4 se {4 * np.abs(se).max():.3g})"


def _check_sector_dims(fault):
    dims = [len(enumerate_sector(5, n)) for n in range(6)]
    exact = [math.comb(n + 4, 4) for n in range(6)]
    return dims == exact, f"5-mode sector dimensions {dims}"


def _check_hamiltonian(fault):
    S, w = ModeSet.ball(1), Potential.gaussian(1.0, 0.02)
    basis = enumerate_sector(S, 3)
    H = assemble_hamiltonian(basis, S, w, 0.5).toarray()
    _, (px, py) = number_and_momentum(basis, S)
    herm = np.abs(H - H.T).max()
    comm = max(np.abs(H @ px.toarray() - px.toarray() @ H).max(), np.abs(H @ py.toarray() - py.toarray() @ H).max())
    return herm < 1e-12 and comm < 1e-9, f"|H - H^T| = {herm:.2g}, |[H, P]| = {comm:.2g}"


def _check_trace_identity(fault):
    S, w = ModeSet.ball(1), Potential.gaussian(1.0, 0.02)
    caps = [3] * len(S)
    caps[S.zero_index] = 8
    sol = gibbs_state(S, w, 1.0, 2.0, 0.5, caps)
    errs = [abs(reduced_density_matrix(sol, k).trace - sol.expected_binomial(k)) for k in (1, 2)]
    return max(errs) < 1e-10, f"|tr Gamma_k - E C(N,k)| = {max(errs):.2g}"


def _check_report(fault):
    def rows(vals):
        return [ComparisonRow(T=t, lam=1 / t, gaps={"g": v}, gap_errors={"g": 0.0}) for t, v in zip((4, 8, 16), vals)]

    good = convergence_report(rows((0.4, 0.2, 0.1)), {"g": 0.15})
    bad = convergence_report(rows((0.1, 0.3, 0.2)))
    slope = good["quantities"]["g"]["slope"]
    ok = good["pass"] and abs(slope + 1) < 1e-12 and not bad["quantities"]["g"]["monotone"]
    return ok, f"synthetic reports: pass={good['pass']} slope={slope:.3f}, non-monotone flagged={not bad['pass']}"


def _check_determinism(fault):
    S = ModeSet.ball(1)
    a = sample_free_fields(S, 1.0, stream_rng(3, 2), 10)
    b = sample_free_fields(S, 1.0, stream_rng(3, 2), 10)
    return bool(np.array_equal(a, b)), "repeated stream draws identical"


CHECKS: list[tuple[str, Callable]] = [
    ("interaction_trivial_values", _check_trivial_energies),
    ("interaction_positivity_baseline", _check_counterterm_baseline),
    ("schatten_trivial_values", _check_schatten),
    ("free_measure_z_equals_one", _check_free_z),
    ("single_mode_z_quadrature", _check_quadrature_z),
    ("single_mode_geometric_series", _check_geometric_z),
    ("free_energy_and_occupations", _check_free_energy),
    ("wick_moments_k2", _check_wick_moments),
    ("sector_dimensions", _check_sector_dims),
    ("hamiltonian_symmetries", _check_hamiltonian),
    ("rdm_trace_identity", _check_trace_identity),
    ("convergence_report_synthetic", _check_report),
    ("sampling_determinism", _check_determinism),
]


def run_selftest(fault: str | None = None, out: Callable[[str], None] = print) -> int:
    """Run every check, printing one line each; returns the number of failures."""
    failed = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(fault)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed.append(name)
    out(f"selftest: {len(CHECKS) - len(failed)}/{len(CHECKS)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return len(failed)
