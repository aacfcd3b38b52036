"""Gaussian free field, Wick-ordered quartic interaction and the reweighted measure.

Fields are stored by their Fourier amplitudes, one complex column per mode of
the :class:`ModeSet`.  The interacting measure is realized exactly by
importance weights ``exp(-E_int)`` on free-field samples; since
``E_int >= 0`` every weight lies in ``(0, 1]``.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import DomainError, UsageError
from .fock import enumerate_sector
from .model import ModeSet, Potential, counterterm_density

_CHUNK_ENTRIES = 2_000_000


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for stream ``stream`` derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


def _check_kappa(kappa: float) -> None:
    if not kappa > 0 or not math.isfinite(kappa):
        raise DomainError(f"kappa must be finite and > 0, got {kappa}")


def sample_free_fields(modes: ModeSet, kappa: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` draws of ``u_hat(k) = g_k / sqrt(|k|^2 + kappa)``, shape ``(size, len(modes))``.

    ``g_k`` are standard complex Gaussians (``E|g|^2 = 1``).
    """
    _check_kappa(kappa)
    g = rng.standard_normal((size, len(modes), 2))
    scale = 1.0 / np.sqrt(2.0 * (modes.kinetic + kappa))
    return (g[..., 0] + 1j * g[..., 1]) * scale


def sample_free_field(modes: ModeSet, kappa: float, rng: np.random.Generator) -> np.ndarray:
    return sample_free_fields(modes, kappa, rng, 1)[0]


@dataclass(frozen=True)
class _TransferTable:
    qs: np.ndarray  # (nq, 2) transfers, sorted
    left: np.ndarray  # pair (i, j) with m_i - m_j = q, grouped by q
    right: np.ndarray
    starts: np.ndarray  # group start of each q in the pair arrays
    zero: int  # position of q = 0


@lru_cache(maxsize=32)
def _transfer_table(modes: ModeSet) -> _TransferTable:
    idx = modes.indices
    ii, jj = np.meshgrid(np.arange(len(modes)), np.arange(len(modes)), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    diff = idx[ii] - idx[jj]
    qs, inverse = np.unique(diff, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(qs)))
    zero = int(np.flatnonzero((qs == 0).all(axis=1))[0])
    return _TransferTable(qs, ii[order], jj[order], starts, zero)


def density_fourier(fields: np.ndarray, modes: ModeSet) -> tuple[np.ndarray, np.ndarray]:
    """Fourier coefficients of ``|u(x)|^2``: ``sum_k u(k+q) conj(u(k))`` for every transfer ``q``.

    Returns ``(qs, rho)`` with ``rho`` of shape ``(n_fields, len(qs))``.
    """
    fields = np.atleast_2d(fields)
    tab = _transfer_table(modes)
    prod = fields[:, tab.left] * np.conj(fields[:, tab.right])
    return tab.qs, np.add.reduceat(prod, tab.starts, axis=1)


_FFT_MIN_MODES = 25


def _rho_chunks(fields: np.ndarray, modes: ModeSet, keep: np.ndarray):
    """Yield ``(row_offset, rho)`` with ``rho`` restricted to transfers ``keep``.

    Small sets use the direct pair sum; larger ones take ``|u(x)|^2`` on a
    grid of ``4R+1`` points per axis, fine enough that no transfer aliases.
    """
    tab = _transfer_table(modes)
    if len(modes) >= _FFT_MIN_MODES:
        R = int(np.abs(modes.indices).max())
        N = 4 * R + 1
        ix = modes.indices % N
        qx = tab.qs[keep] % N
        step = max(1, _CHUNK_ENTRIES // (N * N))
        for lo in range(0, fields.shape[0], step):
            u = fields[lo:lo + step]
            grid = np.zeros((u.shape[0], N, N), dtype=complex)
            grid[:, ix[:, 0], ix[:, 1]] = u
            ux = np.fft.ifft2(grid) * (N * N)
            dens = np.fft.fft2(np.abs(ux) ** 2) / (N * N)
            yield lo, dens[:, qx[:, 0], qx[:, 1]]
        return
    ends = np.append(tab.starts[1:], len(tab.left))
    sel = np.concatenate([np.arange(tab.starts[g], ends[g]) for g in keep])
    counts = ends[keep] - tab.starts[keep]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    left, right = tab.left[sel], tab.right[sel]
    step = max(1, _CHUNK_ENTRIES // max(1, len(sel)))
    for lo in range(0, fields.shape[0], step):
        u = fields[lo:lo + step]
        yield lo, np.add.reduceat(u[:, left] * np.conj(u[:, right]), starts, axis=1)


def _energies(fields: np.ndarray, modes: ModeSet, w: Potential, counterterms: tuple[float, ...]) -> np.ndarray:
    """Energies for each counterterm value from one density evaluation, shape ``(len(c), n)``."""
    tab = _transfer_table(modes)
    wq = w.values(tab.qs)
    keep = np.flatnonzero(wq > 0)  # only transfers with w_hat(q) > 0 contribute
    out = np.zeros((len(counterterms), fields.shape[0]))
    if not len(keep):
        return out
    zero_pos = np.flatnonzero(keep == tab.zero)
    wk = wq[keep]
    for lo, rho in _rho_chunks(fields, modes, keep):
        for i, c in enumerate(counterterms):
            r = rho
            if len(zero_pos) and c != 0.0:
                r = rho.copy()
                r[:, zero_pos[0]] -= c
            out[i, lo:lo + rho.shape[0]] = 0.5 * (np.abs(r) ** 2) @ wk
    return out


def interaction_energies(
    fields: np.ndarray,
    modes: ModeSet,
    w: Potential,
    kappa: float,
    sub_cutoff: float | None = None,
    counterterm: float | None = None,
) -> np.ndarray:
    """Wick-ordered interaction ``1/2 sum_q w_hat(q) |rho(q) - c delta_q0|^2`` per field.

    ``fields`` are amplitudes on ``modes``; with ``sub_cutoff`` only the
    columns of the sub-ball enter.  ``counterterm`` overrides the mass
    counterterm ``c`` (pass ``0.0`` for the unsubtracted interaction).
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=complex))
    if fields.shape[1] != len(modes):
        raise UsageError(f"fields have {fields.shape[1]} columns for {len(modes)} modes")
    c = counterterm_density(modes, kappa, sub_cutoff) if counterterm is None else float(counterterm)
    active = modes.restrict(sub_cutoff)
    if active is not modes:
        fields = fields[:, modes.subset_columns(active)]
    return _energies(fields, active, w, (c,))[0]


def interaction_energy(
    u: np.ndarray, modes: ModeSet, w: Potential, kappa: float, sub_cutoff: float | None = None, counterterm: float | None = None
) -> float:
    return float(interaction_energies(np.asarray(u)[None, :], modes, w, kappa, sub_cutoff, counterterm)[0])


@dataclass(eq=False)
class WeightedEnsemble:
    """Free-field samples with their Gibbs reweighting factors ``exp(-E_int)``."""

    modes: ModeSet
    kappa: float
    potential: Potential
    samples: np.ndarray
    energies: np.ndarray
    weights: np.ndarray
    stream_ids: np.ndarray
    seed: int
    n_streams: int
    sub_cutoff: float | None = None
    stream_bounds: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.stream_bounds is None:
            self.stream_bounds = np.searchsorted(self.stream_ids, np.arange(self.n_streams + 1))

    def __len__(self) -> int:
        return len(self.weights)

    def stream_slices(self):
        for s in range(self.n_streams):
            yield slice(int(self.stream_bounds[s]), int(self.stream_bounds[s + 1]))


def _stream_counts(n_samples: int, n_streams: int) -> list[int]:
    base, extra = divmod(n_samples, n_streams)
    return [base + (1 if i < extra else 0) for i in range(n_streams)]


def _draw_stream(args):
    modes, w, kappa, sub_cutoff, seed, stream, count = args
    rng = stream_rng(seed, stream)
    u = sample_free_fields(modes, kappa, rng, count)
    e = interaction_energies(u, modes, w, kappa, sub_cutoff)
    return u, e


def worker_count(default: int = 1) -> int:
    """Worker processes from ``BOSE2D_WORKERS`` (results never depend on it)."""
    raw = os.environ.get("BOSE2D_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"BOSE2D_WORKERS must be an integer, got {raw!r}") from None


def build_ensemble(
    modes: ModeSet,
    w: Potential,
    kappa: float,
    n_samples: int,
    n_streams: int,
    seed: int,
    sub_cutoff: float | None = None,
    workers: int | None = None,
) -> WeightedEnsemble:
    """Draw ``n_samples`` free fields split over ``n_streams`` seeded streams and weight them."""
    _check_kappa(kappa)
    if n_samples <= 0 or n_streams <= 0:
        raise UsageError("sample and stream counts must be positive")
    if n_streams > n_samples:
        raise UsageError("more streams than samples")
    counts = _stream_counts(n_samples, n_streams)
    jobs = [(modes, w, kappa, sub_cutoff, seed, s, counts[s]) for s in range(n_streams)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_draw_stream, jobs))
    else:
        parts = [_draw_stream(j) for j in jobs]
    samples = np.concatenate([p[0] for p in parts])
    energies = np.concatenate([p[1] for p in parts])
    stream_ids = np.repeat(np.arange(n_streams), counts)
    return WeightedEnsemble(
        modes=modes,
        kappa=float(kappa),
        potential=w,
        samples=samples,
        energies=energies,
        weights=np.exp(-energies),
        stream_ids=stream_ids,
        seed=int(seed),
        n_streams=n_streams,
        sub_cutoff=sub_cutoff,
    )


def estimate_partition_z(ens: WeightedEnsemble) -> tuple[float, float]:
    """``z = E_mu0[exp(-E_int)]`` as the weight mean, with its standard error."""
    n = len(ens)
    if n == 0:
        raise UsageError("empty ensemble")
    z = float(np.mean(ens.weights))
    se = float(np.std(ens.weights, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return z, se


def stream_partition_z(ens: WeightedEnsemble) -> np.ndarray:
    return np.array([ens.weights[sl].mean() for sl in ens.stream_slices()])


def batch_error(values: np.ndarray) -> float:
    """Standard error of the mean from independent per-stream estimates."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, axis=0, ddof=1).max() / math.sqrt(values.shape[0])) if values.ndim > 1 else float(
        np.std(values, ddof=1) / math.sqrt(len(values))
    )


def tensor_coefficients(fields: np.ndarray, occupations: np.ndarray) -> np.ndarray:
    """Components ``sqrt(k!/prod n!) prod u^n`` of ``u^{(x)k}`` in the occupation basis."""
    fields = np.atleast_2d(fields)
    k = int(occupations[0].sum()) if len(occupations) else 0
    out = np.ones((fields.shape[0], len(occupations)), dtype=complex)
    for m in range(occupations.shape[1]):
        e = occupations[:, m]
        nz = np.flatnonzero(e > 0)
        if len(nz):
            out[:, nz] *= fields[:, [m]] ** e[nz]
    norm = np.exp(0.5 * (gammaln(k + 1) - gammaln(occupations + 1).sum(axis=1)))
    return out * norm


def _moment(fields: np.ndarray, weights: np.ndarray | None, occupations: np.ndarray) -> np.ndarray:
    dim = len(occupations)
    acc = np.zeros((dim, dim), dtype=complex)
    step = max(1, _CHUNK_ENTRIES // max(1, dim))
    for lo in range(0, fields.shape[0], step):
        c = tensor_coefficients(fields[lo:lo + step], occupations)
        wc = c if weights is None else c * weights[lo:lo + step, None]
        acc += wc.T @ np.conj(c)
    total = fields.shape[0] if weights is None else weights.sum()
    m = acc / total
    return 0.5 * (m + m.conj().T)


def moment_matrix(ens: WeightedEnsemble, k: int, modes: ModeSet | None = None, weighted: bool = True) -> np.ndarray:
    """Estimate of ``E_mu[|u^{(x)k}><u^{(x)k}|]`` on the ``k``-particle occupation basis.

    The basis order is that of ``fock.enumerate_sector(modes, k)``.  With
    ``weighted=False`` the free-field average is returned instead.
    """
    if k <= 0:
        raise UsageError("k must be a positive integer")
    if modes is not None and modes != ens.modes:
        raise UsageError("moment basis does not match the ensemble's mode set")
    occ = enumerate_sector(ens.modes, k).states
    return _moment(ens.samples, ens.weights if weighted else None, occ)


def stream_moment_matrices(ens: WeightedEnsemble, k: int, weighted: bool = True) -> np.ndarray:
    """Per-stream moment matrices, shape ``(n_streams, D, D)``."""
    if k <= 0:
        raise UsageError("k must be a positive integer")
    occ = enumerate_sector(ens.modes, k).states
    return np.stack(
        [_moment(ens.samples[sl], ens.weights[sl] if weighted else None, occ) for sl in ens.stream_slices()]
    )


def stream_moment_sums(ens: WeightedEnsemble, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-stream weighted sums ``sum_i w_i c(u_i) c(u_i)^*`` and weight totals.

    ``M = A.sum(0) / W.sum()`` reproduces :func:`moment_matrix`; dropping one
    stream from both sums gives leave-one-stream-out estimates.
    """
    if k <= 0:
        raise UsageError("k must be a positive integer")
    occ = enumerate_sector(ens.modes, k).states
    sums, totals = [], []
    for sl in ens.stream_slices():
        w = ens.weights[sl]
        sums.append(_moment(ens.samples[sl], w, occ) * w.sum())
        totals.append(w.sum())
    return np.stack(sums), np.array(totals)


def free_moment_matrix(modes: ModeSet, kappa: float, k: int) -> np.ndarray:
    """Exact free-field moments: diagonal ``k! prod_m (|k_m|^2 + kappa)^(-n_m)``."""
    _check_kappa(kappa)
    occ = enumerate_sector(modes, k).states
    var = 1.0 / (modes.kinetic + kappa)
    diag = math.factorial(k) * np.prod(var[None, :] ** occ, axis=1)
    return np.diag(diag).astype(complex)


def single_mode_z(kappa: float, w0: float) -> float:
    """``z`` for the one-mode set by quadrature.

    ``|u(0)|^2`` is exponential with mean ``c = 1/kappa``, and the interaction
    is ``w0 (t - c)^2 / 2``.
    """
    _check_kappa(kappa)
    if w0 == 0:
        return 1.0
    c = 1.0 / kappa
    f = lambda t: kappa * math.exp(-kappa * t - 0.5 * w0 * (t - c) ** 2)  # noqa: E731
    val, _ = integrate.quad(f, 0.0, math.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def single_mode_moment(kappa: float, w0: float) -> float:
    """``E_mu |u(0)|^2`` for the one-mode set by quadrature."""
    _check_kappa(kappa)
    c = 1.0 / kappa
    f = lambda t: t * kappa * math.exp(-kappa * t - 0.5 * w0 * (t - c) ** 2)  # noqa: E731
    val, _ = integrate.quad(f, 0.0, math.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val / single_mode_z(kappa, w0)


@dataclass
class WickCheckResult:
    sizes: list[int]
    mean_energy: np.ndarray
    mean_energy_err: np.ndarray
    mean_raw: np.ndarray
    mean_raw_err: np.ndarray
    min_energy: np.ndarray
    gaps: np.ndarray  # E|E_i - E_{i+1}|
    gap_errs: np.ndarray
    gap_drop_z: np.ndarray  # paired z-score of gaps[i] - gaps[i+1]

    @property
    def positive(self) -> bool:
        return bool((self.min_energy >= 0).all())

    def decreasing(self, z: float = 2.5758293035489004) -> bool:
        """Consecutive gaps drop with the given one-sided z threshold (99% two-sided default)."""
        return bool((self.gap_drop_z > z).all())

    def raw_growing(self) -> bool:
        return bool((np.diff(self.mean_raw) > 0).all())

    def rows(self) -> list[dict]:
        out = []
        for i, size in enumerate(self.sizes):
            row = {
                "cutoff": i,
                "modes": size,
                "mean_E": self.mean_energy[i],
                "mean_E_err": self.mean_energy_err[i],
                "mean_E_raw": self.mean_raw[i],
                "mean_E_raw_err": self.mean_raw_err[i],
                "min_E": self.min_energy[i],
                "gap_next": self.gaps[i] if i < len(self.gaps) else float("nan"),
                "gap_next_err": self.gap_errs[i] if i < len(self.gaps) else float("nan"),
            }
            out.append(row)
        return out


def wick_cauchy_check(
    mode_sets: list[ModeSet],
    w: Potential,
    kappa: float,
    samples: int,
    seed: int = 0,
    n_streams: int = 1,
) -> WickCheckResult:
    """L1(mu0) distances between interactions at consecutive nested cutoffs.

    All cutoffs share the same Gaussian draws (the largest set is sampled and
    restricted), so differences only carry the shell contributions.
    """
    _check_kappa(kappa)
    if len(mode_sets) < 1:
        raise UsageError("need at least one mode set")
    for a, b in zip(mode_sets, mode_sets[1:]):
        if not a.issubset(b):
            raise UsageError("mode sets must be nested")
    big = mode_sets[-1]
    counts = _stream_counts(samples, n_streams)
    fields = np.concatenate([sample_free_fields(big, kappa, stream_rng(seed, s), c) for s, c in enumerate(counts)])
    n = fields.shape[0]
    energies, raw = [], []
    for ms in mode_sets:
        cols = big.subset_columns(ms)
        u = fields[:, cols]
        sub, unsub = _energies(u, ms, w, (counterterm_density(ms, kappa), 0.0))
        energies.append(sub)
        raw.append(unsub)
    energies = np.array(energies)
    raw = np.array(raw)
    root_n = math.sqrt(n)
    sem = lambda x: np.std(x, axis=-1, ddof=1) / root_n if n > 1 else np.zeros(x.shape[:-1])  # noqa: E731
    diffs = np.abs(np.diff(energies, axis=0))
    gaps = diffs.mean(axis=1) if len(diffs) else np.zeros(0)
    drop = diffs[:-1] - diffs[1:]
    drop_se = sem(drop) if len(drop) else np.zeros(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        drop_z = np.where(drop_se > 0, drop.mean(axis=1) / drop_se, np.where(drop.mean(axis=1) > 0, np.inf, 0.0)) if len(drop) else np.zeros(0)
    return WickCheckResult(
        sizes=[len(m) for m in mode_sets],
        mean_energy=energies.mean(axis=1),
        mean_energy_err=sem(energies),
        mean_raw=raw.mean(axis=1),
        mean_raw_err=sem(raw),
        min_energy=energies.min(axis=1),
        gaps=gaps,
        gap_errs=sem(diffs) if len(diffs) else np.zeros(0),
        gap_drop_z=drop_z,
    )


ENSEMBLE_HEADER = ["stream", "sample", "E_int", "weight"]


def write_ensemble_csv(ens: WeightedEnsemble, fh) -> None:
    """Raw dump: one line per sample with ``%.17g`` floats."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ENSEMBLE_HEADER)
    for sl in ens.stream_slices():
        for j, i in enumerate(range(sl.start, sl.stop)):
            writer.writerow([int(ens.stream_ids[i]), j, f"{ens.energies[i]:.17g}", f"{ens.weights[i]:.17g}"])
