"""Truncated bosonic Fock space over a finite mode set.

States are occupation vectors ``n`` indexed like the :class:`ModeSet`.  A
sector holds all vectors with a fixed total ``N = sum(n)`` (optionally with
per-mode caps), ordered lexicographically from the largest first entry down,
e.g. ``(2, 0), (1, 1), (0, 2)``.  Operators are ``scipy.sparse`` matrices
acting on one sector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import UsageError
from .model import FOUR_PI_SQ, Mode, ModeSet, Potential, TWO_PI  # noqa: F401

_CODE_LIMIT = 2**62


def _normalize_caps(caps, size: int) -> tuple[int, ...] | None:
    if caps is None:
        return None
    caps = tuple(int(c) for c in caps)
    if len(caps) != size:
        raise UsageError(f"expected {size} caps, got {len(caps)}")
    if any(c < 0 for c in caps):
        raise UsageError("caps must be non-negative")
    return caps


@dataclass(frozen=True)
class OccupationState:
    occupations: tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(x) for x in self.occupations)
        if any(x < 0 for x in occ):
            raise UsageError("occupation numbers must be non-negative")
        object.__setattr__(self, "occupations", occ)

    @cached_property
    def total(self) -> int:
        return sum(self.occupations)

    def __len__(self):
        return len(self.occupations)

    def __getitem__(self, i):
        return self.occupations[i]


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """All occupation vectors of one particle-number sector."""

    n: int
    states: np.ndarray
    caps: tuple[int, ...] | None = None
    _radix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.states.setflags(write=False)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def num_modes(self) -> int:
        return self.states.shape[1]

    @cached_property
    def radix(self) -> np.ndarray | None:
        if self._radix is not None:
            return self._radix
        m = self.num_modes
        base = np.array([c + 1 for c in self.caps], dtype=np.int64) if self.caps else np.full(m, self.n + 1, dtype=np.int64)
        if math.prod(int(b) for b in base) >= _CODE_LIMIT:
            return None
        return base

    @cached_property
    def _weights(self) -> np.ndarray | None:
        base = self.radix
        if base is None:
            return None
        w = np.ones(len(base), dtype=np.int64)
        for i in range(len(base) - 2, -1, -1):
            w[i] = w[i + 1] * base[i + 1]
        return w

    @cached_property
    def _table(self):
        w = self._weights
        if w is None:
            return {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(self.states, dtype=np.int64))}
        codes = self.states.astype(np.int64) @ w
        order = np.argsort(codes, kind="stable")
        return codes[order], order

    def encode(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.int64) @ self._weights

    def lookup(self, states: np.ndarray) -> np.ndarray:
        """Positions of ``states`` (rows) in this basis, ``-1`` where absent."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        out = np.full(states.shape[0], -1, dtype=np.int64)
        if states.shape[0] == 0:
            return out
        inside = (states >= 0).all(axis=1) & (states.sum(axis=1) == self.n)
        base = self.radix
        if self.caps is not None:
            inside &= (states <= np.asarray(self.caps)).all(axis=1)
        elif base is not None:
            inside &= (states < base).all(axis=1)
        if base is None:
            table = self._table
            for i in np.flatnonzero(inside):
                out[i] = table.get(np.ascontiguousarray(states[i]).tobytes(), -1)
            return out
        sorted_codes, order = self._table
        codes = self.encode(states[inside])
        pos = np.searchsorted(sorted_codes, codes)
        pos = np.minimum(pos, len(sorted_codes) - 1)
        hit = sorted_codes[pos] == codes
        res = np.where(hit, order[pos], -1)
        out[inside] = res
        return out

    def index(self, state) -> int:
        i = int(self.lookup(np.asarray(tuple(state))[None, :])[0])
        if i < 0:
            raise UsageError(f"state {tuple(state)} is not in the sector basis")
        return i


def _enumerate(num_modes: int, n: int, caps) -> np.ndarray:
    if caps is None:
        caps = (n,) * num_modes
    tail_cap = [0] * (num_modes + 1)
    for i in range(num_modes - 1, -1, -1):
        tail_cap[i] = tail_cap[i + 1] + caps[i]

    @lru_cache(maxsize=None)
    def rec(i: int, left: int) -> np.ndarray:
        if i == num_modes - 1:
            if left <= caps[i]:
                return np.array([[left]], dtype=np.int64)
            return np.zeros((0, 1), dtype=np.int64)
        parts = []
        for v in range(min(left, caps[i]), max(0, left - tail_cap[i + 1]) - 1, -1):
            sub = rec(i + 1, left - v)
            if sub.shape[0]:
                parts.append(np.column_stack([np.full(sub.shape[0], v, dtype=np.int64), sub]))
        if not parts:
            return np.zeros((0, num_modes - i), dtype=np.int64)
        return np.concatenate(parts)

    if num_modes == 0:
        return np.zeros((1 if n == 0 else 0, 0), dtype=np.int64)
    if n > tail_cap[0]:
        return np.zeros((0, num_modes), dtype=np.int64)
    return rec(0, n)


def enumerate_sector(modes: ModeSet | int, n: int, caps: Sequence[int] | None = None) -> SectorBasis:
    """Occupation basis of the ``n``-particle sector, largest first entry first."""
    if n < 0:
        raise UsageError(f"particle number must be >= 0, got {n}")
    size = modes if isinstance(modes, int) else len(modes)
    caps = _normalize_caps(caps, size)
    return SectorBasis(int(n), _enumerate(size, int(n), caps), caps)


def enumerate_fock(modes: ModeSet, caps: Sequence[int], max_states: int | None = None) -> list[SectorBasis]:
    """All sectors ``n = 0 .. sum(caps)`` of the capped Fock space."""
    caps = _normalize_caps(caps, len(modes))
    total = math.prod(c + 1 for c in caps)
    if max_states is not None and total > max_states:
        raise UsageError(f"capped Fock space has {total} states, budget is {max_states}")
    dtype = np.int32
    grids = np.meshgrid(*[np.arange(c, -1, -1, dtype=dtype) for c in caps], indexing="ij")
    states = np.stack([g.ravel() for g in grids], axis=1)
    del grids
    nsum = states.sum(axis=1, dtype=np.int64)
    order = np.argsort(nsum, kind="stable")
    states = states[order]
    nsum = nsum[order]
    bounds = np.searchsorted(nsum, np.arange(sum(caps) + 2))
    radix = np.array([c + 1 for c in caps], dtype=np.int64)
    sectors = []
    for n in range(sum(caps) + 1):
        block = np.ascontiguousarray(states[bounds[n]:bounds[n + 1]], dtype=np.int64)
        sectors.append(SectorBasis(n, block, caps, radix))
    return sectors


def apply_ladder(state, mode, kind: str, modes: ModeSet | None = None, caps=None):
    """Apply ``a`` or ``a^dagger`` to one occupation vector.

    ``mode`` is either a position in the mode set or a :class:`Mode` (then
    ``modes`` is required).  Returns ``(new_state, amplitude)`` or ``None`` when
    the result vanishes or leaves the capped space.
    """
    occ = list(state.occupations if isinstance(state, OccupationState) else state)
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        i = int(mode)
        if not 0 <= i < len(occ):
            raise UsageError(f"mode position {i} out of range")
    else:
        if modes is None:
            raise UsageError("a mode set is needed to resolve a Mode")
        i = modes.index(mode)
    if kind == "annihilate":
        if occ[i] == 0:
            return None
        amp = math.sqrt(occ[i])
        occ[i] -= 1
    elif kind == "create":
        if caps is not None and occ[i] + 1 > caps[i]:
            return None
        amp = math.sqrt(occ[i] + 1)
        occ[i] += 1
    else:
        raise UsageError(f"kind must be 'create' or 'annihilate', got {kind!r}")
    return tuple(occ), amp


def _annihilate(states: np.ndarray, amp: np.ndarray, i: int) -> None:
    col = states[:, i]
    amp *= np.sqrt(np.maximum(col, 0))
    col -= 1


def _create(states: np.ndarray, amp: np.ndarray, i: int) -> None:
    col = states[:, i]
    amp *= np.sqrt(np.maximum(col + 1, 0))
    col += 1


@lru_cache(maxsize=64)
def interaction_terms(modes: ModeSet, w: Potential) -> tuple[tuple[float, int, int, int, int], ...]:
    """Admissible quartic terms ``w_hat(k) a+_{p+k} a+_{q-k} a_p a_q``.

    Returned as ``(w_hat(k), p, q, p+k, q-k)`` mode positions; terms with a mode
    outside the set are dropped.
    """
    idx = modes.indices
    terms = []
    for p in range(len(modes)):
        for q in range(len(modes)):
            for r in range(len(modes)):
                k = (int(idx[r, 0] - idx[p, 0]), int(idx[r, 1] - idx[p, 1]))
                s_mode = (int(idx[q, 0] - k[0]), int(idx[q, 1] - k[1]))
                if s_mode not in modes:
                    continue
                coef = w(k)
                if coef == 0.0:
                    continue
                terms.append((coef, p, q, r, modes.index(s_mode)))
    return tuple(terms)


@lru_cache(maxsize=64)
def _merged_terms(modes: ModeSet, w: Potential) -> np.ndarray:
    # creators commute among themselves and so do annihilators, so the
    # operator only depends on the unordered pairs {p, q} and {r, s}
    merged: dict[tuple[int, int, int, int], float] = {}
    for coef, p, q, r, s in interaction_terms(modes, w):
        key = (min(p, q), max(p, q), min(r, s), max(r, s))
        merged[key] = merged.get(key, 0.0) + coef
    rows = [(c,) + key for key, c in sorted(merged.items())]
    return np.array(rows, dtype=float).reshape(-1, 5)


def assemble_hamiltonian(basis: SectorBasis, modes: ModeSet, w: Potential, lam: float) -> sp.csr_matrix:
    """Sector matrix of ``sum |k|^2 a+a + lam/2 sum w_hat(k) a+ a+ a a``."""
    if lam < 0:
        raise UsageError("lambda must be >= 0")
    if basis.num_modes != len(modes):
        raise UsageError("basis and mode set have different sizes")
    dim = len(basis)
    states = basis.states
    diag = states @ modes.kinetic
    rows = [np.arange(dim)]
    cols = [np.arange(dim)]
    vals = [diag.astype(float)]
    if lam > 0 and basis.n >= 2:
        terms = _merged_terms(modes, w)
        coef = terms[:, 0]
        p, q, r, s = (terms[:, i].astype(np.intp) for i in range(1, 5))
        # occupations seen by each ladder operator, applied right to left
        nq = states[:, q]
        np_ = states[:, p] - (p == q)
        ns = states[:, s] - (s == q) - (s == p)
        nr = states[:, r] - (r == q) - (r == p) + (r == s)
        amp = np.sqrt(nq * np.maximum(np_, 0) * (ns + 1) * np.maximum(nr + 1, 0), dtype=float)
        ok = (np_ > 0) & (nq > 0)
        if basis.caps is not None:
            caps = np.asarray(basis.caps)
            ok &= (ns + 1 <= caps[s]) & (nr + 1 <= caps[r])
        if basis.radix is not None:
            wts = basis._weights
            shift = wts[r] + wts[s] - wts[p] - wts[q]
            sorted_codes, order = basis._table
            src_codes = basis.encode(states)
            tgt_codes = (src_codes[:, None] + shift[None, :])[ok]
            pos = np.minimum(np.searchsorted(sorted_codes, tgt_codes), dim - 1)
            tgt = np.where(sorted_codes[pos] == tgt_codes, order[pos], -1)
        else:
            rows_i, cols_t = np.nonzero(ok)
            work = states[rows_i].copy()
            np.subtract.at(work, (np.arange(len(rows_i)), q[cols_t]), 1)
            np.subtract.at(work, (np.arange(len(rows_i)), p[cols_t]), 1)
            np.add.at(work, (np.arange(len(rows_i)), s[cols_t]), 1)
            np.add.at(work, (np.arange(len(rows_i)), r[cols_t]), 1)
            tgt = basis.lookup(work)
        src = np.broadcast_to(np.arange(dim)[:, None], ok.shape)[ok]
        val = (0.5 * lam * amp * coef[None, :])[ok]
        hit = tgt >= 0
        rows.append(tgt[hit])
        cols.append(src[hit])
        vals.append(val[hit])
    h = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    h.sum_duplicates()
    return h


def momentum_indices(basis: SectorBasis, modes: ModeSet) -> np.ndarray:
    """Total momentum of each basis state in integer units (``k / 2pi``)."""
    return basis.states @ modes.indices


def number_and_momentum(basis: SectorBasis, modes: ModeSet):
    """Diagonal number operator and the two components of total momentum."""
    dim = len(basis)
    number = sp.diags(np.full(dim, float(basis.n)), format="csr")
    p = TWO_PI * momentum_indices(basis, modes).astype(float)
    return number, (sp.diags(p[:, 0], format="csr"), sp.diags(p[:, 1], format="csr"))


def ladder_matrix(src: SectorBasis, dst: SectorBasis, mode: int, kind: str) -> sp.csr_matrix:
    """Matrix of ``a_mode`` (``src`` n -> ``dst`` n-1) or ``a+_mode`` (n -> n+1)."""
    work = src.states.copy()
    amp = np.ones(len(src))
    if kind == "annihilate":
        _annihilate(work, amp, mode)
    elif kind == "create":
        _create(work, amp, mode)
    else:
        raise UsageError(f"kind must be 'create' or 'annihilate', got {kind!r}")
    ok = amp > 0
    tgt = dst.lookup(work[ok])
    hit = tgt >= 0
    cols = np.arange(len(src))[ok][hit]
    return sp.csr_matrix((amp[ok][hit], (tgt[hit], cols)), shape=(len(dst), len(src)))


__all__ = [
    "Mode",
    "OccupationState",
    "SectorBasis",
    "apply_ladder",
    "assemble_hamiltonian",
    "enumerate_fock",
    "enumerate_sector",
    "interaction_terms",
    "ladder_matrix",
    "momentum_indices",
    "number_and_momentum",
    "FOUR_PI_SQ",
]
