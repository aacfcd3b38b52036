"""Mode sets, interaction potentials and the coupled temperature schedule.

Modes are labelled by integer pairs ``(m1, m2)``; the physical wavevector on
the unit torus is ``k = 2*pi*(m1, m2)`` so the kinetic energy is
``4*pi**2*(m1**2 + m2**2)``.  Cutoff radii (``radius`` / ``sub_cutoff``) are
always given in these integer units, i.e. ``|m| <= r`` which is ``|k| <= 2*pi*r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, UsageError

TWO_PI = 2.0 * math.pi
FOUR_PI_SQ = TWO_PI**2


class Mode(NamedTuple):
    m1: int
    m2: int

    @property
    def wavevector(self) -> tuple[float, float]:
        return (TWO_PI * self.m1, TWO_PI * self.m2)

    @property
    def kinetic(self) -> float:
        return FOUR_PI_SQ * (self.m1 * self.m1 + self.m2 * self.m2)

    def __neg__(self) -> "Mode":
        return Mode(-self.m1, -self.m2)


def _radius_mask(indices: np.ndarray, radius: float) -> np.ndarray:
    sq = indices[:, 0] ** 2 + indices[:, 1] ** 2
    return sq <= radius * radius * (1.0 + 1e-12)


@dataclass(frozen=True)
class ModeSet:
    """Finite, negation-symmetric set of Fourier modes containing ``(0, 0)``.

    Modes are kept in lexicographic order of ``(m1, m2)``; this order fixes
    the column order of field samples and the occupation-vector layout.
    """

    modes: tuple[Mode, ...]

    def __post_init__(self):
        modes = tuple(Mode(int(a), int(b)) for a, b in self.modes)
        if len(set(modes)) != len(modes):
            raise UsageError("mode set contains duplicate modes")
        modes = tuple(sorted(modes))
        object.__setattr__(self, "modes", modes)
        present = set(modes)
        if Mode(0, 0) not in present:
            raise UsageError("mode set must contain the zero mode (0, 0)")
        for m in modes:
            if -m not in present:
                raise UsageError(f"mode set is not closed under negation: {tuple(m)} present, {tuple(-m)} missing")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "ModeSet":
        return cls(tuple(Mode(int(p[0]), int(p[1])) for p in pairs))

    @classmethod
    def ball(cls, radius: float) -> "ModeSet":
        """All modes with ``m1**2 + m2**2 <= radius**2``."""
        if radius < 0:
            raise DomainError("radius must be non-negative")
        r = int(math.floor(radius))
        pairs = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)]
        idx = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        keep = _radius_mask(idx, radius)
        return cls.from_pairs(idx[keep])

    @classmethod
    def momentum_ball(cls, K: float) -> "ModeSet":
        """All modes with ``|k| <= K`` for the physical wavevector ``k``."""
        return cls.ball(K / TWO_PI)

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __contains__(self, mode) -> bool:
        return tuple(mode) in self._lookup

    @cached_property
    def _lookup(self) -> dict[tuple[int, int], int]:
        return {tuple(m): i for i, m in enumerate(self.modes)}

    def index(self, mode) -> int:
        try:
            return self._lookup[tuple(int(x) for x in mode)]
        except KeyError:
            raise UsageError(f"mode {tuple(mode)} is not in the mode set") from None

    @cached_property
    def indices(self) -> np.ndarray:
        arr = np.array(self.modes, dtype=np.int64).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def kinetic(self) -> np.ndarray:
        """Kinetic energies ``|k|**2`` in mode order."""
        arr = FOUR_PI_SQ * (self.indices[:, 0] ** 2 + self.indices[:, 1] ** 2).astype(float)
        arr.setflags(write=False)
        return arr

    @property
    def zero_index(self) -> int:
        return self._lookup[(0, 0)]

    def restrict(self, radius: float | None) -> "ModeSet":
        """Sub-ball ``|m| <= radius`` of this set (``None`` returns ``self``)."""
        if radius is None:
            return self
        keep = _radius_mask(self.indices, radius)
        return ModeSet.from_pairs(self.indices[keep])

    def subset_columns(self, other: "ModeSet") -> np.ndarray:
        """Column positions of ``other``'s modes inside this set."""
        try:
            return np.array([self._lookup[tuple(m)] for m in other.modes], dtype=np.intp)
        except KeyError:
            raise UsageError("mode set is not a subset") from None

    def issubset(self, other: "ModeSet") -> bool:
        return all(tuple(m) in other._lookup for m in self.modes)

    def transfers(self) -> list[Mode]:
        """All momentum transfers ``k - k'`` with ``k, k'`` in the set, sorted."""
        diffs = {(a.m1 - b.m1, a.m2 - b.m2) for a in self.modes for b in self.modes}
        return [Mode(*d) for d in sorted(diffs)]

    def radius(self) -> float:
        return float(np.sqrt((self.indices**2).sum(axis=1).max()))


@dataclass(frozen=True)
class Potential:
    """Fourier coefficients ``w_hat(q) >= 0`` of an even pair interaction.

    Families:
      ``constant``  ``w0`` on the transfer ball ``|q| <= radius`` (everywhere if
                    ``radius`` is None), zero outside.
      ``gaussian``  ``w0 * exp(-alpha * |q|**2)`` with ``|q|**2`` the physical
                    squared wavevector.
      ``table``     explicit values; a missing ``q`` falls back to ``-q``.
    """

    kind: str
    w0: float = 0.0
    alpha: float = 0.0
    radius: float | None = None
    table: tuple[tuple[tuple[int, int], float], ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("constant", "gaussian", "table"):
            raise ConfigurationError(f"unknown potential family {self.kind!r}", entry="family")
        if self.kind != "table":
            if not math.isfinite(self.w0) or self.w0 < 0:
                raise ConfigurationError(f"w0 must be finite and >= 0, got {self.w0}", entry="w0")
            if self.kind == "gaussian" and (not math.isfinite(self.alpha) or self.alpha < 0):
                raise ConfigurationError(f"alpha must be finite and >= 0, got {self.alpha}", entry="alpha")
            return
        seen: dict[tuple[int, int], float] = {}
        for q, v in self.table:
            q = (int(q[0]), int(q[1]))
            v = float(v)
            if not math.isfinite(v):
                raise ConfigurationError(f"w_hat{q} = {v} is not finite", entry=q)
            if v < 0:
                raise ConfigurationError(f"w_hat{q} = {v} is negative; w_hat must be >= 0", entry=q)
            if q in seen and seen[q] != v:
                raise ConfigurationError(f"w_hat{q} given twice with different values", entry=q)
            seen[q] = v
        for q, v in seen.items():
            mq = (-q[0], -q[1])
            if mq in seen and seen[mq] != v:
                raise ConfigurationError(
                    f"w_hat is not even: w_hat{q} = {v} but w_hat{mq} = {seen[mq]}", entry=q
                )
        object.__setattr__(self, "table", tuple(sorted(seen.items())))

    @classmethod
    def constant(cls, w0: float, radius: float | None = None) -> "Potential":
        return cls("constant", w0=float(w0), radius=radius)

    @classmethod
    def gaussian(cls, w0: float, alpha: float) -> "Potential":
        return cls("gaussian", w0=float(w0), alpha=float(alpha))

    @classmethod
    def from_table(cls, table: Mapping) -> "Potential":
        return cls("table", table=tuple((tuple(q), float(v)) for q, v in table.items()))

    @classmethod
    def zero(cls) -> "Potential":
        return cls.constant(0.0)

    @cached_property
    def _table(self) -> dict[tuple[int, int], float]:
        return dict(self.table)

    def __call__(self, q) -> float:
        q1, q2 = int(q[0]), int(q[1])
        if self.kind == "constant":
            if self.radius is not None and q1 * q1 + q2 * q2 > self.radius**2 * (1 + 1e-12):
                return 0.0
            return self.w0
        if self.kind == "gaussian":
            return self.w0 * math.exp(-self.alpha * FOUR_PI_SQ * (q1 * q1 + q2 * q2))
        tab = self._table
        if (q1, q2) in tab:
            return tab[(q1, q2)]
        if (-q1, -q2) in tab:
            return tab[(-q1, -q2)]
        raise ConfigurationError(f"potential table has no entry for transfer q = {(q1, q2)}", entry=(q1, q2))

    def values(self, qs) -> np.ndarray:
        return np.array([self(q) for q in qs], dtype=float)

    def is_zero_on(self, modes: ModeSet) -> bool:
        return all(self(q) == 0.0 for q in modes.transfers())

    def summability(self, modes: ModeSet) -> float:
        """``sum_q (1 + |q|**2)**0.5 * w_hat(q)`` over the transfers of ``modes``."""
        return float(sum(math.sqrt(1.0 + q.kinetic) * self(q) for q in modes.transfers()))


def _check_positive(name: str, value: float) -> None:
    if not (value > 0) or not math.isfinite(value):
        raise DomainError(f"{name} must be finite and > 0, got {value}")


def counterterm_density(modes: ModeSet, kappa: float, sub_cutoff: float | None = None) -> float:
    """Free-field mean of the local mass density, ``sum 1/(|k|^2 + kappa)``."""
    _check_positive("kappa", kappa)
    sel = modes.restrict(sub_cutoff)
    return float(math.fsum(1.0 / (sel.kinetic + kappa)))


def bose_particle_number(modes: ModeSet, kappa: float, T: float) -> float:
    """Mean particle number of the free grand-canonical state at chemical potential ``-kappa``."""
    _check_positive("kappa", kappa)
    _check_positive("T", T)
    return float(math.fsum(bose_occupations(modes, kappa, T)))


def bose_occupations(modes: ModeSet, kappa: float, T: float) -> np.ndarray:
    """Per-mode Bose-Einstein occupations ``1/(exp((|k|^2+kappa)/T) - 1)``."""
    _check_positive("kappa", kappa)
    _check_positive("T", T)
    with np.errstate(over="ignore"):  # exp overflow means zero occupation
        return 1.0 / np.expm1((modes.kinetic + kappa) / T)


def coupling_schedule(modes: ModeSet, w: Potential, kappa: float, T: float, lam: float) -> tuple[float, float]:
    """Chemical potential and energy shift ``(nu, E0)`` tied to ``(T, lam)``.

    ``nu = w_hat(0)*lam*N0(T) - kappa`` and ``E0 = lam*w_hat(0)*N0(T)**2/2`` with
    ``N0`` summed over the active mode set.
    """
    _check_positive("kappa", kappa)
    _check_positive("T", T)
    if not (lam >= 0) or not math.isfinite(lam):
        raise DomainError(f"lambda must be finite and >= 0, got {lam}")
    w00 = w((0, 0))
    n0 = bose_particle_number(modes, kappa, T)
    nu = w00 * lam * n0 - kappa
    e0 = 0.5 * lam * w00 * n0 * n0
    return nu, e0


@dataclass(frozen=True)
class Schedule:
    """Temperatures with their couplings; ``lambdas=None`` means ``lam = 1/T``."""

    kappa: float
    temperatures: tuple[float, ...]
    lambdas: tuple[float, ...] | None = None

    def __post_init__(self):
        _check_positive("kappa", self.kappa)
        object.__setattr__(self, "temperatures", tuple(float(t) for t in self.temperatures))
        for t in self.temperatures:
            _check_positive("T", t)
        if self.lambdas is not None:
            lams = tuple(float(x) for x in self.lambdas)
            if len(lams) != len(self.temperatures):
                raise UsageError("need one lambda per temperature")
            for x in lams:
                _check_positive("lambda", x)
            object.__setattr__(self, "lambdas", lams)

    def coupling(self, i: int) -> float:
        if self.lambdas is None:
            return 1.0 / self.temperatures[i]
        return self.lambdas[i]

    def points(self, modes: ModeSet, w: Potential) -> list[tuple[float, float, float, float]]:
        """``(T, lam, nu, E0)`` for each temperature."""
        out = []
        for i, T in enumerate(self.temperatures):
            lam = self.coupling(i)
            nu, e0 = coupling_schedule(modes, w, self.kappa, T, lam)
            out.append((T, lam, nu, e0))
        return out
