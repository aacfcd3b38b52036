"""Experiment configuration: parsing, validation and overrides.

Two encodings carry the same content: an INI file (sections below) or a JSON
object with one member per section.  Every value is validated before any
computation; failures raise :class:`ConfigurationError` carrying the line of
the offending entry.

Sections and keys (defaults in parentheses)::

    [modes]        radius = R   or   pairs = 0,0; 1,0; -1,0
    [model]        kappa
    [potential]    family = constant | gaussian | table, w0, alpha, radius
    [potential.table]   "q1,q2" = value   (family = table only)
    [schedule]     temperatures = 4 8 16, lambda = inverse | list of values
    [sampling]     samples (100000), streams (16), seed (0), dump_ensemble (no)
    [truncation]   eps_z (1e-8), eps_tail (1e-10), growth (1.25),
                   max_states (20000000), max_block_dim (5000), max_iter (40)
    [compare]      k (1), schatten (2), s1 (yes), z_reference (monte_carlo)
    [verdict]      <quantity> = terminal tolerance, require = quantities
    [wick]         radii (1 2 3 4 5), samples (100000), streams (1), confidence (0.99)
    [output]       dir (out)
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError, DomainError, UsageError
from .model import ModeSet, Potential, Schedule

SECTIONS = {
    "modes": {"radius", "pairs"},
    "model": {"kappa"},
    "potential": {"family", "w0", "alpha", "radius"},
    "potential.table": None,
    "schedule": {"temperatures", "lambda"},
    "sampling": {"samples", "streams", "seed", "dump_ensemble"},
    "truncation": {"eps_z", "eps_tail", "growth", "max_states", "max_block_dim", "max_iter"},
    "compare": {"k", "schatten", "s1", "z_reference"},
    "verdict": None,
    "wick": {"radii", "samples", "streams", "confidence"},
    "output": {"dir"},
}
REQUIRED = ("modes", "model", "potential", "schedule")


@dataclass(frozen=True)
class SamplingConfig:
    samples: int = 100_000
    streams: int = 16
    seed: int = 0
    dump_ensemble: bool = False


@dataclass(frozen=True)
class TruncationConfig:
    eps_z: float = 1e-8
    eps_tail: float = 1e-10
    growth: float = 1.25
    max_states: int = 20_000_000
    max_block_dim: int = 5000
    max_iter: int = 40


@dataclass(frozen=True)
class CompareConfig:
    ks: tuple[int, ...] = (1,)
    schatten: tuple[float, ...] = (2.0,)
    s1: bool = True
    z_reference: str = "monte_carlo"

    def quantities(self) -> list[str]:
        names = ["free_energy"]
        names += [gap_name(k, p) for k in self.ks for p in self.schatten]
        if self.s1:
            names.append("s1")
        return names


@dataclass(frozen=True)
class WickConfig:
    radii: tuple[float, ...] = (1, 2, 3, 4, 5)
    samples: int = 100_000
    streams: int = 1
    confidence: float = 0.99


@dataclass(frozen=True)
class ExperimentConfig:
    modes: ModeSet
    kappa: float
    potential: Potential
    schedule: Schedule
    sampling: SamplingConfig = SamplingConfig()
    truncation: TruncationConfig = TruncationConfig()
    compare: CompareConfig = CompareConfig()
    wick: WickConfig = WickConfig()
    tolerances: dict = field(default_factory=dict)
    required: tuple[str, ...] | None = None
    output_dir: str = "out"
    source: str = "<memory>"
    sha256: str = ""

    def with_overrides(self, *, seed=None, samples=None, streams=None, output_dir=None) -> "ExperimentConfig":
        s = self.sampling
        s = replace(
            s,
            seed=s.seed if seed is None else int(seed),
            samples=s.samples if samples is None else int(samples),
            streams=s.streams if streams is None else int(streams),
        )
        if s.samples <= 0 or s.streams <= 0 or s.streams > s.samples:
            raise UsageError("overrides need samples >= streams > 0")
        return replace(self, sampling=s, output_dir=self.output_dir if output_dir is None else str(output_dir))

    def header(self) -> str:
        from . import __version__

        s = self.sampling
        return (
            f"# bose2d {__version__} config_sha256={self.sha256} "
            f"seed={s.seed} samples={s.samples} streams={s.streams}"
        )

    def required_quantities(self) -> list[str]:
        return list(self.required) if self.required is not None else self.compare.quantities()


def gap_name(k: int, p: float) -> str:
    return f"dm_k{k}_p{p:g}"


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _ini_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, "")] = no
            continue
        if section is None or line[:1].isspace():
            continue
        m = _KEY_RE.match(line)
        if m:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


def _json_lines(text: str, data: dict) -> dict[tuple[str, str], int]:
    raw = text.splitlines()
    lines: dict[tuple[str, str], int] = {}
    for section, body in data.items():
        sec_no = next((i for i, ln in enumerate(raw, 1) if f'"{section}"' in ln), None)
        lines[(section, "")] = sec_no
        if isinstance(body, dict):
            for key in body:
                start = sec_no or 1
                no = next((i for i, ln in enumerate(raw[start - 1:], start) if f'"{key}"' in ln), None)
                lines[(section, str(key).lower())] = no
    return lines


class _Reader:
    """Typed access to raw string/JSON values with line-aware errors."""

    def __init__(self, data: dict, lines: dict, path: str):
        self.data = data
        self.lines = lines
        self.path = path

    def fail(self, section: str, key: str, message: str):
        line = self.lines.get((section, key)) or self.lines.get((section, ""))
        where = f"{self.path}:{line}" if line else self.path
        entry = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigurationError(f"{where}: {entry}: {message}", line=line, entry=entry)

    def has(self, section: str, key: str) -> bool:
        return key in self.data.get(section, {})

    def raw(self, section: str, key: str, default=None):
        return self.data.get(section, {}).get(key, default)

    def number(self, section, key, default=None, *, kind=float, positive=False, nonneg=False):
        v = self.raw(section, key, default)
        if v is None:
            self.fail(section, key, "missing required value")
        try:
            if kind is int:
                if isinstance(v, float) and not v.is_integer():
                    raise ValueError
                x = int(str(v).strip()) if not isinstance(v, (int, float)) else int(v)
            else:
                x = float(v)
        except (TypeError, ValueError):
            self.fail(section, key, f"expected {'an integer' if kind is int else 'a number'}, got {v!r}")
        if kind is float and not math.isfinite(x):
            self.fail(section, key, f"must be finite, got {v!r}")
        if positive and not x > 0:
            self.fail(section, key, f"must be > 0, got {v!r}")
        if nonneg and x < 0:
            self.fail(section, key, f"must be >= 0, got {v!r}")
        return x

    def numbers(self, section, key, default, *, kind=float):
        v = self.raw(section, key, default)
        items = v if isinstance(v, (list, tuple)) else str(v).replace(",", " ").split()
        out = []
        for item in items:
            try:
                out.append(kind(float(item)) if kind is int and float(item).is_integer() else kind(item))
            except (TypeError, ValueError):
                self.fail(section, key, f"expected a list of numbers, got {v!r}")
        if not out:
            self.fail(section, key, "list is empty")
        return tuple(out)

    def boolean(self, section, key, default):
        v = self.raw(section, key, default)
        if isinstance(v, bool):
            return v
        s = str(v).strip().lower()
        if s in ("1", "yes", "true", "on"):
            return True
        if s in ("0", "no", "false", "off"):
            return False
        self.fail(section, key, f"expected yes/no, got {v!r}")


def _parse_pair(text) -> tuple[int, int]:
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return int(text[0]), int(text[1])
    parts = str(text).strip().strip("()").replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(text)
    return int(parts[0]), int(parts[1])


def _build(r: _Reader, path: str, sha: str) -> ExperimentConfig:
    for section in r.data:
        if section not in SECTIONS:
            r.fail(section, "", "unknown section")
        allowed = SECTIONS[section]
        if allowed is not None:
            for key in r.data[section]:
                if key not in allowed:
                    r.fail(section, key, "unknown key")
    for section in REQUIRED:
        if section not in r.data:
            raise ConfigurationError(f"{path}: missing section [{section}]", entry=f"[{section}]")

    # modes
    if r.has("modes", "pairs") == r.has("modes", "radius"):
        r.fail("modes", "", "give exactly one of 'radius' or 'pairs'")
    try:
        if r.has("modes", "radius"):
            modes = ModeSet.ball(r.number("modes", "radius", nonneg=True))
        else:
            v = r.raw("modes", "pairs")
            items = v if isinstance(v, list) else [p for p in str(v).split(";") if p.strip()]
            try:
                pairs = [_parse_pair(p) for p in items]
            except (TypeError, ValueError):
                r.fail("modes", "pairs", f"cannot parse mode pairs {v!r}")
            modes = ModeSet.from_pairs(pairs)
    except (DomainError, UsageError, ConfigurationError) as exc:
        if isinstance(exc, ConfigurationError) and exc.line is not None:
            raise
        r.fail("modes", "pairs" if r.has("modes", "pairs") else "radius", str(exc))

    kappa = r.number("model", "kappa", positive=True)

    # potential
    family = str(r.raw("potential", "family", "")).strip().lower()
    if family == "constant":
        radius = r.number("potential", "radius", nonneg=True) if r.has("potential", "radius") else None
        potential = Potential.constant(r.number("potential", "w0", nonneg=True), radius)
    elif family == "gaussian":
        potential = Potential.gaussian(
            r.number("potential", "w0", nonneg=True), r.number("potential", "alpha", nonneg=True)
        )
    elif family == "table":
        entries = r.data.get("potential.table")
        if not entries:
            r.fail("potential", "family", "family 'table' needs a [potential.table] section")
        table = {}
        for key, val in entries.items():
            try:
                q = _parse_pair(key)
            except (TypeError, ValueError):
                r.fail("potential.table", key, f"cannot parse transfer {key!r}")
            x = r.number("potential.table", key)
            if x < 0:
                r.fail("potential.table", key, f"w_hat{q} = {x:g} is negative; w_hat must be >= 0")
            table[q] = x
        try:
            potential = Potential.from_table(table)
        except ConfigurationError as exc:
            key = next((k for k in entries if _parse_pair(k) == exc.entry), "")
            r.fail("potential.table", key, str(exc))
        for q in modes.transfers():
            if tuple(q) not in table and (-q[0], -q[1]) not in table:
                r.fail("potential.table", "", f"no entry for transfer q = {tuple(q)} of the mode set")
    else:
        r.fail("potential", "family", f"expected constant, gaussian or table, got {family!r}")

    # schedule
    temps = r.numbers("schedule", "temperatures", None)
    for t in temps:
        if not (t > 0 and math.isfinite(t)):
            r.fail("schedule", "temperatures", f"temperatures must be finite and > 0, got {t}")
    if any(b <= a for a, b in zip(temps, temps[1:])):
        r.fail("schedule", "temperatures", "temperatures must be strictly increasing")
    lam_raw = r.raw("schedule", "lambda", "inverse")
    if isinstance(lam_raw, str) and lam_raw.strip().lower() in ("inverse", "1/t"):
        lambdas = None
    else:
        lambdas = r.numbers("schedule", "lambda", lam_raw)
        if len(lambdas) != len(temps):
            r.fail("schedule", "lambda", "need one lambda per temperature")
        if any(not x > 0 for x in lambdas):
            r.fail("schedule", "lambda", "lambda values must be > 0")
    schedule = Schedule(kappa, temps, lambdas)

    sampling = SamplingConfig(
        samples=r.number("sampling", "samples", SamplingConfig.samples, kind=int, positive=True),
        streams=r.number("sampling", "streams", SamplingConfig.streams, kind=int, positive=True),
        seed=r.number("sampling", "seed", SamplingConfig.seed, kind=int, nonneg=True),
        dump_ensemble=r.boolean("sampling", "dump_ensemble", False),
    )
    if sampling.streams > sampling.samples:
        r.fail("sampling", "streams", "more streams than samples")

    d = TruncationConfig()
    truncation = TruncationConfig(
        eps_z=r.number("truncation", "eps_z", d.eps_z, positive=True),
        eps_tail=r.number("truncation", "eps_tail", d.eps_tail, positive=True),
        growth=r.number("truncation", "growth", d.growth, positive=True),
        max_states=r.number("truncation", "max_states", d.max_states, kind=int, positive=True),
        max_block_dim=r.number("truncation", "max_block_dim", d.max_block_dim, kind=int, positive=True),
        max_iter=r.number("truncation", "max_iter", d.max_iter, kind=int, positive=True),
    )
    if truncation.growth <= 1:
        r.fail("truncation", "growth", "growth factor must exceed 1")

    ks = r.numbers("compare", "k", "1", kind=int)
    if any(k < 1 for k in ks):
        r.fail("compare", "k", "k values must be >= 1")
    ps = r.numbers("compare", "schatten", "2")
    if any(p < 1 for p in ps):
        r.fail("compare", "schatten", "Schatten exponents must be >= 1")
    zref = str(r.raw("compare", "z_reference", "monte_carlo")).strip().lower()
    if zref not in ("monte_carlo", "quadrature"):
        r.fail("compare", "z_reference", f"expected monte_carlo or quadrature, got {zref!r}")
    if zref == "quadrature" and [tuple(m) for m in modes] != [(0, 0)]:
        r.fail("compare", "z_reference", "quadrature reference needs the single-mode set {(0,0)}")
    compare = CompareConfig(tuple(sorted(set(ks))), tuple(sorted(set(ps))), r.boolean("compare", "s1", True), zref)

    known = compare.quantities()
    tolerances, required = {}, None
    for key, val in r.data.get("verdict", {}).items():
        if key == "require":
            names = val if isinstance(val, list) else str(val).replace(",", " ").split()
            for n in names:
                if n not in known:
                    r.fail("verdict", key, f"unknown quantity {n!r}; tracked: {', '.join(known)}")
            required = tuple(names)
            continue
        if key not in known:
            r.fail("verdict", key, f"unknown quantity {key!r}; tracked: {', '.join(known)}")
        tolerances[key] = r.number("verdict", key, positive=True)

    w = WickConfig()
    radii = r.numbers("wick", "radii", " ".join(str(x) for x in w.radii))
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 0:
        r.fail("wick", "radii", "radii must be >= 0 and strictly increasing")
    wick = WickConfig(
        radii=radii,
        samples=r.number("wick", "samples", w.samples, kind=int, positive=True),
        streams=r.number("wick", "streams", w.streams, kind=int, positive=True),
        confidence=r.number("wick", "confidence", w.confidence, positive=True),
    )
    if not wick.confidence < 1:
        r.fail("wick", "confidence", "confidence must lie in (0, 1)")

    out = str(r.raw("output", "dir", "out"))
    return ExperimentConfig(
        modes=modes,
        kappa=kappa,
        potential=potential,
        schedule=schedule,
        sampling=sampling,
        truncation=truncation,
        compare=compare,
        wick=wick,
        tolerances=tolerances,
        required=required,
        output_dir=out,
        source=path,
        sha256=sha,
    )


def parse_config(text: str, path: str = "<string>") -> ExperimentConfig:
    """Parse INI or JSON text (JSON if the first non-blank character is ``{``)."""
    sha = hashlib.sha256(text.encode()).hexdigest()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}", line=exc.lineno) from None
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigurationError(f"{path}: JSON config must map section names to objects")
        data = {s.lower(): {str(k).lower(): v for k, v in body.items()} for s, body in data.items()}
        lines = _json_lines(text, data)
    else:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            parser.read_string(text, source=path)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            where = f"{path}:{line}" if line else path
            raise ConfigurationError(f"{where}: {exc.message.splitlines()[0]}", line=line) from None
        data = {s.lower(): dict(parser[s]) for s in parser.sections()}
        lines = _ini_lines(text)
    return _build(_Reader(data, lines, path), path, sha)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))
