"""Execution-Cache-Memory (ECM) model composition.

Model quantities are carried as exact rationals (:class:`fractions.Fraction`).
Floats handed in are interpreted by their shortest decimal representation, so
``9.2`` becomes ``46/5`` and sums such as ``9 + 9.2 + 1`` stay exact.  Rounding
happens only when numbers are formatted.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from enum import Enum
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Union

Number = Union[int, float, Fraction]

__all__ = [
    "ECMInputs",
    "ECMPrediction",
    "LevelTransfer",
    "OverlapPolicy",
    "ScalingCurve",
    "ShorthandError",
    "WorkUnit",
    "compose_prediction",
    "default_source_names",
    "exact",
    "format_number",
    "format_shorthand",
    "format_values",
    "parse_shorthand",
    "predicted_performance",
    "saturated_performance",
    "saturation_point",
    "scale_curve",
]


def exact(value: Number | str) -> Fraction:
    """Return ``value`` as an exact rational, reading floats as decimals."""
    if isinstance(value, bool):
        raise TypeError("booleans are not model quantities")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        return Fraction(value.strip())
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite model quantity: {value!r}")
    return Fraction(repr(value))


def _nonneg(value: Number, what: str) -> Fraction:
    q = exact(value)
    if q < 0:
        raise ValueError(f"{what} must be non-negative, got {value}")
    return q


class OverlapPolicy(str, Enum):
    """How data transfers through the hierarchy combine."""

    SERIAL_TRANSFERS = "serial-transfers"
    FULL_OVERLAP_OUTERMOST = "full-overlap-outermost"


def default_source_names(n_transfers: int) -> list[str]:
    """Data-source level names for a hierarchy with ``n_transfers`` boundaries.

    >>> default_source_names(3)
    ['L1', 'L2', 'L3', 'MEM']
    >>> default_source_names(1)
    ['L1', 'MEM']
    """
    if n_transfers == 0:
        return ["L1"]
    return [f"L{i}" for i in range(1, n_transfers + 1)] + ["MEM"]


@dataclass(frozen=True)
class LevelTransfer:
    """Cycles to move one CL-worth of work across one hierarchy boundary."""

    name: str
    cycles: Fraction
    penalty: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "cycles", _nonneg(self.cycles, "transfer cycles"))
        object.__setattr__(self, "penalty", _nonneg(self.penalty, "latency penalty"))

    @property
    def total(self) -> Fraction:
        return self.cycles + self.penalty


@dataclass(frozen=True)
class ECMInputs:
    """The ``{T_OL || T_nOL | T_L1L2 | ...}`` input tuple.

    ``t_nol_levels`` optionally gives a distinct non-overlapping time for each
    data-source level (L1 first).  It must end in ``t_nol``.
    """

    t_ol: Fraction
    t_nol: Fraction
    transfers: tuple[LevelTransfer, ...] = ()
    t_nol_levels: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "t_ol", _nonneg(self.t_ol, "t_ol"))
        object.__setattr__(self, "t_nol", _nonneg(self.t_nol, "t_nol"))
        transfers = tuple(self.transfers)
        for t in transfers:
            if not isinstance(t, LevelTransfer):
                raise TypeError(f"expected LevelTransfer, got {type(t).__name__}")
        object.__setattr__(self, "transfers", transfers)
        if self.t_nol_levels is not None:
            levels = tuple(_nonneg(v, "t_nol level") for v in self.t_nol_levels)
            if len(levels) != len(transfers) + 1:
                raise ValueError(
                    f"t_nol_levels needs {len(transfers) + 1} entries, got {len(levels)}"
                )
            if any(b < a for a, b in zip(levels, levels[1:])):
                raise ValueError("t_nol_levels must be non-decreasing outward")
            if levels[-1] != self.t_nol:
                raise ValueError("t_nol must equal the outermost t_nol_levels entry")
            # a constant per-level tuple is the same model as a single t_nol
            object.__setattr__(self, "t_nol_levels", None if levels[0] == levels[-1] else levels)

    def nol_at(self, level: int) -> Fraction:
        if self.t_nol_levels is None:
            return self.t_nol
        return self.t_nol_levels[level]

    @property
    def source_names(self) -> list[str]:
        """Data-source level names, recovered from the transfer labels."""
        defaults = default_source_names(len(self.transfers))
        names = ["L1"]
        for i, t in enumerate(self.transfers):
            prev = names[-1]
            if t.name.startswith(prev) and len(t.name) > len(prev):
                names.append(t.name[len(prev):])
            else:
                names.append(defaults[i + 1])
        return names


@dataclass(frozen=True)
class ECMPrediction:
    """Per-level runtime predictions ``{T_core | T_L2 | ... | T_Mem}``.

    ``bottleneck`` is the bandwidth part of the outermost transfer (penalty
    excluded); it is only known when the prediction was composed from inputs.
    """

    levels: tuple[tuple[str, Fraction], ...]
    bottleneck: Fraction | None = None

    def __post_init__(self):
        levels = tuple((str(name), _nonneg(c, "predicted cycles")) for name, c in self.levels)
        if not levels:
            raise ValueError("a prediction needs at least the core level")
        if any(b[1] < a[1] for a, b in zip(levels, levels[1:])):
            raise ValueError("predicted cycles must be non-decreasing outward")
        object.__setattr__(self, "levels", levels)
        if self.bottleneck is not None:
            object.__setattr__(self, "bottleneck", _nonneg(self.bottleneck, "bottleneck"))

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.levels]

    @property
    def cycles(self) -> list[Fraction]:
        return [c for _, c in self.levels]

    def __getitem__(self, name: str) -> Fraction:
        for level, cycles in self.levels:
            if level == name:
                return cycles
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class WorkUnit:
    name: str
    per_cl: int
    flops_per_unit: int = 1

    def __post_init__(self):
        if int(self.per_cl) != self.per_cl or self.per_cl < 1:
            raise ValueError(f"per_cl must be a positive integer, got {self.per_cl}")
        if int(self.flops_per_unit) != self.flops_per_unit or self.flops_per_unit < 1:
            raise ValueError(f"flops_per_unit must be a positive integer, got {self.flops_per_unit}")
        object.__setattr__(self, "per_cl", int(self.per_cl))
        object.__setattr__(self, "flops_per_unit", int(self.flops_per_unit))

    @property
    def unit_label(self) -> str:
        """Rate label for 10^9 units per second, e.g. ``GUP/s``."""
        short = {"update": "UP", "flop": "FLOP"}.get(self.name, self.name)
        return f"G{short}/s"


@dataclass(frozen=True)
class ScalingCurve:
    points: tuple[tuple[int, float], ...]
    saturation_cores: int
    saturation_performance: float


def compose_prediction(
    inputs: ECMInputs,
    overlap_policy: OverlapPolicy = OverlapPolicy.SERIAL_TRANSFERS,
) -> ECMPrediction:
    """Combine in-core and transfer times into one runtime per data source.

    With serial transfers, level ``k`` costs
    ``max(t_ol, t_nol + sum of transfers and penalties up to k)``.  With
    ``FULL_OVERLAP_OUTERMOST`` the two outermost transfers overlap, so the
    memory level pays only the larger of them.
    """
    policy = OverlapPolicy(overlap_policy)
    names = inputs.source_names
    levels = [(names[0], max(inputs.t_ol, inputs.nol_at(0)))]
    partial = Fraction(0)
    n = len(inputs.transfers)
    for k, transfer in enumerate(inputs.transfers, start=1):
        data = partial + transfer.total
        if policy is OverlapPolicy.FULL_OVERLAP_OUTERMOST and k == n and n >= 2:
            previous = inputs.transfers[-2].total
            data = partial - previous + max(previous, transfer.total)
        levels.append((names[k], max(inputs.t_ol, inputs.nol_at(k) + data)))
        partial += transfer.total
    bottleneck = inputs.transfers[-1].cycles if inputs.transfers else None
    return ECMPrediction(tuple(levels), bottleneck=bottleneck)


def predicted_performance(
    pred: ECMPrediction, work: WorkUnit, frequency_ghz: Number
) -> list[tuple[str, float]]:
    """Work units per second per level, in units of 10^9/s."""
    f = exact(frequency_ghz)
    if f <= 0:
        raise ValueError("frequency must be positive")
    out = []
    for name, cycles in pred.levels:
        if cycles == 0:
            raise ValueError(f"degenerate prediction: level {name} takes zero cycles")
        out.append((name, float(work.per_cl * f / cycles)))
    return out


def _bottleneck(pred: ECMPrediction, bottleneck: Number | None) -> Fraction:
    if len(pred) < 2:
        raise ValueError("not memory-bound model: prediction has no memory level")
    if bottleneck is None:
        bottleneck = pred.bottleneck
    if bottleneck is None:
        raise ValueError("not memory-bound model: bottleneck transfer time unknown")
    q = exact(bottleneck)
    if q <= 0:
        raise ValueError("not memory-bound model: bottleneck transfer takes zero cycles")
    return q


def saturation_point(pred: ECMPrediction, bottleneck: Number | None = None) -> int:
    """Cores needed to saturate the memory bottleneck, ``ceil(T_Mem / T_bn)``."""
    bn = _bottleneck(pred, bottleneck)
    return max(1, math.ceil(pred.cycles[-1] / bn))


def saturated_performance(
    bottleneck_cycles: Number, work: WorkUnit, frequency_ghz: Number
) -> float:
    """Bandwidth-bound performance ``f * W_CL / T_bn`` in 10^9 units/s."""
    bn = exact(bottleneck_cycles)
    if bn <= 0:
        raise ValueError("bottleneck cycles must be positive")
    return float(exact(frequency_ghz) * work.per_cl / bn)


def scale_curve(
    pred: ECMPrediction,
    work: WorkUnit,
    frequency_ghz: Number,
    max_cores: int,
    domains: int = 1,
    bottleneck: Number | None = None,
) -> ScalingCurve:
    """Linear-until-saturation multicore scaling.

    Cores are assigned round-robin to memory domains; each domain scales
    linearly from single-core memory performance and caps at its saturated
    performance.  The chip curve sums the domains.
    """
    if max_cores < 1 or domains < 1:
        raise ValueError("max_cores and domains must be >= 1")
    bn = _bottleneck(pred, bottleneck)
    f = exact(frequency_ghz)
    single = work.per_cl * f / pred.cycles[-1]
    p_sat = work.per_cl * f / bn
    points = []
    for n in range(1, max_cores + 1):
        per_domain = [n // domains + (1 if d < n % domains else 0) for d in range(domains)]
        total = sum(min(k * single, p_sat) for k in per_domain)
        points.append((n, float(total)))
    n_s = saturation_point(pred, bn)
    return ScalingCurve(tuple(points), n_s * domains, float(domains * p_sat))


# -- shorthand notation -------------------------------------------------------


class ShorthandError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.pos = pos


def _terminates(q: Fraction) -> bool:
    d = q.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


def format_number(value: Number, digits: int | None = None, fixed: bool = False) -> str:
    """Render a model quantity.

    Without ``digits`` terminating decimals print exactly (``46/5`` -> ``9.2``)
    and other rationals round to 6 decimals.  ``fixed`` keeps trailing zeros.
    """
    q = exact(value)
    if digits is None:
        if _terminates(q):
            digits = 0
            while (q * 10**digits).denominator != 1:
                digits += 1
        else:
            digits = 6
    with localcontext() as ctx:
        ctx.prec = 60
        d = (Decimal(q.numerator) / Decimal(q.denominator)).quantize(
            Decimal(1).scaleb(-digits), rounding=ROUND_HALF_EVEN
        )
    text = f"{d:f}"
    if not fixed and "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def format_values(values: Iterable[Number], digits: int | None = None,
                  fixed: bool = False, unit: str = "cy") -> str:
    body = " | ".join(format_number(v, digits, fixed) for v in values)
    return f"{{{body}}} {unit}" if unit else f"{{{body}}}"


def format_shorthand(x: ECMInputs | ECMPrediction, digits: int | None = None) -> str:
    """``{1 || 2 | 2 | 4+1 | 9.2+1} cy`` for inputs, ``{2 | 4 | 9 | 19.2} cy`` for predictions."""
    if isinstance(x, ECMPrediction):
        return format_values(x.cycles, digits)
    if not isinstance(x, ECMInputs):
        raise TypeError(f"cannot format {type(x).__name__}")

    def num(v):
        return format_number(v, digits)

    if x.t_nol_levels is None:
        nol = num(x.t_nol)
    else:
        names = x.source_names
        nol = num(x.t_nol_levels[0])
        for k in range(1, len(x.t_nol_levels)):
            step = x.t_nol_levels[k] - x.t_nol_levels[k - 1]
            if step:
                nol += f"+{num(step)}_{names[k]}"
    parts = [f"{num(x.t_ol)} || {nol}"]
    for t in x.transfers:
        parts.append(num(t.cycles) + (f"+{num(t.penalty)}" if t.penalty else ""))
    return "{" + " | ".join(parts) + "} cy"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z][A-Za-z0-9]*)"
    r"|(?P<op>\|\||‖|\||┆|\+|_|\{|\}))"
)
_ALIASES = {"‖": "||", "┆": "|"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ShorthandError("unexpected character", text, pos)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "op":
            value = _ALIASES.get(value, value)
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _source_index(name: str, sources: list[str]) -> int | None:
    """Position of a data source; ``Lk`` also works positionally, ``MEM`` is the last."""
    if name in sources:
        return sources.index(name)
    m = re.fullmatch(r"L(\d+)", name)
    if m and 1 <= int(m.group(1)) <= len(sources):
        return int(m.group(1)) - 1
    if name.upper() == "MEM":
        return len(sources) - 1
    return None


def parse_shorthand(text: str) -> ECMInputs | ECMPrediction:
    """Parse input (``{a || b | ...}``) or prediction (``{a | b | ...}``) shorthand.

    Penalties are written ``cycles+penalty``; per-level non-overlapping time
    as ``2+2_L2+2_MEM``.  A trailing ``cy`` is optional.
    """
    tokens = _tokenize(text)
    i = 0

    def peek():
        return tokens[i]

    def take(kind, value=None, what=None):
        nonlocal i
        k, v, p = tokens[i]
        if k != kind or (value is not None and v != value):
            expected = what or repr(value or kind)
            found = repr(v) if k != "end" else "end of input"
            raise ShorthandError(f"expected {expected}, found {found}", text, p)
        i += 1
        return v

    def number():
        return Fraction(take("num", what="a number"))

    take("op", "{")
    first = number()
    if peek()[:2] == ("op", "||"):
        take("op", "||")
        nol_base = number()
        steps = []
        while peek()[:2] == ("op", "+"):
            take("op", "+")
            amount = number()
            take("op", "_")
            p = peek()[2]
            steps.append((amount, take("name", what="a level name"), p))
        transfers = []
        while peek()[:2] == ("op", "|"):
            take("op", "|")
            cycles = number()
            penalty = Fraction(0)
            if peek()[:2] == ("op", "+"):
                take("op", "+")
                penalty = number()
            transfers.append((cycles, penalty))
        take("op", "}")
        sources = default_source_names(len(transfers))
        built = [
            LevelTransfer(f"{sources[j]}{sources[j + 1]}", c, p)
            for j, (c, p) in enumerate(transfers)
        ]
        levels = None
        if steps:
            levels = [nol_base] * len(sources)
            last = 0
            for amount, name, p in steps:
                idx = _source_index(name, sources)
                if idx is None or idx <= last:
                    raise ShorthandError(f"unknown or out-of-order level {name!r}", text, p)
                last = idx
                for j in range(last, len(sources)):
                    levels[j] += amount
        result: ECMInputs | ECMPrediction = ECMInputs(
            first, levels[-1] if levels else nol_base, tuple(built),
            tuple(levels) if levels else None,
        )
    else:
        values = [first]
        while peek()[:2] == ("op", "|"):
            take("op", "|")
            values.append(number())
        take("op", "}")
        names = default_source_names(len(values) - 1)
        try:
            result = ECMPrediction(tuple(zip(names, values)))
        except ValueError as exc:
            raise ShorthandError(str(exc), text, 0) from None
    if peek()[0] == "name":
        take("name", "cy")
    take("end", what="end of input")
    return result

