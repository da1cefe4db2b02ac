"""In-core execution time per cache line of work.

Two lower bounds are combined, in the spirit of modulo scheduling: the
resource bound (busiest execution unit, retirement width) and the recurrence
bound of the loop-carried dependency chain.  :func:`list_schedule` is an
independent cycle-by-cycle simulator used to check the closed-form recurrence
bound.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Mapping

from .model import exact

if TYPE_CHECKING:
    from .catalog import KernelDescription, MachineDescription

CLASSES = ("load", "store", "add", "mul", "fma", "prefetch", "other")
MIX_FIELDS = ("loads", "stores", "adds", "muls", "fmas", "prefetches", "other")
_FIELD_TO_CLASS = dict(zip(MIX_FIELDS, CLASSES))


class UnsupportedInstructionError(ValueError):
    pass


@dataclass(frozen=True)
class InstructionMix:
    """Instruction counts per CL of work (fractional for odd unroll factors)."""

    loads: Fraction = Fraction(0)
    stores: Fraction = Fraction(0)
    adds: Fraction = Fraction(0)
    muls: Fraction = Fraction(0)
    fmas: Fraction = Fraction(0)
    prefetches: Fraction = Fraction(0)
    other: Fraction = Fraction(0)

    def __post_init__(self):
        for name in MIX_FIELDS:
            q = exact(getattr(self, name))
            if q < 0:
                raise ValueError(f"instruction count {name} must be >= 0")
            object.__setattr__(self, name, q)

    def count(self, cls: str) -> Fraction:
        return getattr(self, MIX_FIELDS[CLASSES.index(cls)])

    def items(self):
        return [(cls, self.count(cls)) for cls in CLASSES]

    def scaled(self, k) -> InstructionMix:
        k = exact(k)
        return InstructionMix(**{f: getattr(self, f) * k for f in MIX_FIELDS})

    @property
    def total(self) -> Fraction:
        return sum((getattr(self, f) for f in MIX_FIELDS), Fraction(0))


@dataclass(frozen=True)
class SharedUnit:
    """Execution unit serving several instruction classes (e.g. a SIMD pipe)."""

    name: str
    classes: tuple[str, ...]
    rate: Fraction

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "rate", exact(self.rate))
        if self.rate <= 0:
            raise ValueError(f"shared unit {self.name!r} needs a positive rate")
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ValueError(f"shared unit {self.name!r}: unknown classes {sorted(unknown)}")


@dataclass(frozen=True)
class UnitThroughputs:
    """Instructions per cycle per class, plus retirement and overlap rules.

    Classes listed in ``non_overlapping`` contribute to T_nOL, everything
    else to T_OL.  A class without a rate is unsupported on the machine.
    """

    load: Fraction | None = None
    store: Fraction | None = None
    add: Fraction | None = None
    mul: Fraction | None = None
    fma: Fraction | None = None
    prefetch: Fraction | None = None
    retirement_width: Fraction | None = None
    retirement_counts: str = "instructions"
    non_overlapping: tuple[str, ...] = ()
    shared: tuple[SharedUnit, ...] = ()
    uop_weights: Mapping[str, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        for cls in CLASSES[:-1]:
            rate = getattr(self, cls)
            if rate is not None:
                rate = exact(rate)
                if rate <= 0:
                    raise ValueError(f"throughput for {cls} must be positive")
                object.__setattr__(self, cls, rate)
        if self.retirement_width is not None:
            width = exact(self.retirement_width)
            if width <= 0:
                raise ValueError("retirement_width must be positive")
            object.__setattr__(self, "retirement_width", width)
        if self.retirement_counts not in ("instructions", "uops"):
            raise ValueError("retirement_counts must be 'instructions' or 'uops'")
        object.__setattr__(self, "non_overlapping", tuple(self.non_overlapping))
        unknown = set(self.non_overlapping) - set(CLASSES)
        if unknown:
            raise ValueError(f"non_overlapping: unknown classes {sorted(unknown)}")
        shared = tuple(self.shared)
        seen: set[str] = set()
        for unit in shared:
            if seen & set(unit.classes):
                raise ValueError(f"class assigned to more than one shared unit: {unit.name}")
            seen |= set(unit.classes)
            if len({self.overlap_class(c) for c in unit.classes}) > 1:
                raise ValueError(f"shared unit {unit.name!r} mixes OL and nOL classes")
        object.__setattr__(self, "shared", shared)
        object.__setattr__(
            self, "uop_weights", {k: exact(v) for k, v in dict(self.uop_weights).items()}
        )

    def overlap_class(self, cls: str) -> str:
        return "nOL" if cls in self.non_overlapping else "OL"

    def unit_for(self, cls: str) -> tuple[str, Fraction | None]:
        """Name and rate of the unit executing ``cls``."""
        for unit in self.shared:
            if cls in unit.classes:
                return unit.name, unit.rate
        if cls == "other":
            return cls, None
        return cls, getattr(self, cls)

    def weight(self, cls: str) -> Fraction:
        if self.retirement_counts == "uops":
            return self.uop_weights.get(cls, Fraction(1))
        return Fraction(1)


@dataclass(frozen=True)
class DependencyChain:
    """Loop-carried chain of one lane, repeated ``unroll`` times per iteration."""

    links: tuple[tuple[str, int], ...]
    unroll: int = 1
    cls_per_iteration: Fraction = Fraction(1)

    def __post_init__(self):
        links = tuple((str(op), int(lat)) for op, lat in self.links)
        if not links:
            raise ValueError("dependency chain needs at least one link")
        for op, lat in links:
            if op not in CLASSES:
                raise ValueError(f"unknown instruction class in chain: {op!r}")
            if lat < 1:
                raise ValueError("link latencies must be positive integers")
        if int(self.unroll) != self.unroll or self.unroll < 1:
            raise ValueError("unroll must be a positive integer")
        cls = exact(self.cls_per_iteration)
        if cls <= 0:
            raise ValueError("cls_per_iteration must be positive")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "unroll", int(self.unroll))
        object.__setattr__(self, "cls_per_iteration", cls)


def _unit_bounds(mix: InstructionMix, units: UnitThroughputs):
    load: dict[str, Fraction] = {}
    rates: dict[str, Fraction] = {}
    overlap: dict[str, str] = {}
    for cls, count in mix.items():
        if count == 0 or cls == "other":
            continue
        unit, rate = units.unit_for(cls)
        if rate is None:
            raise UnsupportedInstructionError(f"unsupported instruction class {cls!r}")
        load[unit] = load.get(unit, Fraction(0)) + count
        rates[unit] = rate
        overlap[unit] = units.overlap_class(cls)
    t_ol = Fraction(0)
    t_nol = Fraction(0)
    for unit, count in load.items():
        t = count / rates[unit]
        if overlap[unit] == "nOL":
            t_nol = max(t_nol, t)
        else:
            t_ol = max(t_ol, t)
    retire = Fraction(0)
    if units.retirement_width:
        issued = sum((count * units.weight(cls) for cls, count in mix.items()), Fraction(0))
        retire = issued / units.retirement_width
    return t_ol, t_nol, retire


def resource_bound(mix: InstructionMix, units: UnitThroughputs) -> tuple[Fraction, Fraction]:
    """``(t_ol, t_nol)`` from unit throughputs.

    The retirement limit raises ``t_ol`` only when it exceeds the whole
    in-core time ``max(t_ol, t_nol)``.
    """
    t_ol, t_nol, retire = _unit_bounds(mix, units)
    if retire > max(t_ol, t_nol):
        t_ol = retire
    return t_ol, t_nol


def _rate(units: UnitThroughputs | None, cls: str) -> Fraction | None:
    if units is None:
        return None
    return units.unit_for(cls)[1]


def iteration_bound(chain: DependencyChain, units: UnitThroughputs | None = None) -> Fraction:
    """Cycles per loop iteration of the unrolled chain.

    Each link waits for its predecessor's latency, or for the other
    ``unroll - 1`` lanes to pass through the same unit, whichever is longer.
    The result is never below the per-unit resource bound of the chain.

    This assumes the lanes advance in lock-step.  It is exact for chains on a
    single unit; when links use different units a greedy schedule can stagger
    the lanes and do better, so :func:`list_schedule` is the arbiter.
    """
    u = chain.unroll
    links = chain.links
    total = Fraction(0)
    for i, (_, latency) in enumerate(links):
        nxt = links[(i + 1) % len(links)][0]
        rate = _rate(units, nxt)
        gap = Fraction(latency) if rate is None else max(Fraction(latency), u / rate)
        total += gap
    per_unit: dict[str, Fraction] = {}
    if units is not None:
        for op, _ in links:
            unit, rate = units.unit_for(op)
            if rate is not None:
                per_unit[unit] = per_unit.get(unit, Fraction(0)) + u / rate
    return max([total, *per_unit.values()])


def recurrence_bound(chain: DependencyChain, units: UnitThroughputs | None = None) -> Fraction:
    """Recurrence-limited cycles per CL of work."""
    return iteration_bound(chain, units) / chain.cls_per_iteration


def list_schedule(
    chain: DependencyChain,
    units: UnitThroughputs | None = None,
    iterations: int = 96,
) -> Fraction:
    """Simulate greedy in-order-priority issue and return steady-state cycles per iteration.

    Every cycle, ready operations are issued oldest first (program order:
    iteration, then link, then lane) as long as the issue width and the
    per-unit capacity allow.  Unit rates must be whole instructions per cycle.
    """
    u = chain.unroll
    m = len(chain.links)
    width = math.inf
    if units is not None and units.retirement_width is not None:
        width = int(units.retirement_width)
    capacity: dict[str, int] = {}
    unit_of = []
    for op, _ in chain.links:
        if units is None:
            unit_of.append(None)
            continue
        name, rate = units.unit_for(op)
        if rate is not None:
            if rate.denominator != 1:
                raise ValueError(f"list scheduler needs integral unit rates, got {rate} for {name}")
            capacity[name] = int(rate)
        unit_of.append(name if rate is not None else None)

    n_ops = iterations * m * u
    issued = [-1] * n_ops
    ready_at = [0] * n_ops

    def index(it, link, lane):
        return (it * m + link) * u + lane

    def successor(op):
        it, rest = divmod(op, m * u)
        link, lane = divmod(rest, u)
        if link + 1 < m:
            return index(it, link + 1, lane)
        if it + 1 < iterations:
            return index(it + 1, 0, lane)
        return None

    # ops whose producer has issued, keyed by program order
    candidates = [index(0, 0, lane) for lane in range(u)]
    heapq.heapify(candidates)
    cycle = 0
    remaining = n_ops
    while remaining:
        used: dict[str, int] = {}
        issued_now = 0
        deferred = []
        while candidates and issued_now < width:
            op = heapq.heappop(candidates)
            link = (op // u) % m
            unit = unit_of[link]
            if ready_at[op] > cycle or (unit is not None and used.get(unit, 0) >= capacity[unit]):
                deferred.append(op)
                continue
            issued[op] = cycle
            issued_now += 1
            remaining -= 1
            if unit is not None:
                used[unit] = used.get(unit, 0) + 1
            nxt = successor(op)
            if nxt is not None:
                ready_at[nxt] = cycle + chain.links[link][1]
                deferred.append(nxt)
        for op in deferred:
            heapq.heappush(candidates, op)
        cycle += 1

    starts = [issued[index(it, 0, 0)] for it in range(iterations)]
    tail = iterations // 3
    # steady state may repeat every few iterations; find the shortest period
    for period in range(1, tail // 2 + 1):
        steps = {starts[i + period] - starts[i] for i in range(iterations - tail, iterations - period)}
        if len(steps) == 1:
            return Fraction(steps.pop(), period)
    half = iterations // 2
    return Fraction(starts[-1] - starts[half], iterations - 1 - half)


def in_core_times(kernel: KernelDescription, machine: MachineDescription) -> tuple[Fraction, Fraction]:
    """``(t_ol, t_nol)`` for a kernel on a machine.

    ``t_ol`` is the larger of the resource and recurrence bounds unless the
    kernel overrides it; ``t_nol`` is the outermost non-overlapping time,
    honouring per-level overrides.
    """
    units = machine.throughputs
    t_ol, t_nol, retire = _unit_bounds(kernel.mix, units)
    if kernel.chain is not None:
        t_ol = max(t_ol, recurrence_bound(kernel.chain, units))
    ov = kernel.overrides
    if ov.t_ol is not None:
        t_ol = ov.t_ol
    if ov.t_nol is not None:
        t_nol = ov.t_nol
    if ov.t_nol_levels:
        t_nol = max(max(ov.t_nol_levels.values()), t_nol if ov.t_nol is not None else Fraction(0))
    if retire > max(t_ol, t_nol):
        t_ol = retire
    return t_ol, t_nol
