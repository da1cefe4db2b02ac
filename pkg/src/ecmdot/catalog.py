"""Machine and kernel description files.

Descriptions are TOML.  Floats are read as exact decimals, and rationals that
have no finite decimal form may be written as strings such as ``"32/5"``.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import tomli_w

from .model import (
    ECMInputs,
    ECMPrediction,
    LevelTransfer,
    OverlapPolicy,
    WorkUnit,
    compose_prediction,
    exact,
)
from .scheduler import (
    CLASSES,
    MIX_FIELDS,
    DependencyChain,
    InstructionMix,
    SharedUnit,
    UnitThroughputs,
    in_core_times,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
NUMERIC_VARIANTS = ("naive", "kahan")
PRECISIONS = ("f32", "f64")


class SchemaError(ValueError):
    """A description file violates the schema."""


class BindingError(ValueError):
    """A kernel does not fit the machine it is bound to."""


@dataclass(frozen=True)
class MemoryLevel:
    """A data source beyond L1 and the bandwidth of its link towards L1.

    ``cy_per_cl`` pins the per-CL transfer time when a vendor figure is
    rounded differently from what the bandwidth gives.
    """

    name: str
    bandwidth_bpc: Fraction | None = None
    sustained_gbs: Fraction | None = None
    penalty_cy: Fraction = Fraction(0)
    capacity_bytes: int | None = None
    cy_per_cl: Fraction | None = None

    def __post_init__(self):
        if (self.bandwidth_bpc is None) == (self.sustained_gbs is None):
            raise SchemaError(
                f"level {self.name!r}: exactly one of bandwidth_bpc, sustained_gbs required"
            )
        for key in ("bandwidth_bpc", "sustained_gbs", "cy_per_cl"):
            value = getattr(self, key)
            if value is not None:
                value = exact(value)
                if value <= 0:
                    raise SchemaError(f"level {self.name!r}: {key} must be > 0")
                object.__setattr__(self, key, value)
        penalty = exact(self.penalty_cy)
        if penalty < 0:
            raise SchemaError(f"level {self.name!r}: penalty_cy must be >= 0")
        object.__setattr__(self, "penalty_cy", penalty)
        if self.capacity_bytes is not None and self.capacity_bytes <= 0:
            raise SchemaError(f"level {self.name!r}: capacity_bytes must be > 0")

    def cycles_per_cl(self, cacheline_bytes: int, frequency_ghz: Fraction) -> Fraction:
        if self.cy_per_cl is not None:
            return self.cy_per_cl
        if self.bandwidth_bpc is not None:
            return cacheline_bytes / self.bandwidth_bpc
        return cacheline_bytes * frequency_ghz / self.sustained_gbs


@dataclass(frozen=True)
class MachineDescription:
    name: str
    frequency_ghz: Fraction
    cores: int
    memory_domains: int
    cacheline_bytes: int
    simd_bytes: int
    levels: tuple[MemoryLevel, ...]
    throughputs: UnitThroughputs
    overlap_policy: OverlapPolicy = OverlapPolicy.SERIAL_TRANSFERS
    l1_bytes: int | None = None
    description: str = ""

    def __post_init__(self):
        f = exact(self.frequency_ghz)
        if f <= 0:
            raise SchemaError("frequency_ghz must be > 0")
        object.__setattr__(self, "frequency_ghz", f)
        if self.cacheline_bytes not in (64, 128):
            raise SchemaError("cacheline_bytes must be 64 or 128")
        for key in ("cores", "memory_domains", "simd_bytes"):
            if getattr(self, key) < 1:
                raise SchemaError(f"{key} must be >= 1")
        if self.cores % self.memory_domains:
            raise SchemaError("cores must divide evenly into memory_domains")
        levels = tuple(self.levels)
        if not levels:
            raise SchemaError("at least one level is required")
        names = ["L1"] + [lv.name for lv in levels]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate level names: {names}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "overlap_policy", OverlapPolicy(self.overlap_policy))

    @property
    def source_names(self) -> list[str]:
        return ["L1"] + [lv.name for lv in self.levels]

    @property
    def cores_per_domain(self) -> int:
        return self.cores // self.memory_domains

    def capacities(self) -> list[int | None]:
        """Capacity in bytes per data source, L1 first; memory is unbounded."""
        return [self.l1_bytes] + [lv.capacity_bytes for lv in self.levels]


@dataclass(frozen=True)
class KernelOverrides:
    """Printed or measured values that replace derived ones, keyed by data source."""

    t_ol: Fraction | None = None
    t_nol: Fraction | None = None
    t_nol_levels: Mapping[str, Fraction] = field(default_factory=dict)
    transfer_cy: Mapping[str, Fraction] = field(default_factory=dict)
    penalty_cy: Mapping[str, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        for key in ("t_ol", "t_nol"):
            if getattr(self, key) is not None:
                object.__setattr__(self, key, _nonneg(getattr(self, key), f"overrides.{key}"))
        for key in ("t_nol_levels", "transfer_cy", "penalty_cy"):
            table = {str(k): _nonneg(v, f"overrides.{key}.{k}") for k, v in dict(getattr(self, key)).items()}
            object.__setattr__(self, key, table)

    def __bool__(self) -> bool:
        return any(
            (self.t_ol is not None, self.t_nol is not None, self.t_nol_levels,
             self.transfer_cy, self.penalty_cy)
        )


@dataclass(frozen=True)
class NumericVariant:
    """How the bench harness runs the kernel: scheme, lane count and precision."""

    variant: str = "naive"
    lanes: int = 1
    unroll: int = 1
    precision: str = "f32"

    def __post_init__(self):
        if self.variant not in NUMERIC_VARIANTS:
            raise SchemaError(f"numeric.variant must be one of {NUMERIC_VARIANTS}")
        if self.precision not in PRECISIONS:
            raise SchemaError(f"numeric.precision must be one of {PRECISIONS}")
        if self.lanes < 1 or self.unroll < 1:
            raise SchemaError("numeric.lanes and numeric.unroll must be >= 1")


@dataclass(frozen=True)
class KernelDescription:
    name: str
    work: WorkUnit
    mix: InstructionMix
    traffic: tuple[Fraction, ...]
    chain: DependencyChain | None = None
    overrides: KernelOverrides = field(default_factory=KernelOverrides)
    max_unroll: int = 1
    numeric: NumericVariant = field(default_factory=NumericVariant)
    description: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "traffic", tuple(_nonneg(t, "traffic entry") for t in self.traffic)
        )
        if self.max_unroll < 1:
            raise SchemaError("max_unroll must be >= 1")
        if self.chain is not None and self.chain.unroll > self.max_unroll:
            raise SchemaError(
                f"chain unroll {self.chain.unroll} exceeds max_unroll {self.max_unroll}"
            )


def _nonneg(value, what: str) -> Fraction:
    try:
        q = exact(value)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{what}: {exc}") from None
    if q < 0:
        raise SchemaError(f"{what} must be >= 0")
    return q


# -- binding -----------------------------------------------------------------


def _check_fit(machine: MachineDescription, kernel: KernelDescription) -> list[MemoryLevel]:
    if len(kernel.traffic) > len(machine.levels):
        raise BindingError(
            f"kernel {kernel.name!r} has {len(kernel.traffic)} traffic entries but machine "
            f"{machine.name!r} has {len(machine.levels)} levels"
        )
    if not kernel.traffic:
        raise BindingError(f"kernel {kernel.name!r} has no traffic entries")
    return list(machine.levels[: len(kernel.traffic)])


def transfer_cycles(machine: MachineDescription, kernel: KernelDescription) -> list[LevelTransfer]:
    """Per-boundary transfer cycles for one CL of work, innermost first."""
    levels = _check_fit(machine, kernel)
    out = []
    prev = "L1"
    ov = kernel.overrides
    for level, cls in zip(levels, kernel.traffic):
        cycles = cls * level.cycles_per_cl(machine.cacheline_bytes, machine.frequency_ghz)
        cycles = ov.transfer_cy.get(level.name, cycles)
        penalty = ov.penalty_cy.get(level.name, level.penalty_cy)
        out.append(LevelTransfer(prev + level.name, cycles, penalty))
        prev = level.name
    return out


def bind(machine: MachineDescription, kernel: KernelDescription) -> ECMInputs:
    """ECM input tuple of ``kernel`` running on ``machine``."""
    transfers = transfer_cycles(machine, kernel)
    t_ol, t_nol = in_core_times(kernel, machine)
    names = ["L1"] + [lv.name for lv in machine.levels[: len(transfers)]]
    per_level = kernel.overrides.t_nol_levels
    unknown = set(per_level) - set(names)
    if unknown:
        raise BindingError(f"t_nol override for unknown level(s) {sorted(unknown)}")
    if not per_level:
        return ECMInputs(t_ol, t_nol, tuple(transfers))
    base = kernel.overrides.t_nol
    if base is None:
        base = in_core_times(replace(kernel, overrides=KernelOverrides()), machine)[1]
    levels = []
    current = base
    for name in names:
        current = per_level.get(name, current)
        levels.append(current)
    return ECMInputs(t_ol, levels[-1], tuple(transfers), tuple(levels))


def predict(machine: MachineDescription, kernel: KernelDescription) -> tuple[ECMInputs, ECMPrediction]:
    inputs = bind(machine, kernel)
    return inputs, compose_prediction(inputs, machine.overlap_policy)


# -- parsing -----------------------------------------------------------------


def _reject_unknown(table: Mapping[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise SchemaError(f"{where}: unknown key {unknown[0]!r}")


def _require(table: Mapping[str, Any], key: str, where: str):
    if key not in table:
        raise SchemaError(f"{where}: missing required key {key!r}")
    return table[key]


def _number(value, where: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, float, Fraction, str)):
        raise SchemaError(f"{where}: expected a number, got {type(value).__name__}")
    try:
        return exact(value) if isinstance(value, float) else Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise SchemaError(f"{where}: not a number: {value!r}") from None


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    return value


def _string(value, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: expected a string, got {value!r}")
    return value


def _table(value, where: str) -> Mapping[str, Any]:
    if not isinstance(value, dict):
        raise SchemaError(f"{where}: expected a table")
    return value


def _check_schema(doc: Mapping[str, Any], where: str) -> None:
    version = _require(doc, "schema", where)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{where}: unsupported schema version {version!r} (expected {SCHEMA_VERSION})")


_MACHINE_KEYS = (
    "schema", "name", "description", "frequency_ghz", "cores", "memory_domains",
    "cacheline_bytes", "simd_bytes", "l1_bytes", "overlap_policy", "levels", "throughputs",
)
_LEVEL_KEYS = ("name", "bandwidth_bpc", "sustained_gbs", "penalty_cy", "capacity_bytes", "cy_per_cl")
_THROUGHPUT_KEYS = (
    "load", "store", "add", "mul", "fma", "prefetch", "retirement_width",
    "retirement_counts", "non_overlapping", "shared", "uop_weights",
)


def machine_from_dict(doc: Mapping[str, Any], where: str = "machine") -> MachineDescription:
    _reject_unknown(doc, _MACHINE_KEYS, where)
    _check_schema(doc, where)
    levels = []
    raw_levels = _require(doc, "levels", where)
    if not isinstance(raw_levels, list):
        raise SchemaError(f"{where}: levels must be an array of tables")
    for i, raw in enumerate(raw_levels):
        at = f"{where}: levels[{i}]"
        raw = _table(raw, at)
        _reject_unknown(raw, _LEVEL_KEYS, at)
        levels.append(
            MemoryLevel(
                name=_string(_require(raw, "name", at), f"{at}.name"),
                bandwidth_bpc=_opt(raw, "bandwidth_bpc", _number, at),
                sustained_gbs=_opt(raw, "sustained_gbs", _number, at),
                penalty_cy=_number(raw.get("penalty_cy", 0), f"{at}.penalty_cy"),
                capacity_bytes=_opt(raw, "capacity_bytes", _integer, at),
                cy_per_cl=_opt(raw, "cy_per_cl", _number, at),
            )
        )
    tp = _table(_require(doc, "throughputs", where), f"{where}: throughputs")
    try:
        return MachineDescription(
            name=_string(_require(doc, "name", where), f"{where}.name"),
            frequency_ghz=_number(_require(doc, "frequency_ghz", where), f"{where}.frequency_ghz"),
            cores=_integer(_require(doc, "cores", where), f"{where}.cores"),
            memory_domains=_integer(doc.get("memory_domains", 1), f"{where}.memory_domains"),
            cacheline_bytes=_integer(_require(doc, "cacheline_bytes", where), f"{where}.cacheline_bytes"),
            simd_bytes=_integer(_require(doc, "simd_bytes", where), f"{where}.simd_bytes"),
            levels=tuple(levels),
            throughputs=_throughputs(tp, f"{where}: throughputs"),
            overlap_policy=_policy(doc.get("overlap_policy", "serial-transfers"), where),
            l1_bytes=_opt(doc, "l1_bytes", _integer, where),
            description=_string(doc.get("description", ""), f"{where}.description"),
        )
    except SchemaError as exc:
        if str(exc).startswith(where):
            raise
        raise SchemaError(f"{where}: {exc}") from None


def _opt(table, key, conv, where):
    return conv(table[key], f"{where}.{key}") if key in table else None


def _policy(value, where) -> OverlapPolicy:
    try:
        return OverlapPolicy(value)
    except ValueError:
        choices = ", ".join(p.value for p in OverlapPolicy)
        raise SchemaError(f"{where}: overlap_policy must be one of {choices}") from None


def _class_list(value, where) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where}: expected a list of instruction classes")
    unknown = sorted(set(value) - set(CLASSES))
    if unknown:
        raise SchemaError(f"{where}: unknown instruction class {unknown[0]!r}")
    return tuple(value)


def _throughputs(tp: Mapping[str, Any], where: str) -> UnitThroughputs:
    _reject_unknown(tp, _THROUGHPUT_KEYS, where)
    shared = []
    for i, raw in enumerate(tp.get("shared", [])):
        at = f"{where}.shared[{i}]"
        raw = _table(raw, at)
        _reject_unknown(raw, ("name", "classes", "rate"), at)
        shared.append(
            SharedUnit(
                _string(_require(raw, "name", at), f"{at}.name"),
                _class_list(_require(raw, "classes", at), f"{at}.classes"),
                _number(_require(raw, "rate", at), f"{at}.rate"),
            )
        )
    weights = _table(tp.get("uop_weights", {}), f"{where}.uop_weights")
    _reject_unknown(weights, CLASSES, f"{where}.uop_weights")
    counts = tp.get("retirement_counts", "instructions")
    if counts not in ("instructions", "uops"):
        raise SchemaError(f"{where}.retirement_counts must be 'instructions' or 'uops'")
    try:
        return UnitThroughputs(
            **{c: _opt(tp, c, _number, where) for c in CLASSES[:-1]},
            retirement_width=_opt(tp, "retirement_width", _number, where),
            retirement_counts=counts,
            non_overlapping=_class_list(tp.get("non_overlapping", []), f"{where}.non_overlapping"),
            shared=tuple(shared),
            uop_weights={k: _number(v, f"{where}.uop_weights.{k}") for k, v in weights.items()},
        )
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


_KERNEL_KEYS = (
    "schema", "name", "description", "work", "mix", "chain", "traffic",
    "overrides", "max_unroll", "numeric",
)
_OVERRIDE_KEYS = ("t_ol", "t_nol", "transfer_cy", "penalty_cy")


def kernel_from_dict(doc: Mapping[str, Any], where: str = "kernel") -> KernelDescription:
    _reject_unknown(doc, _KERNEL_KEYS, where)
    _check_schema(doc, where)
    work = _table(_require(doc, "work", where), f"{where}: work")
    _reject_unknown(work, ("name", "per_cl", "flops_per_unit"), f"{where}: work")
    mix = _table(_require(doc, "mix", where), f"{where}: mix")
    _reject_unknown(mix, MIX_FIELDS, f"{where}: mix")
    traffic = _require(doc, "traffic", where)
    if not isinstance(traffic, list):
        raise SchemaError(f"{where}: traffic must be a list of CL counts")
    chain = None
    if "chain" in doc:
        raw = _table(doc["chain"], f"{where}: chain")
        at = f"{where}: chain"
        _reject_unknown(raw, ("links", "unroll", "cls_per_iteration"), at)
        links = []
        for i, link in enumerate(_require(raw, "links", at)):
            if not (isinstance(link, list) and len(link) == 2):
                raise SchemaError(f"{at}.links[{i}]: expected [class, latency]")
            links.append((_string(link[0], f"{at}.links[{i}]"), _integer(link[1], f"{at}.links[{i}]")))
        try:
            chain = DependencyChain(
                tuple(links),
                _integer(raw.get("unroll", 1), f"{at}.unroll"),
                _number(raw.get("cls_per_iteration", 1), f"{at}.cls_per_iteration"),
            )
        except ValueError as exc:
            raise SchemaError(f"{at}: {exc}") from None
    ov = _table(doc.get("overrides", {}), f"{where}: overrides")
    _reject_unknown(ov, _OVERRIDE_KEYS, f"{where}: overrides")
    t_nol = ov.get("t_nol")
    t_nol_levels: dict[str, Fraction] = {}
    if isinstance(t_nol, dict):
        t_nol_levels = {k: _number(v, f"{where}: overrides.t_nol.{k}") for k, v in t_nol.items()}
        t_nol = None
    elif t_nol is not None:
        t_nol = _number(t_nol, f"{where}: overrides.t_nol")
    numeric = _table(doc.get("numeric", {}), f"{where}: numeric")
    _reject_unknown(numeric, ("variant", "lanes", "unroll", "precision"), f"{where}: numeric")
    try:
        return KernelDescription(
            name=_string(_require(doc, "name", where), f"{where}.name"),
            work=WorkUnit(
                _string(_require(work, "name", f"{where}: work"), f"{where}: work.name"),
                _integer(_require(work, "per_cl", f"{where}: work"), f"{where}: work.per_cl"),
                _integer(work.get("flops_per_unit", 1), f"{where}: work.flops_per_unit"),
            ),
            mix=InstructionMix(**{k: _number(v, f"{where}: mix.{k}") for k, v in mix.items()}),
            traffic=tuple(_number(t, f"{where}: traffic") for t in traffic),
            chain=chain,
            overrides=KernelOverrides(
                t_ol=_opt(ov, "t_ol", _number, f"{where}: overrides"),
                t_nol=t_nol,
                t_nol_levels=t_nol_levels,
                transfer_cy={k: _number(v, f"{where}: overrides.transfer_cy.{k}")
                             for k, v in _table(ov.get("transfer_cy", {}), where).items()},
                penalty_cy={k: _number(v, f"{where}: overrides.penalty_cy.{k}")
                            for k, v in _table(ov.get("penalty_cy", {}), where).items()},
            ),
            max_unroll=_integer(doc.get("max_unroll", 1), f"{where}.max_unroll"),
            numeric=NumericVariant(
                variant=numeric.get("variant", "naive"),
                lanes=_integer(numeric.get("lanes", 1), f"{where}: numeric.lanes"),
                unroll=_integer(numeric.get("unroll", 1), f"{where}: numeric.unroll"),
                precision=numeric.get("precision", "f32"),
            ),
            description=_string(doc.get("description", ""), f"{where}.description"),
        )
    except SchemaError as exc:
        if str(exc).startswith(where):
            raise
        raise SchemaError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def _parse(text: str, where: str) -> dict:
    try:
        return tomllib.loads(text, parse_float=Fraction)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def load_machine(path: str | Path) -> MachineDescription:
    path = Path(path)
    return machine_from_dict(_parse(path.read_text(), str(path)), str(path))


def load_kernel(path: str | Path) -> KernelDescription:
    path = Path(path)
    return kernel_from_dict(_parse(path.read_text(), str(path)), str(path))


# -- serialization -----------------------------------------------------------


def _emit(q: Fraction | int):
    """TOML scalar for an exact number: int, exactly-readable float, or "p/q"."""
    q = Fraction(q)
    if q.denominator == 1:
        return int(q)
    as_float = float(q)
    if Fraction(repr(as_float)) == q:
        return as_float
    return f"{q.numerator}/{q.denominator}"


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def machine_to_dict(m: MachineDescription) -> dict:
    tp = m.throughputs
    throughputs = _drop_none({c: _emit(getattr(tp, c)) if getattr(tp, c) is not None else None
                              for c in CLASSES[:-1]})
    if tp.retirement_width is not None:
        throughputs["retirement_width"] = _emit(tp.retirement_width)
    throughputs["retirement_counts"] = tp.retirement_counts
    throughputs["non_overlapping"] = list(tp.non_overlapping)
    if tp.uop_weights:
        throughputs["uop_weights"] = {k: _emit(v) for k, v in sorted(tp.uop_weights.items())}
    if tp.shared:
        throughputs["shared"] = [
            {"name": u.name, "classes": list(u.classes), "rate": _emit(u.rate)} for u in tp.shared
        ]
    levels = []
    for lv in m.levels:
        levels.append(_drop_none({
            "name": lv.name,
            "bandwidth_bpc": None if lv.bandwidth_bpc is None else _emit(lv.bandwidth_bpc),
            "sustained_gbs": None if lv.sustained_gbs is None else _emit(lv.sustained_gbs),
            "cy_per_cl": None if lv.cy_per_cl is None else _emit(lv.cy_per_cl),
            "penalty_cy": _emit(lv.penalty_cy),
            "capacity_bytes": lv.capacity_bytes,
        }))
    return _drop_none({
        "schema": SCHEMA_VERSION,
        "name": m.name,
        "description": m.description or None,
        "frequency_ghz": _emit(m.frequency_ghz),
        "cores": m.cores,
        "memory_domains": m.memory_domains,
        "cacheline_bytes": m.cacheline_bytes,
        "simd_bytes": m.simd_bytes,
        "l1_bytes": m.l1_bytes,
        "overlap_policy": m.overlap_policy.value,
        "throughputs": throughputs,
        "levels": levels,
    })


def kernel_to_dict(k: KernelDescription) -> dict:
    doc: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "name": k.name,
    }
    if k.description:
        doc["description"] = k.description
    doc["max_unroll"] = k.max_unroll
    doc["traffic"] = [_emit(t) for t in k.traffic]
    doc["work"] = {"name": k.work.name, "per_cl": k.work.per_cl,
                   "flops_per_unit": k.work.flops_per_unit}
    doc["mix"] = {f: _emit(getattr(k.mix, f)) for f in MIX_FIELDS if getattr(k.mix, f)}
    if k.chain is not None:
        doc["chain"] = {
            "links": [[op, lat] for op, lat in k.chain.links],
            "unroll": k.chain.unroll,
            "cls_per_iteration": _emit(k.chain.cls_per_iteration),
        }
    ov = k.overrides
    if ov:
        table: dict[str, Any] = {}
        if ov.t_ol is not None:
            table["t_ol"] = _emit(ov.t_ol)
        if ov.t_nol_levels:
            table["t_nol"] = {n: _emit(v) for n, v in ov.t_nol_levels.items()}
        elif ov.t_nol is not None:
            table["t_nol"] = _emit(ov.t_nol)
        for key in ("transfer_cy", "penalty_cy"):
            if getattr(ov, key):
                table[key] = {n: _emit(v) for n, v in getattr(ov, key).items()}
        doc["overrides"] = table
    n = k.numeric
    doc["numeric"] = {"variant": n.variant, "lanes": n.lanes, "unroll": n.unroll,
                      "precision": n.precision}
    return doc


def dump_machine(m: MachineDescription) -> str:
    return tomli_w.dumps(machine_to_dict(m))


def dump_kernel(k: KernelDescription) -> str:
    return tomli_w.dumps(kernel_to_dict(k))


# -- builtins and reference resolution --------------------------------------

_DATA = resources.files("ecmdot") / "data"


def builtin_machines() -> dict[str, MachineDescription]:
    out = {}
    for entry in sorted((_DATA / "machines").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".toml"):
            m = machine_from_dict(_parse(entry.read_text(), entry.name), entry.name)
            out[m.name] = m
    return out


def builtin_kernels(machine: str) -> dict[str, KernelDescription]:
    folder = _DATA / "kernels" / machine
    if not folder.is_dir():
        return {}
    out = {}
    for entry in sorted(folder.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".toml"):
            where = f"{machine}/{entry.name}"
            k = kernel_from_dict(_parse(entry.read_text(), where), where)
            out[k.name] = k
    return out


def builtin_catalog() -> list[tuple[MachineDescription, KernelDescription]]:
    pairs = []
    for name, machine in builtin_machines().items():
        for kernel in builtin_kernels(name).values():
            pairs.append((machine, kernel))
    return pairs


def resolve_machine(ref: str) -> MachineDescription:
    """Builtin machine name (case-insensitive) or path to a machine file."""
    builtins = builtin_machines()
    if ref.lower() in builtins:
        return builtins[ref.lower()]
    path = Path(ref)
    if path.is_file():
        return load_machine(path)
    raise FileNotFoundError(
        f"unknown machine {ref!r}: not a builtin ({', '.join(builtins)}) and no such file"
    )


def retarget(kernel: KernelDescription, machine: MachineDescription) -> KernelDescription:
    """Adapt a builtin kernel to another machine's hierarchy.

    Every level moves the same number of CLs as the innermost boundary of the
    original, and overrides for absent levels are dropped.
    """
    per_level = kernel.traffic[0] if kernel.traffic else Fraction(2)
    names = set(machine.source_names)
    ov = kernel.overrides
    overrides = KernelOverrides(
        t_ol=ov.t_ol,
        t_nol=ov.t_nol,
        t_nol_levels={k: v for k, v in ov.t_nol_levels.items() if k in names},
        transfer_cy={k: v for k, v in ov.transfer_cy.items() if k in names},
        penalty_cy={k: v for k, v in ov.penalty_cy.items() if k in names},
    )
    return replace(kernel, traffic=tuple([per_level] * len(machine.levels)), overrides=overrides)


def resolve_kernel(ref: str, machine: MachineDescription) -> KernelDescription:
    """Kernel file path, the machine's builtin kernel, or a retargeted Haswell kernel."""
    path = Path(ref)
    if path.suffix == ".toml" and path.is_file():
        return load_kernel(path)
    own = builtin_kernels(machine.name)
    if ref in own:
        return own[ref]
    fallback = builtin_kernels("hsw")
    if ref in fallback:
        return retarget(fallback[ref], machine)
    if path.is_file():
        return load_kernel(path)
    known = sorted(set(own) | set(fallback))
    raise FileNotFoundError(f"unknown kernel {ref!r} for machine {machine.name!r}; known: {', '.join(known)}")
