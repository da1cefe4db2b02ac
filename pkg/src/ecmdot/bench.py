"""Working-set sweeps, thread scaling and comparison with model predictions.

Kernels are compiled with numba, release the GIL, and repeat internally so
that a timed block is long compared to the call overhead.  Each repetition
resets every lane accumulator to ``previous * zero + 0.0`` with ``zero`` a
runtime argument, which keeps the compiler from hoisting or discarding the
work of earlier repetitions.  Lanes are reduced once, after the last one.
"""
from __future__ import annotations

import csv
import glob
import hashlib
import io
import math
import os
import statistics
import threading
import time
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
from numba import njit

from .kernels import PRECISIONS
from .model import ECMPrediction, exact

CSV_HEADER = ("variant", "precision", "bytes", "threads", "reps",
              "median_seconds", "cycles_per_cl", "gup_per_s")
SCHEMES = ("naive", "kahan")


@njit(nogil=True)
def _naive(a, b, lanes, repeat, zero):
    acc = np.zeros(lanes, dtype=a.dtype)
    n = a.size
    full = n - n % lanes
    for _ in range(repeat):
        for l in range(lanes):
            acc[l] = acc[l] * zero + 0.0
        for i in range(0, full, lanes):
            for l in range(lanes):
                acc[l] += a[i + l] * b[i + l]
        for i in range(full, n):
            acc[i - full] += a[i] * b[i]
    result = acc[0]
    for l in range(1, lanes):
        result += acc[l]
    return result


@njit(nogil=True)
def _kahan(a, b, lanes, repeat, zero):
    s = np.zeros(lanes, dtype=a.dtype)
    c = np.zeros(lanes, dtype=a.dtype)
    n = a.size
    full = n - n % lanes
    for _ in range(repeat):
        for l in range(lanes):
            s[l] = s[l] * zero + 0.0
            c[l] = c[l] * zero + 0.0
        for i in range(0, full, lanes):
            for l in range(lanes):
                prod = a[i + l] * b[i + l]
                y = prod - c[l]
                t = s[l] + y
                c[l] = (t - s[l]) - y
                s[l] = t
        for i in range(full, n):
            l = i - full
            prod = a[i] * b[i]
            y = prod - c[l]
            t = s[l] + y
            c[l] = (t - s[l]) - y
            s[l] = t
    if lanes == 1:
        return s[0]
    hs = zero + zero
    hc = hs
    for l in range(2 * lanes):
        x = s[l] if l < lanes else -c[l - lanes]
        y = x - hc
        t = hs + y
        hc = (t - hs) - y
        hs = t
    return hs


_KERNELS = {"naive": _naive, "kahan": _kahan}


def run_kernel(scheme: str, a: np.ndarray, b: np.ndarray, lanes: int = 1, repeat: int = 1):
    """Run a compiled bench kernel ``repeat`` times and return its value."""
    if scheme not in _KERNELS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return _KERNELS[scheme](a, b, lanes, repeat, a.dtype.type(0.0))


def variant_label(scheme: str, lanes: int, threads: int = 1) -> str:
    """Threaded runs split the data differently, so they count as their own variant."""
    label = f"{scheme}-l{lanes}"
    return label if threads == 1 else f"{label}-t{threads}"


@dataclass(frozen=True)
class SweepPlan:
    scheme: str
    sizes: tuple[int, ...]
    frequency_ghz: Fraction
    repetitions: int = 11
    threads: int = 1
    pinning: tuple[int, ...] | None = None
    lanes: int = 1
    precision: str = "f32"
    cacheline_bytes: int = 64
    seed: int = 42
    min_block_seconds: float = 2e-3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValueError("a sweep needs at least one size")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly ascending")
        object.__setattr__(self, "sizes", sizes)
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3")
        if self.threads < 1 or self.lanes < 1:
            raise ValueError("threads and lanes must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        f = exact(self.frequency_ghz)
        if f <= 0:
            raise ValueError("frequency must be positive")
        object.__setattr__(self, "frequency_ghz", f)
        if self.pinning is not None:
            object.__setattr__(self, "pinning", tuple(int(c) for c in self.pinning))

    @property
    def variant(self) -> str:
        return variant_label(self.scheme, self.lanes, self.threads)

    @property
    def element_bytes(self) -> int:
        return np.dtype(PRECISIONS[self.precision]).itemsize

    def digest(self) -> str:
        text = repr((self.variant, self.precision, self.sizes, self.repetitions,
                     self.threads, self.pinning, self.seed, str(self.frequency_ghz)))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BenchSample:
    variant: str
    precision: str
    bytes: int
    threads: int
    reps: int
    median_seconds: float
    cycles_per_cl: float
    gup_per_s: float
    value: float | None = field(default=None, compare=False)

    @property
    def work_units_per_second(self) -> float:
        return self.gup_per_s * 1e9


def make_sample(variant, precision, nbytes, threads, reps, median_seconds,
                frequency_ghz, cacheline_bytes, value=None) -> BenchSample:
    """Sample with cycles/CL derived exactly from the median time."""
    elem = np.dtype(PRECISIONS[precision]).itemsize
    n = nbytes // (2 * elem)
    if n < 1 or median_seconds <= 0:
        raise ValueError("samples need a non-empty working set and a positive time")
    cls = Fraction(n * elem, cacheline_bytes)
    cycles = Fraction(median_seconds) * exact(frequency_ghz) * 10**9 / cls
    gups = Fraction(n) / Fraction(median_seconds) / 10**9
    return BenchSample(variant, precision, int(nbytes), threads, reps, float(median_seconds),
                       float(cycles), float(gups), value)


# -- host topology and pinning ----------------------------------------------


def host_cpus() -> list[int]:
    try:
        return sorted(os.sched_getaffinity(0))
    except AttributeError:
        return list(range(os.cpu_count() or 1))


def _parse_cpulist(text: str) -> list[int]:
    out = []
    for part in text.strip().split(","):
        if not part:
            continue
        lo, _, hi = part.partition("-")
        out.extend(range(int(lo), int(hi or lo) + 1))
    return out


def numa_domains() -> list[list[int]]:
    """CPUs per NUMA node, restricted to those this process may use."""
    allowed = set(host_cpus())
    domains = []
    for path in sorted(glob.glob("/sys/devices/system/node/node[0-9]*/cpulist")):
        cpus = [c for c in _parse_cpulist(Path(path).read_text()) if c in allowed]
        if cpus:
            domains.append(cpus)
    return domains or [sorted(allowed)]


def round_robin_cpus(count: int) -> list[int]:
    """``count`` CPUs taking one from each memory domain in turn."""
    domains = numa_domains()
    order = []
    depth = max(len(d) for d in domains)
    for i in range(depth):
        for d in domains:
            if i < len(d):
                order.append(d[i])
    if count > len(order):
        raise ValueError(f"requested cores exceed host: {count} > {len(order)} available")
    return order[:count]


def _pin(cpu: int | None) -> None:
    if cpu is None:
        return
    try:
        os.sched_setaffinity(0, {cpu})
    except (AttributeError, OSError) as exc:
        warnings.warn(f"could not pin to CPU {cpu}: {exc}", RuntimeWarning, stacklevel=2)


# -- measurement -------------------------------------------------------------


def _inputs(n: int, precision: str, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    dtype = PRECISIONS[precision]
    return rng.uniform(0.5, 1.5, n).astype(dtype), rng.uniform(0.5, 1.5, n).astype(dtype)


def call_overhead(scheme: str = "naive", precision: str = "f32", trials: int = 200) -> float:
    """Seconds spent on one call of an empty kernel (median)."""
    empty = np.zeros(0, dtype=PRECISIONS[precision])
    run_kernel(scheme, empty, empty)
    times = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        run_kernel(scheme, empty, empty)
        times.append(time.perf_counter_ns() - t0)
    return statistics.median(times) * 1e-9


def _calibrate(fn, min_seconds: float) -> int:
    """Smallest power-of-two repeat count whose block lasts ``min_seconds``."""
    repeat = 1
    while True:
        t0 = time.perf_counter()
        fn(repeat)
        if time.perf_counter() - t0 >= min_seconds or repeat >= 1 << 24:
            return repeat
        repeat *= 2


def _block_floor(plan: SweepPlan) -> float:
    return max(plan.min_block_seconds, 100 * call_overhead(plan.scheme, plan.precision))


def _measure_single(plan: SweepPlan, nbytes: int, cpu: int | None):
    n = nbytes // (2 * plan.element_bytes)
    if n < 1:
        raise ValueError(f"working set of {nbytes} B holds no elements")
    a, b = _inputs(n, plan.precision, plan.seed)
    run_kernel(plan.scheme, a, b, plan.lanes)  # warm-up
    repeat = _calibrate(lambda r: run_kernel(plan.scheme, a, b, plan.lanes, r), _block_floor(plan))
    times = []
    values = set()
    for _ in range(plan.repetitions):
        t0 = time.perf_counter_ns()
        value = run_kernel(plan.scheme, a, b, plan.lanes, repeat)
        times.append((time.perf_counter_ns() - t0) * 1e-9 / repeat)
        values.add(float(value))
    if len(values) != 1:
        raise RuntimeError("kernel results differ between repetitions")
    return times, values.pop()


class _Worker(threading.Thread):
    """Owns one contiguous block of the input and runs it on demand."""

    def __init__(self, plan, source, lo, hi, cpu, start_gate, end_gate):
        super().__init__(daemon=True)
        self.plan, self.source, self.lo, self.hi, self.cpu = plan, source, lo, hi, cpu
        self.start_gate, self.end_gate = start_gate, end_gate
        self.repeat = 1
        self.value = None
        self.error: BaseException | None = None
        self.ready = threading.Event()
        self.stop = False

    def run(self):
        try:
            _pin(self.cpu)
            full_a, full_b = self.source
            # copy into freshly allocated arrays so pages are first touched here
            a = np.empty(self.hi - self.lo, dtype=full_a.dtype)
            b = np.empty_like(a)
            a[:] = full_a[self.lo:self.hi]
            b[:] = full_b[self.lo:self.hi]
            self.source = None
            run_kernel(self.plan.scheme, a, b, self.plan.lanes)
        except BaseException as exc:  # reported by the coordinator
            self.error = exc
            a = b = None
        self.ready.set()
        while True:
            self.start_gate.wait()
            if self.stop:
                return
            if self.error is None:
                self.value = run_kernel(self.plan.scheme, a, b, self.plan.lanes, self.repeat)
            self.end_gate.wait()


def _measure_threaded(plan: SweepPlan, nbytes: int, cpus: Sequence[int | None]):
    n = nbytes // (2 * plan.element_bytes)
    threads = len(cpus)
    if n < threads:
        raise ValueError(f"working set of {nbytes} B is too small for {threads} threads")
    bounds = [n * i // threads for i in range(threads + 1)]
    start_gate = threading.Barrier(threads + 1)
    end_gate = threading.Barrier(threads + 1)
    source = _inputs(n, plan.precision, plan.seed)
    workers = [_Worker(plan, source, bounds[i], bounds[i + 1], cpus[i], start_gate, end_gate)
               for i in range(threads)]
    for w in workers:
        w.start()
    for w in workers:
        w.ready.wait()
    del source

    def block(repeat):
        for w in workers:
            w.repeat = repeat
        start_gate.wait()
        end_gate.wait()

    try:
        failed = [w.error for w in workers if w.error is not None]
        if failed:
            raise failed[0]
        repeat = _calibrate(block, _block_floor(plan))
        times = []
        for _ in range(plan.repetitions):
            t0 = time.perf_counter_ns()
            block(repeat)
            times.append((time.perf_counter_ns() - t0) * 1e-9 / repeat)
        dtype = PRECISIONS[plan.precision]
        # per-thread partial results combined with a scalar Kahan loop
        s = dtype(0)
        c = dtype(0)
        for w in workers:
            y = dtype(w.value) - c
            t = s + y
            c = (t - s) - y
            s = t
        return times, float(s)
    finally:
        for w in workers:
            w.stop = True
        start_gate.wait()
        for w in workers:
            w.join()


def _cpus_for(plan: SweepPlan, threads: int) -> list[int | None]:
    if plan.pinning:
        if len(plan.pinning) < threads:
            raise ValueError("fewer pinning CPUs than threads")
        return list(plan.pinning[:threads])
    if threads > len(host_cpus()):
        raise ValueError(f"requested cores exceed host: {threads} > {len(host_cpus())} available")
    if threads == 1:
        return [None]
    return list(round_robin_cpus(threads))


def measure(plan: SweepPlan, nbytes: int, threads: int | None = None) -> BenchSample:
    threads = plan.threads if threads is None else threads
    cpus = _cpus_for(plan, threads)
    if threads == 1:
        times, value = _run_pinned_single(plan, nbytes, cpus[0])
    else:
        times, value = _measure_threaded(plan, nbytes, cpus)
    return make_sample(variant_label(plan.scheme, plan.lanes, threads), plan.precision, nbytes, threads, plan.repetitions,
                       statistics.median(times), plan.frequency_ghz, plan.cacheline_bytes, value)


def _run_pinned_single(plan: SweepPlan, nbytes: int, cpu: int | None):
    if cpu is None:
        return _measure_single(plan, nbytes, None)
    previous = os.sched_getaffinity(0)
    _pin(cpu)
    try:
        return _measure_single(plan, nbytes, cpu)
    finally:
        os.sched_setaffinity(0, previous)


def run_sweep(plan: SweepPlan) -> list[BenchSample]:
    return [measure(plan, size) for size in plan.sizes]


def thread_scaling(plan: SweepPlan, cores: Iterable[int], nbytes: int) -> list[BenchSample]:
    """Memory-resident performance for each core count, pinned round-robin over domains."""
    cores = list(cores)
    available = len(host_cpus()) if not plan.pinning else len(plan.pinning)
    if max(cores) > available:
        raise ValueError(f"requested cores exceed host: {max(cores)} > {available} available")
    return [measure(plan, nbytes, k) for k in cores]


def estimate_saturation(samples: Sequence[BenchSample]) -> int | None:
    """Core count where a linear-then-flat fit of performance saturates."""
    points = sorted((s.threads, s.gup_per_s) for s in samples)
    if len(points) < 2:
        return None
    slope = points[0][1] / points[0][0]
    best = None
    for j in range(1, len(points) + 1):
        plateau = statistics.median(p for _, p in points[j - 1:])
        sse = sum((p - min(slope * n, plateau)) ** 2 for n, p in points)
        if best is None or sse < best[0]:
            best = (sse, plateau)
    return max(1, math.ceil(best[1] / slope - 1e-9))


def scaling_slopes(samples: Sequence[BenchSample]) -> list[tuple[int, float]]:
    """Performance gained per added core between consecutive core counts."""
    points = sorted((s.threads, s.gup_per_s) for s in samples)
    return [(n1, (p1 - p0) / (n1 - n0)) for (n0, p0), (n1, p1) in zip(points, points[1:])]


def default_sizes(capacities: Sequence[int | None], points: int = 3,
                  memory_cap: int = 1 << 30) -> list[int]:
    """Log-spaced working sets inside each level's window, L1 first."""
    known = [c for c in capacities if c]
    sizes: set[int] = set()
    prev = None
    for cap in capacities:
        lo = 4096 if prev is None else 2 * prev
        hi = cap // 2 if cap else min(4 * max(known, default=1 << 22), memory_cap)
        if cap is None:
            lo = min(lo, hi)
        if hi >= lo:
            for x in np.geomspace(lo, hi, points):
                sizes.add(int(x) // 64 * 64)
        if cap:
            prev = cap
    return sorted(sizes)


# -- model comparison --------------------------------------------------------


@dataclass(frozen=True)
class ValidationRow:
    level: str
    predicted_cycles: float
    measured_cycles: float | None
    ratio: float | None
    flagged: bool = False
    window: tuple[int, int | None] = (0, None)

    @property
    def missing(self) -> bool:
        return self.measured_cycles is None

    def __post_init__(self):
        if self.ratio is not None and self.ratio <= 0:
            raise ValueError("ratio must be positive")


def level_windows(capacities: Sequence[int | None]) -> list[tuple[int, int | None]]:
    """Working-set window per level: [2x previous capacity, capacity / 2]."""
    out = []
    prev = 0
    for cap in capacities:
        out.append((2 * prev, None if cap is None else cap // 2))
        if cap:
            prev = cap
    return out


def compare_to_model(samples: Sequence[BenchSample], prediction: ECMPrediction, machine,
                     tolerance: float = 0.2) -> list[ValidationRow]:
    caps = dict(zip(machine.source_names, level_windows(machine.capacities())))
    rows = []
    for name, cycles in prediction.levels:
        window = caps.get(name)
        measured = None
        if window is not None:
            lo, hi = window
            inside = [s.cycles_per_cl for s in samples
                      if s.bytes >= lo and (hi is None or s.bytes <= hi)]
            if inside:
                measured = statistics.median(inside)
        predicted = float(cycles)
        if measured is None or predicted <= 0:
            rows.append(ValidationRow(name, predicted, measured, None, False, window or (0, None)))
            continue
        ratio = measured / predicted
        rows.append(ValidationRow(name, predicted, measured, ratio, abs(ratio - 1) > tolerance, window))
    return rows


# -- CSV ---------------------------------------------------------------------


def write_csv(samples: Iterable[BenchSample], out: TextIO, machine: str,
              frequency_ghz, plan: SweepPlan | None = None) -> None:
    out.write(f"# machine: {machine}\n")
    out.write(f"# frequency_ghz: {exact(frequency_ghz)}\n")
    if plan is not None:
        out.write(f"# plan: {plan.digest()}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in samples:
        writer.writerow([s.variant, s.precision, s.bytes, s.threads, s.reps,
                         repr(s.median_seconds), repr(s.cycles_per_cl), repr(s.gup_per_s)])


def samples_to_csv(samples, machine, frequency_ghz, plan=None) -> str:
    buf = io.StringIO()
    write_csv(samples, buf, machine, frequency_ghz, plan)
    return buf.getvalue()


def read_csv(source: TextIO) -> list[BenchSample]:
    lines = [line for line in source if not line.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        out.append(BenchSample(row["variant"], row["precision"], int(row["bytes"]),
                               int(row["threads"]), int(row["reps"]),
                               float(row["median_seconds"]), float(row["cycles_per_cl"]),
                               float(row["gup_per_s"])))
    return out


def sample_dict(s: BenchSample) -> dict:
    d = asdict(s)
    d.pop("value")
    return d
