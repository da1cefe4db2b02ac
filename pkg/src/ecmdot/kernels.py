"""Reference dot-product kernels and an exact oracle.

All kernel arithmetic happens element-wise in numpy in the declared
precision, so there is no fused multiply-add and no extended intermediate.
Lanes emulate SIMD registers and unrolled partial sums: element ``i`` goes to
lane ``(i // unroll) % lanes``, and each lane processes its elements in
ascending index order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

PRECISIONS = {"f32": np.float32, "f64": np.float64}
# mantissa bits (with hidden bit), smallest normal exponent, largest exponent
_FORMAT = {"f32": (24, -126, 127), "f64": (53, -1022, 1023)}


def precision_of(x) -> str:
    return "f32" if np.asarray(x).dtype == np.float32 else "f64"


def as_vector(values, precision: str | None = None) -> np.ndarray:
    """Validate and convert to a 1-D array of the requested precision."""
    if precision is None:
        precision = precision_of(values)
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}")
    arr = np.asarray(values, dtype=PRECISIONS[precision])
    if arr.ndim != 1:
        raise ValueError("vectors must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vectors must not contain NaN or Inf")
    return arr


def _pair(a, b, precision):
    if precision is None:
        precision = "f32" if precision_of(a) == precision_of(b) == "f32" else "f64"
    a = as_vector(a, precision)
    b = as_vector(b, precision)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b, precision


def _lane_grid(a, b, lanes: int, unroll: int):
    """Arrange ``a`` and ``b`` as (step, lane) grids plus a validity mask."""
    if lanes < 1 or unroll < 1:
        raise ValueError("lanes and unroll must be >= 1")
    n = a.size
    i = np.arange(n)
    lane = (i // unroll) % lanes
    step = (i // (unroll * lanes)) * unroll + i % unroll
    steps = int(step.max()) + 1 if n else 0
    ga = np.zeros((steps, lanes), dtype=a.dtype)
    gb = np.zeros((steps, lanes), dtype=a.dtype)
    mask = np.zeros((steps, lanes), dtype=bool)
    ga[step, lane] = a
    gb[step, lane] = b
    mask[step, lane] = True
    return ga, gb, mask


def dot_naive(a, b, lanes: int = 1, unroll: int = 1, precision: str | None = None):
    """Plain ``sum += a[i]*b[i]`` per lane; lane sums added left to right."""
    a, b, precision = _pair(a, b, precision)
    ga, gb, mask = _lane_grid(a, b, lanes, unroll)
    acc = np.zeros(lanes, dtype=a.dtype)
    for row_a, row_b, valid in zip(ga, gb, mask):
        acc = np.where(valid, acc + row_a * row_b, acc)
    total = acc[0]
    for partial in acc[1:]:
        total = total + partial
    return total


@dataclass(frozen=True)
class DotResult:
    value: np.floating
    compensations: tuple
    lanes: int
    unroll: int

    def __post_init__(self):
        if self.lanes < 1 or len(self.compensations) != self.lanes:
            raise ValueError("one compensation term per lane required")


def _kahan_scalar(terms, dtype):
    s = dtype(0)
    c = dtype(0)
    for x in terms:
        y = x - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


def dot_kahan(a, b, lanes: int = 1, unroll: int = 1, precision: str | None = None) -> DotResult:
    """Kahan-compensated dot product.

    Each lane runs ``prod = a*b; y = prod - c; t = sum + y; c = (t - sum) - y;
    sum = t``.  With one lane the value is that lane's ``sum``; the final
    ``c`` is reported, not folded in.  With several lanes the sums and then
    the negated compensations are fed through one more scalar Kahan loop.
    """
    a, b, precision = _pair(a, b, precision)
    dtype = PRECISIONS[precision]
    ga, gb, mask = _lane_grid(a, b, lanes, unroll)
    s = np.zeros(lanes, dtype=dtype)
    c = np.zeros(lanes, dtype=dtype)
    for row_a, row_b, valid in zip(ga, gb, mask):
        prod = row_a * row_b
        y = prod - c
        t = s + y
        c_new = (t - s) - y
        s = np.where(valid, t, s)
        c = np.where(valid, c_new, c)
    comps = tuple(c)
    if lanes == 1:
        return DotResult(s[0], comps, lanes, unroll)
    value = _kahan_scalar(list(s) + [-x for x in c], dtype)
    return DotResult(value, comps, lanes, unroll)


# -- exact oracle -------------------------------------------------------------


def _mantissas(x: np.ndarray, precision: str) -> tuple[list[int], list[int]]:
    """Integer mantissas and exponents with ``x == m * 2**e`` exactly."""
    bits = _FORMAT[precision][0]
    frac, exp = np.frexp(x.astype(np.float64))
    mant = np.ldexp(frac, bits).astype(np.int64)
    return mant.tolist(), (exp - bits).tolist()


def _exact_sum_terms(a: np.ndarray, b: np.ndarray, precision: str) -> Fraction:
    ma, ea = _mantissas(a, precision)
    mb, eb = _mantissas(b, precision)
    if not ma:
        return Fraction(0)
    exps = [x + y for x, y in zip(ea, eb)]
    low = min(exps)
    total = 0
    for p, q, e in zip(ma, mb, exps):
        total += (p * q) << (e - low)
    if low >= 0:
        return Fraction(total << low)
    return Fraction(total, 1 << -low)


def round_to(q: Fraction, precision: str):
    """Round a rational to the nearest ``precision`` float, ties to even."""
    bits, emin, emax = _FORMAT[precision]
    dtype = PRECISIONS[precision]
    q = Fraction(q)
    if q == 0:
        return dtype(0.0)
    sign = -1 if q < 0 else 1
    num, den = abs(q.numerator), q.denominator
    e = num.bit_length() - den.bit_length()
    if (num << max(0, -e)) < (den << max(0, e)):
        e -= 1
    e = max(e, emin)
    quantum = e - (bits - 1)
    if quantum >= 0:
        m, r = divmod(num, den << quantum)
        half = den << quantum
    else:
        m, r = divmod(num << -quantum, den)
        half = den
    if 2 * r > half or (2 * r == half and m & 1):
        m += 1
    if m.bit_length() + quantum > emax + 1:
        return dtype(sign * math.inf)
    return dtype(sign * math.ldexp(m, quantum))


def dot_exact(a, b, precision: str | None = None) -> tuple[Fraction, np.floating]:
    """Exact dot product and its correctly rounded value."""
    a, b, precision = _pair(a, b, precision)
    exact = _exact_sum_terms(a, b, precision)
    return exact, round_to(exact, precision)


def condition_number(a, b, exact: Fraction | None = None, precision: str | None = None) -> float:
    """``sum |a_i b_i| / |sum a_i b_i|``, exact up to the final division."""
    a, b, precision = _pair(a, b, precision)
    if exact is None:
        exact = _exact_sum_terms(a, b, precision)
    if exact == 0:
        return math.inf
    absolute = _exact_sum_terms(np.abs(a), np.abs(b), precision)
    return float(absolute / abs(exact))


def relative_error(value, exact: Fraction) -> float:
    """``|value - exact| / |exact|`` evaluated exactly, then rounded."""
    diff = abs(Fraction(float(value)) - exact)
    if exact == 0:
        return 0.0 if diff == 0 else math.inf
    return float(diff / abs(exact))


# -- test data ---------------------------------------------------------------


def _gendot(n: int, b2: float, rng: np.random.Generator, precision: str):
    dtype = PRECISIONS[precision]
    half = n // 2
    e = np.rint(rng.random(half) * b2 / 2).astype(int)
    e[0] = round(b2 / 2) + 1
    e[-1] = 0
    x = np.empty(n, dtype=dtype)
    y = np.empty(n, dtype=dtype)
    x[:half] = ((2 * rng.random(half) - 1) * np.exp2(e)).astype(dtype)
    y[:half] = ((2 * rng.random(half) - 1) * np.exp2(e)).astype(dtype)
    running = _exact_sum_terms(x[:half], y[:half], precision)
    tail = np.rint(np.linspace(b2 / 2, 0, n - half)).astype(int)
    for i, ei in zip(range(half, n), tail):
        xi = dtype((2 * rng.random() - 1) * 2.0 ** ei)
        if xi == 0:
            xi = dtype(2.0 ** ei)
        wanted = Fraction(float((2 * rng.random() - 1) * 2.0 ** ei)) - running
        yi = round_to(wanted / Fraction(float(xi)), precision)
        x[i], y[i] = xi, yi
        running += _exact_sum_terms(x[i:i + 1], y[i:i + 1], precision)
    order = rng.permutation(n)
    return x[order], y[order]


def gen_ill_conditioned(
    n: int, target_condition: float, seed: int = 42, precision: str = "f64"
) -> tuple[np.ndarray, np.ndarray, Fraction]:
    """Dot-product inputs with a prescribed condition number.

    Small targets (up to 10) give benign positive data.  Larger ones follow
    the classic construction: a first half with spread exponents, then a
    second half chosen to cancel it down to a small remainder.  The achieved
    condition is checked exactly and must land within a factor of 100; on a
    miss the exponent spread is corrected by the observed ratio and the
    construction repeated with the next derived seed.
    """
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
    if n < 6:
        raise ValueError(f"unattainable condition: n={n} is below the minimum of 6")
    if not target_condition >= 1:
        raise ValueError("target condition must be >= 1")
    dtype = PRECISIONS[precision]
    spread = math.log2(target_condition)
    for attempt in range(32):
        rng = np.random.default_rng([seed, attempt])
        if target_condition <= 10:
            a = rng.uniform(0.5, 1.5, n).astype(dtype)
            b = rng.uniform(0.5, 1.5, n).astype(dtype)
        else:
            a, b = _gendot(n, spread, rng, precision)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            continue
        exact, _ = dot_exact(a, b, precision)
        kappa = condition_number(a, b, exact, precision)
        if target_condition / 100 <= kappa <= target_condition * 100:
            return a, b, exact
        if math.isfinite(kappa) and kappa > 0:
            spread = max(1.0, spread + math.log2(target_condition / kappa))
    raise ValueError(
        f"unattainable condition {target_condition:g} for n={n} in {precision}"
    )
