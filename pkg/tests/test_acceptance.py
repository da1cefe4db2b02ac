"""Acceptance criteria, one test each.

Every test records its outcome with ``conftest.record`` so the session ends
with one PASS/FAIL line per criterion.  Run alone with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import io
import json
import time
from fractions import Fraction

import pytest

import test_kernels
import test_model
from conftest import record
from ecmdot.catalog import builtin_kernels, builtin_machines, predict
from ecmdot.cli import main
from ecmdot.kernels import dot_kahan, dot_naive, gen_ill_conditioned, relative_error
from ecmdot.model import format_shorthand, predicted_performance, saturated_performance, saturation_point
from ecmdot.scheduler import DependencyChain, UnitThroughputs, list_schedule, recurrence_bound

TOL = Fraction(5, 100)


def _close(got, want) -> bool:
    return len(got) == len(want) and all(abs(Fraction(g) - Fraction(w)) <= TOL for g, w in zip(got, want))


GOLDEN = [
    # machine, kernel, inputs shorthand or None, prediction, GUP/s or None, n_S per domain or None
    ("hsw", "naive-dot", "{1 || 2 | 2 | 4+1 | 9.2+1} cy", ["2", "4", "9", "19.2"],
     ["18.40", "9.20", "4.09", "1.92"], 3),
    ("bdw", "naive-dot", None, ["2", "4", "13", "26.4"], ["16.80", "8.40", "2.58", "1.27"], 4),
    ("knc", "naive-dot", None, ["2", "6", "26.8"], ["8.40", "2.80", "0.63"], 34),
    ("pwr8", "naive-dot", None, ["8", "8", "12", "22"], None, 3),
    ("hsw", "kahan-avx", None, ["8", "8", "9", "19.2"], None, None),
    ("hsw", "kahan-fma5", None, ["6.4", "6.4", "9", "19.2"], None, None),
    ("bdw", "kahan-avx", None, ["8", "8", "13", "26.8"], None, None),
    ("bdw", "kahan-fma5", None, ["6.4", "6.4", "13", "26.8"], None, None),
    ("knc", "kahan-knc", None, ["4", "8", "27.8"], None, None),
    ("pwr8", "kahan-vsx", None, ["16", "16", "16", "22"], None, None),
]


def test_criterion_1_golden_model_tuples():
    title = "golden model tuples from the builtin catalog"
    start = time.perf_counter()
    machines = builtin_machines()
    ok_all = True
    for machine_name, kernel_name, shorthand, cycles, gups, n_s in GOLDEN:
        machine = machines[machine_name]
        kernel = builtin_kernels(machine_name)[kernel_name]
        inputs, pred = predict(machine, kernel)
        problems = []
        if shorthand is not None and format_shorthand(inputs) != shorthand:
            problems.append(f"inputs {format_shorthand(inputs)}")
        if not _close(pred.cycles, cycles):
            problems.append(f"prediction {format_shorthand(pred)}")
        if gups is not None:
            perf = [f"{p:.2f}" for _, p in predicted_performance(pred, kernel.work, machine.frequency_ghz)]
            if perf != gups:
                problems.append(f"GUP/s {perf}")
        if n_s is not None and saturation_point(pred) != n_s:
            problems.append(f"n_S {saturation_point(pred)}")
        if machine_name == "hsw" and kernel_name == "naive-dot":
            p_sat = saturated_performance(pred.bottleneck, kernel.work, machine.frequency_ghz)
            if f"{p_sat:.2f}" != "4.00":
                problems.append(f"P_sat {p_sat}")
        passed = not problems
        ok_all &= passed
        record(1, title, passed, f"{machine_name}/{kernel_name}: " + ("; ".join(problems) or format_shorthand(pred)))
    elapsed = time.perf_counter() - start
    record(1, title, elapsed < 1.0, f"runtime {elapsed:.3f} s (limit 1 s)")
    assert ok_all
    assert elapsed < 1.0


def test_criterion_2_scheduler_recurrence_oracle():
    title = "list scheduler and closed-form recurrence agree"
    start = time.perf_counter()
    hsw = UnitThroughputs(load=2, store=1, add=1, mul=2, fma=2, retirement_width=4,
                          retirement_counts="uops", non_overlapping=("load", "store"))
    cases = [
        ("pure-ADD 5-way", [("fma", 5), ("add", 3), ("add", 3), ("add", 3)], 18, Fraction("7.2")),
        ("FMA-trick 5-way", [("fma", 5), ("add", 3), ("fma", 5), ("add", 3)], 16, Fraction("6.4")),
    ]
    ok_all = True
    for label, links, cycles, per_cl in cases:
        chain = DependencyChain(links, 5, Fraction(5, 2))
        simulated = list_schedule(chain, hsw)
        closed = recurrence_bound(chain, hsw)
        passed = simulated == cycles and closed == per_cl and simulated / chain.cls_per_iteration == closed
        ok_all &= passed
        record(2, title, passed, f"{label}: schedule {simulated} cy, closed form {closed} cy/CL")
    elapsed = time.perf_counter() - start
    record(2, title, elapsed < 1.0, f"runtime {elapsed:.3f} s (limit 1 s)")
    assert ok_all
    assert elapsed < 1.0


def test_criterion_3_kahan_accuracy_suite():
    title = "Kahan accuracy suite, 64-bit"
    start = time.perf_counter()
    ok_all = True
    for n in (1000, 10000):
        for cond in (1e4, 1e8, 1e12):
            a, b, exact = gen_ill_conditioned(n, cond, seed=42, precision="f64")
            e_naive = relative_error(dot_naive(a, b), exact)
            e_kahan = relative_error(dot_kahan(a, b).value, exact)
            passed = e_kahan <= 1e-14
            if cond == 1e12:
                passed &= e_naive >= 1e3 * e_kahan
            ok_all &= passed
            record(3, title, passed,
                   f"n={n} cond={cond:.0e}: kahan {e_kahan:.3g}, naive {e_naive:.3g}, "
                   f"ratio {e_naive / e_kahan if e_kahan else float('inf'):.3g}")
    elapsed = time.perf_counter() - start
    record(3, title, elapsed < 30.0, f"runtime {elapsed:.1f} s (limit 30 s)")
    assert ok_all, "Kahan relative error above 1e-14 or naive/Kahan gap below 1e3"
    assert elapsed < 30.0


PROPERTIES = [
    ("shorthand round trip, inputs", test_model.test_shorthand_round_trip_inputs),
    ("shorthand round trip, predictions", test_model.test_shorthand_round_trip_predictions),
    ("composition monotonicity", test_model.test_adding_a_level_never_lowers_predictions),
    ("saturation consistency", test_model.test_saturation_consistency),
    ("naive lane/unroll bit-exactness", test_kernels.test_naive_lane_contract),
    ("Kahan lane/unroll bit-exactness", test_kernels.test_kahan_lane_contract),
    ("exact oracle permutation invariance", test_kernels.test_exact_permutation_invariant),
]


def test_criterion_4_property_suites():
    title = "property suites"
    start = time.perf_counter()
    ok_all = True
    for label, prop in PROPERTIES:
        t0 = time.perf_counter()
        try:
            prop()  # runs with the example count declared on the property itself
            passed, note = True, ""
        except Exception as exc:  # reported per property
            passed, note = False, f": {type(exc).__name__}: {exc}"
        ok_all &= passed
        record(4, title, passed, f"{label}, {time.perf_counter() - t0:.1f} s{note}")
    elapsed = time.perf_counter() - start
    record(4, title, elapsed < 60.0, f"runtime {elapsed:.1f} s (limit 60 s)")
    assert ok_all
    assert elapsed < 60.0


@pytest.mark.parametrize("kernel", ["naive-dot", "kahan-avx"])
def test_criterion_5_host_validation(kernel, host_machine_file):
    title = "host validate: complete report, non-decreasing trend"
    out = io.StringIO()
    start = time.perf_counter()
    code = main(["validate", "--machine-file", str(host_machine_file), "--kernel", kernel,
                 "--reps", "5", "--format", "json-lines"], stdout=out)
    elapsed = time.perf_counter() - start
    rows = [json.loads(line) for line in out.getvalue().splitlines() if not line.startswith("#")]
    missing = [r["level"] for r in rows if r["measured_cycles"] is None]
    measured = [r["measured_cycles"] for r in rows if r["measured_cycles"] is not None]
    drops = [(a, b) for a, b in zip(measured, measured[1:]) if b < 0.9 * a]
    passed = code == 0 and bool(rows) and not missing and not drops
    trend = ", ".join(f"{r['level']} {r['measured_cycles']:.1f}" for r in rows if r["measured_cycles"] is not None)
    record(5, title, passed, f"{kernel}: {trend} cy/CL, missing {missing or 'none'}, {elapsed:.1f} s")
    assert code == 0
    assert rows and not missing, f"missing rows: {missing}"
    assert not drops, f"cycles/CL dropped by more than 10%: {drops}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
