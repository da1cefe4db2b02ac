from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmdot.catalog import KernelOverrides, builtin_kernels, builtin_machines
from ecmdot.scheduler import (
    DependencyChain,
    InstructionMix,
    SharedUnit,
    UnitThroughputs,
    UnsupportedInstructionError,
    in_core_times,
    iteration_bound,
    list_schedule,
    recurrence_bound,
    resource_bound,
)

INTEL = UnitThroughputs(load=2, store=1, add=1, mul=2, fma=2, retirement_width=4,
                        retirement_counts="uops", non_overlapping=("load", "store"))
PWR8 = UnitThroughputs(load=2, store=2, add=2, mul=2, fma=2, retirement_width=8,
                       shared=(SharedUnit("vsx", ("add", "mul", "fma"), 2),))

PURE_ADD = [("fma", 5), ("add", 3), ("add", 3), ("add", 3)]
FMA_TRICK = [("fma", 5), ("add", 3), ("fma", 5), ("add", 3)]


def test_resource_bound_examples():
    assert resource_bound(InstructionMix(loads=4, fmas=2), INTEL) == (1, 2)
    assert resource_bound(InstructionMix(loads=16, fmas=8, adds=24), PWR8) == (16, 0)
    assert resource_bound(InstructionMix(), INTEL) == (0, 0)


def test_unsupported_class():
    units = UnitThroughputs(load=1, add=1)
    with pytest.raises(UnsupportedInstructionError, match="unsupported instruction class"):
        resource_bound(InstructionMix(loads=1, fmas=1), units)


def test_retirement_raises_t_ol_only_beyond_core_time():
    narrow = UnitThroughputs(load=4, add=4, retirement_width=1)
    # 8 instructions through a width-1 retirement: 8 cy beats both unit bounds
    assert resource_bound(InstructionMix(loads=4, adds=4), narrow) == (8, 0)
    wide = UnitThroughputs(load=4, add=4, retirement_width=8)
    assert resource_bound(InstructionMix(loads=4, adds=4), wide) == (1, 0)


def test_uop_weights():
    units = UnitThroughputs(load=8, fma=8, retirement_width=1, retirement_counts="uops",
                            uop_weights={"fma": 2})
    assert resource_bound(InstructionMix(loads=1, fmas=1), units) == (3, 0)
    counted = replace(units, retirement_counts="instructions")
    assert resource_bound(InstructionMix(loads=1, fmas=1), counted) == (2, 0)


def test_invalid_types():
    with pytest.raises(ValueError):
        InstructionMix(adds=-1)
    with pytest.raises(ValueError):
        UnitThroughputs(add=0)
    with pytest.raises(ValueError):
        DependencyChain((), 1, 1)
    with pytest.raises(ValueError):
        DependencyChain((("add", 3),), 1, 0)
    with pytest.raises(ValueError, match="mixes OL and nOL"):
        UnitThroughputs(load=1, add=1, non_overlapping=("load",),
                        shared=(SharedUnit("x", ("load", "add"), 1),))


def test_recurrence_examples():
    assert iteration_bound(DependencyChain(PURE_ADD, 5, 2.5), INTEL) == 18
    assert recurrence_bound(DependencyChain(PURE_ADD, 5, 2.5), INTEL) == Fraction("7.2")
    assert iteration_bound(DependencyChain(FMA_TRICK, 5, 2.5), INTEL) == 16
    assert recurrence_bound(DependencyChain(FMA_TRICK, 5, 2.5), INTEL) == Fraction("6.4")
    assert recurrence_bound(DependencyChain(PURE_ADD, 4, 2), INTEL) == 8
    assert recurrence_bound(DependencyChain([("add", 3)] * 4, 4, 2), INTEL) == 8
    assert recurrence_bound(DependencyChain([("add", 7)], 1, 1)) == 7


@pytest.mark.parametrize("links,unroll,cycles", [
    (PURE_ADD, 5, 18), (FMA_TRICK, 5, 16), (PURE_ADD, 4, 16), ([("add", 3)] * 4, 4, 16),
])
def test_list_scheduler_reproduces_published_schedules(links, unroll, cycles):
    assert list_schedule(DependencyChain(links, unroll, 1), INTEL) == cycles


def _lower_bound(chain, units):
    latency = sum(lat for _, lat in chain.links)
    if units is None:
        return Fraction(latency)
    load = {}
    for op, _ in chain.links:
        unit, rate = units.unit_for(op)
        load[unit] = load.get(unit, 0) + Fraction(chain.unroll) / rate
    return max(Fraction(latency), *load.values())


ALL_UNITS = [
    INTEL,
    PWR8,
    UnitThroughputs(add=1, mul=1, fma=1, retirement_width=2,
                    shared=(SharedUnit("upipe", ("add", "mul", "fma"), 1),)),
    None,
]
chains = st.builds(
    lambda links, unroll: DependencyChain(links, unroll, 1),
    st.lists(st.tuples(st.sampled_from(["add", "mul", "fma"]), st.integers(1, 6)), min_size=1, max_size=4),
    st.integers(1, 3),
)


@settings(max_examples=150, deadline=None)
@given(chains, st.sampled_from(ALL_UNITS))
def test_closed_form_brackets_the_greedy_schedule(chain, units):
    simulated = list_schedule(chain, units)
    assert _lower_bound(chain, units) <= simulated <= iteration_bound(chain, units)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=6), st.integers(1, 5),
       st.sampled_from(["add", "fma"]), st.sampled_from(ALL_UNITS))
def test_closed_form_exact_on_one_unit(latencies, unroll, op, units):
    if len(latencies) * unroll > 12:
        latencies = latencies[: max(1, 12 // unroll)]
    chain = DependencyChain([(op, lat) for lat in latencies], unroll, 1)
    assert list_schedule(chain, units) == iteration_bound(chain, units)


@settings(max_examples=100, deadline=None)
@given(st.fractions(min_value=0, max_value=50), st.fractions(min_value=0, max_value=50),
       st.fractions(min_value=0, max_value=50), st.integers(1, 7))
def test_resource_bound_homogeneous(loads, adds, fmas, k):
    mix = InstructionMix(loads=loads, adds=adds, fmas=fmas)
    t_ol, t_nol = resource_bound(mix, INTEL)
    assert resource_bound(mix.scaled(k), INTEL) == (k * t_ol, k * t_nol)


def test_in_core_times_examples():
    machines = builtin_machines()
    hsw = builtin_kernels("hsw")
    assert in_core_times(hsw["kahan-avx"], machines["hsw"]) == (8, 2)
    assert in_core_times(hsw["kahan-fma5"], machines["hsw"]) == (Fraction("6.4"), 2)
    assert in_core_times(hsw["naive-dot"], machines["hsw"]) == (1, 2)
    knc = builtin_kernels("knc")
    assert in_core_times(knc["kahan-knc"], machines["knc"]) == (4, 6)
    assert in_core_times(knc["kahan-knc-mem"], machines["knc"]) == (4, 6)
    assert in_core_times(knc["kahan-knc-l1"], machines["knc"]) == (4, 2)


def test_in_core_times_dominates_resource_bound():
    for name, machine in builtin_machines().items():
        for kernel in builtin_kernels(name).values():
            plain = replace(kernel, overrides=KernelOverrides())
            t_ol, t_nol = in_core_times(plain, machine)
            r_ol, r_nol = resource_bound(kernel.mix, machine.throughputs)
            assert t_ol >= r_ol and t_nol >= r_nol
