"""Command-line front end: ``ecmdot predict hsw naive-dot`` and friends."""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from typing import Sequence

from . import bench, catalog, kernels
from .catalog import BindingError, MachineDescription, SchemaError
from .model import (
    ECMInputs,
    ECMPrediction,
    format_number,
    format_shorthand,
    format_values,
    predicted_performance,
    saturated_performance,
    saturation_point,
    scale_curve,
)

EXIT_OK, EXIT_STRICT, EXIT_USAGE = 0, 1, 2
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


# -- argument helpers --------------------------------------------------------

_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kKmMgG]?)i?[bB]?\s*$")


def parse_size(text: str) -> int:
    """``16K``, ``4MiB``, ``1G`` or plain bytes (binary multiples)."""
    m = _SIZE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    scale = {"": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30}[m.group(2).lower()]
    return int(float(m.group(1)) * scale)


def _list(conv):
    def parse(text: str):
        try:
            return [conv(x) for x in text.split(",") if x.strip()]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_refs(p: argparse.ArgumentParser, kernel: bool = True) -> None:
    p.add_argument("machine_ref", nargs="?", metavar="MACHINE", help="builtin name or machine file")
    if kernel:
        p.add_argument("kernel_ref", nargs="?", metavar="KERNEL", help="builtin name or kernel file")
    p.add_argument("-m", "--machine", "--machine-file", dest="machine", help="builtin name or machine file")
    if kernel:
        p.add_argument("-k", "--kernel", dest="kernel", help="builtin name or kernel file")


def _refs(args, kernel: bool = True):
    mref = args.machine or args.machine_ref
    if not mref:
        raise UsageError("a machine is required (positional or --machine)")
    machine = catalog.resolve_machine(mref)
    if not kernel:
        return machine, None
    kref = args.kernel or args.kernel_ref
    if not kref:
        raise UsageError("a kernel is required (positional or --kernel)")
    return machine, catalog.resolve_kernel(kref, machine)


def _out(args):
    if getattr(args, "out", None):
        return open(args.out, "w", newline="")
    return None


def _emit_rows(rows, fmt: str, stream) -> None:
    """Rows as an aligned text table or as JSON lines with identical fields."""
    if not rows:
        return
    if fmt == "json-lines":
        for row in rows:
            stream.write(json.dumps(row) + "\n")
        return
    keys = list(rows[0])
    cells = [[_cell(r.get(k)) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    stream.write("  ".join(k.ljust(w) for k, w in zip(keys, widths)).rstrip() + "\n")
    for c in cells:
        stream.write("  ".join(v.ljust(w) for v, w in zip(c, widths)).rstrip() + "\n")


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# -- predict -----------------------------------------------------------------


def _prediction_report(machine: MachineDescription, kernel) -> dict:
    inputs, pred = catalog.predict(machine, kernel)
    perf = predicted_performance(pred, kernel.work, machine.frequency_ghz)
    report = {"machine": machine, "kernel": kernel, "inputs": inputs, "prediction": pred,
              "performance": perf, "n_s": None}
    if len(pred) > 1 and pred.bottleneck:
        n_s = saturation_point(pred)
        report["n_s"] = n_s
        report["p_sat"] = saturated_performance(pred.bottleneck, kernel.work, machine.frequency_ghz)
    return report


def cmd_predict(args, stdout) -> int:
    machine, kernel = _refs(args)
    r = _prediction_report(machine, kernel)
    inputs: ECMInputs = r["inputs"]
    pred: ECMPrediction = r["prediction"]
    unit = kernel.work.unit_label
    domains = machine.memory_domains
    if args.format == "shorthand":
        stdout.write(format_shorthand(inputs) + "\n")
        stdout.write(format_shorthand(pred) + "\n")
        stdout.write(format_values([p for _, p in r["performance"]], 2, True, unit) + "\n")
        if r["n_s"] is not None:
            stdout.write(f"n_S = {r['n_s']} cores/domain, {r['n_s'] * domains} cores/chip\n")
            stdout.write(f"P_sat = {r['p_sat']:.2f} {unit} per domain, "
                         f"{r['p_sat'] * domains:.2f} {unit} per chip\n")
        return EXIT_OK
    rows = []
    for (name, cycles), (_, perf) in zip(pred.levels, r["performance"]):
        rows.append({"machine": machine.name, "kernel": kernel.name, "level": name,
                     "cycles": float(cycles), "performance": round(perf, 6), "unit": unit})
    _emit_rows(rows, args.format, stdout)
    summary = {"machine": machine.name, "kernel": kernel.name,
               "inputs": format_shorthand(inputs), "prediction": format_shorthand(pred),
               "n_s_domain": r["n_s"],
               "n_s_chip": None if r["n_s"] is None else r["n_s"] * domains,
               "p_sat_domain": None if r["n_s"] is None else round(r["p_sat"], 6),
               "p_sat_chip": None if r["n_s"] is None else round(r["p_sat"] * domains, 6)}
    if args.format == "table":
        stdout.write("\n")
    _emit_rows([summary], args.format, stdout)
    return EXIT_OK


# -- scale -------------------------------------------------------------------


def cmd_scale(args, stdout) -> int:
    machine, kernel = _refs(args)
    inputs, pred = catalog.predict(machine, kernel)
    max_cores = args.max_cores or machine.cores
    curve = scale_curve(pred, kernel.work, machine.frequency_ghz, max_cores, machine.memory_domains)
    target = _out(args) or stdout
    try:
        target.write(f"# machine: {machine.name}\n# kernel: {kernel.name}\n")
        target.write(f"# prediction: {format_shorthand(pred)}\n")
        target.write(f"# n_S: {curve.saturation_cores // machine.memory_domains} cores/domain, "
                     f"{curve.saturation_cores} cores/chip\n")
        writer = csv.writer(target, lineterminator="\n")
        writer.writerow(["cores", "performance", "unit", "saturated"])
        for n, perf in curve.points:
            writer.writerow([n, f"{perf:.6f}", kernel.work.unit_label,
                             1 if n >= curve.saturation_cores else 0])
    finally:
        if target is not stdout:
            target.close()
    return EXIT_OK


# -- bench / validate ---------------------------------------------------------


def _plan(args, machine: MachineDescription, kernel, sizes, threads: int = 1) -> bench.SweepPlan:
    numeric = kernel.numeric
    return bench.SweepPlan(
        scheme=numeric.variant,
        sizes=tuple(sorted(set(sizes))),
        frequency_ghz=machine.frequency_ghz,
        repetitions=args.reps,
        threads=threads,
        pinning=tuple(args.pin) if args.pin else None,
        lanes=args.lanes or numeric.lanes,
        precision=args.precision or numeric.precision,
        cacheline_bytes=machine.cacheline_bytes,
        seed=args.seed,
    )


def _sizes(args, machine):
    return args.sizes or bench.default_sizes(machine.capacities())


def _write_samples(args, samples, machine, plan, stdout) -> None:
    target = _out(args)
    if target is not None:
        with target:
            bench.write_csv(samples, target, machine.name, machine.frequency_ghz, plan)
    else:
        bench.write_csv(samples, stdout, machine.name, machine.frequency_ghz, plan)


def cmd_bench(args, stdout) -> int:
    machine, kernel = _refs(args)
    stdout.write(f"# seed: {args.seed}\n")
    threads = args.threads or [1]
    sizes = _sizes(args, machine)
    if len(threads) == 1:
        plan = _plan(args, machine, kernel, sizes, threads[0])
        samples = bench.run_sweep(plan)
    else:
        plan = _plan(args, machine, kernel, [max(sizes)])
        samples = bench.thread_scaling(plan, threads, max(sizes))
        n_s = bench.estimate_saturation(samples)
        stdout.write(f"# estimated n_S: {n_s}\n")
        for n, slope in bench.scaling_slopes(samples):
            stdout.write(f"# slope at {n} cores: {slope:.4g} GUP/s per core\n")
    _write_samples(args, samples, machine, plan, stdout)
    return EXIT_OK


def cmd_validate(args, stdout) -> int:
    machine, kernel = _refs(args)
    stdout.write(f"# seed: {args.seed}\n")
    _, pred = catalog.predict(machine, kernel)
    if args.samples:
        with open(args.samples, newline="") as fh:
            samples = bench.read_csv(fh)
    else:
        plan = _plan(args, machine, kernel, _sizes(args, machine))
        samples = bench.run_sweep(plan)
        if args.out:
            _write_samples(args, samples, machine, plan, stdout)
    rows = bench.compare_to_model(samples, pred, machine)
    out = []
    for row in rows:
        lo, hi = row.window
        out.append({
            "level": row.level,
            "window": f"{lo}-{hi if hi is not None else 'inf'}",
            "predicted_cycles": row.predicted_cycles,
            "measured_cycles": row.measured_cycles,
            "ratio": None if row.ratio is None else round(row.ratio, 4),
            "status": "missing" if row.missing else ("flagged" if row.flagged else "ok"),
        })
    _emit_rows(out, "json-lines" if args.format == "json-lines" else "table", stdout)
    bad = [r for r in rows if r.missing or r.flagged]
    if bad and args.strict:
        return EXIT_STRICT
    return EXIT_OK


# -- accuracy ----------------------------------------------------------------


def cmd_accuracy(args, stdout) -> int:
    precision = args.precision or "f64"
    lanes = args.lanes or 1
    stdout.write(f"# seed: {args.seed}\n")
    rows = []
    for cond in args.cond:
        for n in args.n:
            a, b, exact = kernels.gen_ill_conditioned(n, cond, args.seed, precision)
            naive = kernels.dot_naive(a, b, lanes)
            kahan = kernels.dot_kahan(a, b, lanes).value
            e_naive = kernels.relative_error(naive, exact)
            e_kahan = kernels.relative_error(kahan, exact)
            rows.append({
                "n": n,
                "precision": precision,
                "lanes": lanes,
                "target_cond": cond,
                "achieved_cond": kernels.condition_number(a, b, exact),
                "naive_rel_err": e_naive,
                "kahan_rel_err": e_kahan,
                "naive_over_kahan": (e_naive / e_kahan) if e_kahan else math.inf,
            })
    target = _out(args)
    if target is not None:
        with target:
            writer = csv.DictWriter(target, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                             for r in rows)
    _emit_rows(rows, "json-lines" if args.format == "json-lines" else "table", stdout)
    return EXIT_OK


# -- list --------------------------------------------------------------------


def cmd_list(args, stdout) -> int:
    machines = catalog.builtin_machines()
    stdout.write("machines:\n")
    for name, m in machines.items():
        stdout.write(f"  {name:<5} {format_number(m.frequency_ghz)} GHz, {m.cores} cores, "
                     f"{m.memory_domains} domain(s), {m.cacheline_bytes} B CL  {m.description}\n")
    stdout.write("kernels:\n")
    for name in machines:
        names = ", ".join(catalog.builtin_kernels(name))
        stdout.write(f"  {name:<5} {names}\n")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecmdot",
        description="ECM performance model and accuracy experiments for dot-product kernels.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("predict", help="ECM inputs, prediction, performance and saturation")
    _add_refs(p)
    p.add_argument("--format", choices=("shorthand", "table", "json-lines"), default="shorthand")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("scale", help="multicore scaling curve as CSV")
    _add_refs(p)
    p.add_argument("--max-cores", type=int, help="default: all cores of the machine")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_scale)

    for name, func, text in (("bench", cmd_bench, "working-set sweep or thread scaling"),
                             ("validate", cmd_validate, "compare a sweep with the model")):
        p = sub.add_parser(name, help=text)
        _add_refs(p)
        p.add_argument("--sizes", type=_list(parse_size), help="working sets, e.g. 16K,1M,256M")
        p.add_argument("--reps", type=int, default=11)
        p.add_argument("--threads", type=_list(int), help="thread count, or a list for scaling runs")
        p.add_argument("--pin", type=_list(int), help="logical CPU ids to pin threads to")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("--lanes", type=int, help="override the kernel's lane count")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--out", help="CSV path for samples")
        if name == "validate":
            p.add_argument("--format", choices=("table", "json-lines"), default="table")
            p.add_argument("--samples", help="use samples from a bench CSV instead of measuring")
            p.add_argument("--strict", action="store_true", help="exit 1 on flagged or missing rows")
        p.set_defaults(func=func)

    p = sub.add_parser("accuracy", help="naive vs Kahan error on ill-conditioned data")
    p.add_argument("--cond", type=_list(float), default=[1e4, 1e8, 1e12])
    p.add_argument("--n", type=_list(int), default=[4096])
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--lanes", type=int)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", help="CSV path")
    p.add_argument("--format", choices=("table", "json-lines"), default="table")
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("list", help="builtin machines and kernels")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, stdout)
    except (UsageError, FileNotFoundError, SchemaError, BindingError, ValueError, OSError) as exc:
        print(f"ecmdot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
