from __future__ import annotations

import io
import json
from fractions import Fraction

import pytest

from ecmdot.bench import level_windows, make_sample, samples_to_csv
from ecmdot.catalog import builtin_kernels, builtin_machines, dump_machine, predict
from ecmdot.cli import main, parse_size
from ecmdot.model import compose_prediction, parse_shorthand


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), stdout=out)
    return code, out.getvalue()


def test_predict_hsw_naive():
    code, text = run("predict", "hsw", "naive-dot")
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "{1 || 2 | 2 | 4+1 | 9.2+1} cy"
    assert lines[1] == "{2 | 4 | 9 | 19.2} cy"
    assert lines[2] == "{18.40 | 9.20 | 4.09 | 1.92} GUP/s"
    assert "n_S = 3 cores/domain, 6 cores/chip" in text


def test_predict_knc_kahan_and_flags():
    code, text = run("predict", "-m", "knc", "-k", "kahan-knc")
    assert code == 0
    assert "{4 | 8 | 27.8} cy" in text.splitlines()


def test_shorthand_round_trip_through_parser():
    _, text = run("predict", "hsw", "naive-dot", "--format", "shorthand")
    inputs = parse_shorthand(text.splitlines()[0])
    pred = parse_shorthand(text.splitlines()[1])
    assert compose_prediction(inputs).cycles == pred.cycles == [2, 4, 9, Fraction("19.2")]


def test_json_lines_mirror_table():
    _, text = run("predict", "hsw", "naive-dot", "--format", "json-lines")
    records = [json.loads(line) for line in text.splitlines()]
    assert [r["level"] for r in records[:4]] == ["L1", "L2", "L3", "MEM"]
    assert records[-1]["n_s_domain"] == 3
    _, table = run("predict", "hsw", "naive-dot", "--format", "table")
    header = table.splitlines()[0].split()
    assert header == list(records[0])


def _csv_rows(text):
    return [line.split(",") for line in text.splitlines() if line and not line.startswith("#")][1:]


def test_scale_saturation():
    _, text = run("scale", "pwr8", "naive-dot")
    rows = _csv_rows(text)
    first_saturated = next(int(r[0]) for r in rows if r[3] == "1")
    assert first_saturated == 3
    _, text = run("scale", "hsw", "kahan-avx")
    rows = _csv_rows(text)
    assert next(int(r[0]) for r in rows if r[3] == "1") == 6
    assert len(rows) == 14
    _, text = run("scale", "hsw", "kahan-avx", "--max-cores", "1")
    assert len(_csv_rows(text)) == 1


def test_scale_writes_file(tmp_path):
    target = tmp_path / "scale.csv"
    code, _ = run("scale", "pwr8", "naive-dot", "--out", str(target))
    assert code == 0
    assert "cores,performance,unit,saturated" in target.read_text()


def test_list_inventory():
    code, text = run("list")
    assert code == 0
    machines = text.split("kernels:")[0]
    assert all(name in machines for name in ("hsw", "bdw", "knc", "pwr8"))
    kernels = {k.strip() for line in text.split("kernels:")[1].splitlines() for k in line.split()[1:]}
    assert len(kernels) >= 6


@pytest.mark.parametrize("argv", [
    ("predict", "nope", "naive-dot"),
    ("predict", "hsw", "nope"),
    ("predict", "knc", "naive-dot", "--format", "svg"),
    ("scale", "hsw"),
    (),
])
def test_usage_errors_exit_2(argv, capsys):
    code, _ = run(*argv)
    assert code == 2


def _self_samples(machine, kernel, path, drop=None):
    _, pred = predict(machine, kernel)
    samples = []
    for (lo, hi), (name, cycles) in zip(level_windows(machine.capacities()), pred.levels):
        if name == drop:
            continue
        top = hi if hi is not None else 4 * max(lo, 1 << 20)
        nbytes = (max(lo, 4096) + top) // 2 // 64 * 64
        n = nbytes // 8
        seconds = float(cycles) * (n * 4 / 64) / (float(machine.frequency_ghz) * 1e9)
        samples.append(make_sample("naive-l32", "f32", nbytes, 1, 3, seconds,
                                   machine.frequency_ghz, 64))
    path.write_text(samples_to_csv(samples, machine.name, machine.frequency_ghz))


def test_validate_strict_on_self_samples(tmp_path):
    machine = builtin_machines()["hsw"]
    mfile = tmp_path / "my.toml"
    mfile.write_text(dump_machine(machine))
    csv_path = tmp_path / "samples.csv"
    _self_samples(machine, builtin_kernels("hsw")["naive-dot"], csv_path)
    code, text = run("validate", "--machine-file", str(mfile), "--kernel", "naive-dot",
                     "--samples", str(csv_path), "--strict")
    assert code == 0, text
    assert "# seed: 42" in text
    assert text.count(" ok") == 4


def test_validate_missing_row_only_fails_strict(tmp_path):
    machine = builtin_machines()["hsw"]
    csv_path = tmp_path / "samples.csv"
    _self_samples(machine, builtin_kernels("hsw")["naive-dot"], csv_path, drop="L3")
    code, text = run("validate", "hsw", "naive-dot", "--samples", str(csv_path))
    assert code == 0 and "missing" in text
    code, _ = run("validate", "hsw", "naive-dot", "--samples", str(csv_path), "--strict")
    assert code == 1


def test_accuracy_table():
    code, text = run("accuracy", "--cond", "1e4,1e8", "--n", "256", "--precision", "f64",
                     "--format", "json-lines")
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "# seed: 42"
    rows = [json.loads(line) for line in lines[1:]]
    assert [r["target_cond"] for r in rows] == [1e4, 1e8]
    assert all(r["kahan_rel_err"] <= r["naive_rel_err"] * 10 for r in rows)
    assert run("accuracy", "--cond", "1e4", "--n", "256")[1] == run("accuracy", "--cond", "1e4", "--n", "256")[1]


def test_bench_small_sweep(tmp_path):
    target = tmp_path / "bench.csv"
    code, text = run("bench", "hsw", "naive-dot", "--sizes", "16K,64K", "--reps", "3",
                     "--out", str(target))
    assert code == 0
    body = target.read_text()
    assert "# machine: hsw" in body
    assert len(_csv_rows(body)) == 2


def test_parse_size():
    assert parse_size("16K") == 16 * 1024
    assert parse_size("2M") == 2 << 20
    assert parse_size("1G") == 1 << 30
    assert parse_size("4096") == 4096
