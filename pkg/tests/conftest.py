from __future__ import annotations

import glob
import os
from pathlib import Path

import pytest

# criterion number -> (title, list of (passed, detail))
ACCEPTANCE: dict[int, tuple[str, list[tuple[bool, str]]]] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(number, (title, []))[1].append((passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, results = ACCEPTANCE[number]
        ok = all(p for p, _ in results)
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{status}] {title}")
        for passed, detail in results:
            if detail and (not passed or len(results) > 1):
                terminalreporter.write_line(f"    {'ok  ' if passed else 'FAIL'} {detail}")


def _cache_sizes() -> dict[int, int]:
    sizes = {}
    for d in glob.glob("/sys/devices/system/cpu/cpu0/cache/index*"):
        try:
            kind = Path(d, "type").read_text().strip()
            level = int(Path(d, "level").read_text())
            text = Path(d, "size").read_text().strip()
        except OSError:
            continue
        if kind == "Instruction":
            continue
        scale = {"K": 1024, "M": 1 << 20, "G": 1 << 30}.get(text[-1], 1)
        sizes[level] = int(text.rstrip("KMG")) * scale
    return sizes


def host_machine_text() -> str:
    """Machine file for the test host; cache sizes from sysfs, nominal 2 GHz."""
    caches = _cache_sizes() or {1: 32 << 10, 2: 1 << 20, 3: 32 << 20}
    cores = len(os.sched_getaffinity(0))
    lines = [
        "schema = 1",
        'name = "host"',
        "frequency_ghz = 2.0",
        f"cores = {cores}",
        "cacheline_bytes = 64",
        "simd_bytes = 32",
        f"l1_bytes = {caches.get(1, 32 << 10)}",
        "",
        "[throughputs]",
        "load = 2", "store = 1", "add = 1", "mul = 2", "fma = 2",
        "retirement_width = 4",
        'retirement_counts = "uops"',
        'non_overlapping = ["load", "store"]',
    ]
    bandwidth = 64
    for level in sorted(k for k in caches if k > 1):
        lines += ["", "[[levels]]", f'name = "L{level}"', f"bandwidth_bpc = {bandwidth}",
                  f"capacity_bytes = {caches[level]}"]
        bandwidth //= 2
    lines += ["", "[[levels]]", 'name = "MEM"', "sustained_gbs = 10.0", ""]
    return "\n".join(lines)


@pytest.fixture
def host_machine_file(tmp_path) -> Path:
    path = tmp_path / "host.toml"
    path.write_text(host_machine_text())
    return path
