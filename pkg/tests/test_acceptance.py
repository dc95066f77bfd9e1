"""Acceptance criteria 1-9, one printed pass/fail line each.

Runs ``greybm validate --tier mc --seed 7`` twice, with GREYBM_THREADS=1 and 4,
as separate processes.  Criteria 1-8 are read from the 4-thread report (every
check at its stated tolerance, plus the runtime limit); criterion 9 compares the
two reports' verdicts, measured values and ensemble checksums.

Run directly (``python3 tests/test_acceptance.py``) to print the lines without pytest.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
from pathlib import Path

import pytest

SEED = 7


def run_validate(threads: int, tier: str = "mc", seed: int = SEED) -> dict:
    with tempfile.TemporaryDirectory() as tmp:
        report = Path(tmp) / "report.json"
        env = dict(os.environ, GREYBM_THREADS=str(threads))
        proc = subprocess.run(
            [sys.executable, "-m", "greybm", "validate", "--tier", tier, "--seed", str(seed), "--report", str(report)],
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode not in (0, 1) or not report.exists():
            raise RuntimeError(f"validate failed to run (exit {proc.returncode}):\n{proc.stderr}")
        out = json.loads(report.read_text())
    out["exit_code"] = proc.returncode
    return out


def _worst(checks):
    """The check closest to (or furthest past) its tolerance."""

    def ratio(c):
        if c["kind"] == "outside":
            return c["tolerance"] / max(abs(c["measured"]), 1e-300)
        gap = abs(c["measured"] - c["target"])
        tol = c["tolerance"] * (abs(c["target"]) if c["kind"] == "rel" else 1.0)
        return gap / tol if tol > 0 else (0.0 if gap == 0 else float("inf"))

    return max(checks, key=ratio), ratio


def criterion_line(report: dict, cid: int) -> tuple[bool, str]:
    crit = next(c for c in report["criteria"] if c["id"] == cid)
    timing = report["timing"][str(cid)]
    in_time = timing["seconds"] < timing["limit"]
    ok = crit["passed"] and in_time
    worst, ratio = _worst(crit["checks"])
    n_ok = sum(c["passed"] for c in crit["checks"])
    line = (
        f"ACCEPTANCE {cid} {'PASS' if ok else 'FAIL'}: {crit['title']} - {n_ok}/{len(crit['checks'])} checks; "
        f"tightest '{worst['name']}' measured {worst['measured']:.6g} target {worst['target']:.6g} "
        f"({worst['kind']} tol {worst['tolerance']:.3g}, {ratio(worst):.2f} of budget); "
        f"{timing['seconds']:.1f} s (limit {timing['limit']:.0f} s)"
    )
    return ok, line


def reproducibility_line(r1: dict, r4: dict) -> tuple[bool, str]:
    def verdicts(r):
        return [(c["id"], k["name"], k["passed"], k["measured"]) for c in r["criteria"] for k in c["checks"]]

    same_verdicts = verdicts(r1) == verdicts(r4) and r1["passed"] == r4["passed"]
    same_sums = r1["checksums"] == r4["checksums"] and len(r1["checksums"]) > 0
    internal = next(c for c in r4["criteria"] if c["id"] == 9)["passed"]
    ok = same_verdicts and same_sums and internal and r1["exit_code"] == r4["exit_code"]
    line = (
        f"ACCEPTANCE 9 {'PASS' if ok else 'FAIL'}: reproducibility - GREYBM_THREADS 1 vs 4: "
        f"verdicts and measured values {'identical' if same_verdicts else 'DIFFER'}, "
        f"{len(r1['checksums'])} ensemble checksums {'identical' if same_sums else 'DIFFER'}, "
        f"in-process 1-vs-4 thread check {'passed' if internal else 'FAILED'}"
    )
    return ok, line


@pytest.fixture(scope="module")
def reports():
    return {1: run_validate(1), 4: run_validate(4)}


@pytest.mark.parametrize("cid", range(1, 9))
def test_criterion(reports, cid, capsys):
    ok, line = criterion_line(reports[4], cid)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_9_reproducibility(reports, capsys):
    ok, line = reproducibility_line(reports[1], reports[4])
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    r1, r4 = run_validate(1), run_validate(4)
    results = [criterion_line(r4, cid) for cid in range(1, 9)] + [reproducibility_line(r1, r4)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
