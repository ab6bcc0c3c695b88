import os
import sys
from pathlib import Path

import pytest

# Add parent directory to path to import the package
sys.path.insert(0, os.path.join(str(Path(__file__).parent.parent), "src"))

from conftest import REPO
from fleetswap.harness import (
    MIN_RATIO,
    REPLACE_LIMIT_MS,
    ScenarioRunner,
    bench_replace_vs_redeploy,
    build_install_payload,
    check_signature_purity,
    check_transition,
    main,
    run_scenario,
)


def audit_entry(event, iteration, client_id, signature, assignment_id="u1-1"):
    return {"event": event, "assignment_id": assignment_id, "iteration": iteration,
            "client_id": client_id, "signature": signature}


def test_pure_iterations():
    audit = [
        audit_entry("result_received", 0, "c1", "A"),
        audit_entry("result_received", 0, "c2", "A"),
        audit_entry("result_received", 0, "c3", "B"),
        audit_entry("kept", 0, "c1", "A"),
        audit_entry("kept", 0, "c2", "A"),
        audit_entry("discarded", 0, "c3", "B"),
        audit_entry("kept", 0, "c9", "Z", assignment_id="u2-1"),
    ]
    assert check_signature_purity(audit, "u1-1") == []


def test_mixed_kept_signatures():
    audit = [audit_entry("kept", 1, "c1", "A"), audit_entry("kept", 1, "c2", "B")]
    assert check_signature_purity(audit, "u1-1") == ["iteration 1 kept mixed signatures ['A', 'B']"]


def test_discarded_with_kept_signature():
    audit = [audit_entry("kept", 0, "c1", "A"), audit_entry("discarded", 0, "c2", "A")]
    (problem,) = check_signature_purity(audit, "u1-1")
    assert "discarded c2" in problem


def test_unaccounted_result():
    audit = [audit_entry("result_received", 0, "c1", "A")]
    (problem,) = check_signature_purity(audit, "u1-1")
    assert "neither kept nor discarded" in problem


@pytest.mark.parametrize(
    "sequence, ok",
    [
        (["a", "a", "b", "b"], True),
        (["a", "b"], True),
        (["a", "a"], False),
        (["b", "b"], False),
        (["a", "b", "a", "b"], False),
        (["a", "c", "b"], False),
        ([], False),
    ],
)
def test_transition(sequence, ok):
    assert (check_transition(sequence, "a", "b") is None) == ok


def test_at_ms_range_is_seeded(tmp_path):
    first = ScenarioRunner([], base_dir=REPO, workdir=tmp_path, seed=4)
    second = ScenarioRunner([], base_dir=REPO, workdir=tmp_path, seed=4)
    drawn = [first._at([0, 1200]) for _ in range(5)]
    assert drawn == [second._at([0, 1200]) for _ in range(5)]
    assert all(0 <= d <= 1.2 for d in drawn)
    assert first._at(250) == 0.25 and first._at(None) == 0.0


def test_paths_resolve_against_base_dir(tmp_path):
    runner = ScenarioRunner([], base_dir=REPO, workdir=tmp_path)
    assert runner.path("custom_code/mean.py") == REPO / "custom_code" / "mean.py"
    assert runner.path(str(tmp_path)) == tmp_path


@pytest.mark.asyncio
async def test_unknown_action_fails_scenario(tmp_path):
    runner = ScenarioRunner([{"action": "teleport"}], base_dir=REPO, workdir=tmp_path)
    report = await runner.run()
    assert not report["passed"]
    assert report["failure"] == "teleport failed: unknown action"


@pytest.mark.asyncio
async def test_unknown_check_is_recorded(tmp_path):
    steps = [{"action": "assert", "args": {"check": "vibes"}}, {"action": "sleep", "args": {"ms": 1}}]
    report = await ScenarioRunner(steps, base_dir=REPO, workdir=tmp_path).run()
    assert report["failure"] is None
    assert report["checks"] == [
        {"check": "vibes", "args": {}, "passed": False, "diff": "unknown check vibes"}
    ]
    assert not report["passed"]
    assert [a["action"] for a in report["actions"]] == ["assert", "sleep"]


def test_install_payload_size(tmp_path):
    target = build_install_payload(tmp_path / "payload", size=512 * 1024)
    total = sum(p.stat().st_size for p in target.rglob("*") if p.is_file())
    assert total >= 512 * 1024
    assert (target / "fleetswap" / "bridge.py").exists()


@pytest.mark.slow
@pytest.mark.asyncio
@pytest.mark.parametrize("name", ["mid_run_swap", "race", "federated_averaging"])
async def test_shipped_scenarios(name, tmp_path):
    report = await run_scenario(REPO / "scenarios" / f"{name}.json", seed=1, workdir=tmp_path)
    assert report["passed"], report


@pytest.mark.slow
@pytest.mark.asyncio
async def test_race_holds_across_seeds(tmp_path):
    failed = []
    for seed in range(20):
        report = await run_scenario(REPO / "scenarios" / "race.json", seed=seed,
                                    workdir=tmp_path / f"seed-{seed}")
        if not report["passed"]:
            failed.append(seed)
    assert failed == []


@pytest.mark.slow
@pytest.mark.asyncio
async def test_replace_meets_latency_and_ratio_targets():
    report = await bench_replace_vs_redeploy(3, REPO / "custom_code" / "mean.py", runs=5)
    assert report["replace_offboard_ms"] < REPLACE_LIMIT_MS
    assert report["replace_onboard_ms"] < REPLACE_LIMIT_MS
    assert report["ratio"] >= MIN_RATIO
    assert report["start_times_constant_during_replace"]
    assert report["start_times_changed_during_redeploy"]
    assert report["passed"], report


def test_bench_needs_an_existing_module(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--clients", "1"])
    assert exc.value.code == 2
    assert "custom_code/mean.py: no such file" in capsys.readouterr().err
