import asyncio
import itertools
import json
import os
import sys
from pathlib import Path

import pytest

# Add parent directory to path to import the package
sys.path.insert(0, os.path.join(str(Path(__file__).parent.parent), "src"))

from conftest import ASSIGNMENTS, CUSTOM_CODE
from fleetswap import UNASSIGNED
from fleetswap.codeswap import signature
from fleetswap.harness import check_signature_purity, check_transition
from fleetswap.oracle import federated_trajectory, max_abs_diff
from fleetswap.spec import validate_assignment
from fleetswap.wire import Message, encode_source

V1 = (CUSTOM_CODE / "swap_v1.py").read_text()
V2 = (CUSTOM_CODE / "swap_v2.py").read_text()


def deploy_message(target, source, clients="all", user_id="u1"):
    body = {"mode": f"deploy_{target}", "custom_code": encode_source(source)}
    if target == "onboard":
        body["clients"] = clients
    return Message(kind="deploy_code", assignment_id=UNASSIGNED, user_id=user_id, body=body)


def speed_doc(computation="custom", iterations=4, samples=100, offboard="average", **extra):
    onboard = {"computation": computation, "signal": "speed", "frequency": 10,
               "samples": samples, **extra}
    return {
        "name": f"speed {computation}",
        "clients": "all",
        "onboard": onboard,
        "offboard": {"computation": offboard, "iterations": iterations},
    }


async def wait_done(bridge, assignment_id, timeout=30.0):
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while True:
        record = await bridge.results.fetch_assignment(assignment_id)
        if record["status"] != "running":
            return await bridge.results.fetch_events(assignment_id)
        assert loop.time() < deadline, f"{assignment_id} did not finish"
        await asyncio.sleep(0.01)


def gate_iteration(bridge, assignment_id, iteration):
    """Hold the handler before it dispatches ``iteration`` until the event is set."""
    handler = bridge.handlers[assignment_id]
    dispatch = handler._dispatch
    reached, release = asyncio.Event(), asyncio.Event()

    async def gated(tasks):
        if tasks[0].iteration == iteration:
            reached.set()
            await release.wait()
        await dispatch(tasks)

    handler._dispatch = gated
    return reached, release


def read_audit(bridge):
    lines = bridge.config.audit_log.read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def results_of(events):
    return [e for e in events if e["event"] == "iteration_result"]


@pytest.mark.asyncio
async def test_swap_between_iterations(bridge, fleet):
    for i in (1, 2, 3):
        await fleet(f"c{i}", seed=i)
    links = dict(bridge.registry)
    assert (await bridge.handle_deploy(deploy_message("onboard", V1))).body["status"] == "ok"

    assignment_id = await bridge.handle_assignment(speed_doc(iterations=4), "u1")
    reached, release = gate_iteration(bridge, assignment_id, 2)
    await asyncio.wait_for(reached.wait(), 30)
    reply = await bridge.handle_deploy(deploy_message("onboard", V2))
    assert reply.body["acks"] == ["c1", "c2", "c3"]
    release.set()

    events = await wait_done(bridge, assignment_id)
    delivered = results_of(events)
    assert [e["iteration"] for e in delivered] == [0, 1, 2, 3]
    signatures = [e["signature"] for e in delivered]
    assert signatures == [signature(V1)] * 2 + [signature(V2)] * 2
    assert check_transition(signatures, signature(V1), signature(V2)) is None
    assert check_signature_purity(read_audit(bridge), assignment_id) == []
    assert events[-1]["event"] == "finished"
    # the same connections served the whole run
    assert all(bridge.registry[cid] is link for cid, link in links.items())


@pytest.mark.asyncio
async def test_divergent_client_is_outvoted(bridge, fleet):
    for i in (1, 2, 3):
        await fleet(f"c{i}", seed=i)
    await bridge.handle_deploy(deploy_message("onboard", V1))
    await bridge.handle_deploy(deploy_message("onboard", V2, clients="ids:c3"))

    assignment_id = await bridge.handle_assignment(speed_doc(iterations=2), "u1")
    events = await wait_done(bridge, assignment_id)
    assert len(results_of(events)) == 2
    for event in results_of(events):
        assert event["kept"] == ["c1", "c2"]
        assert event["discarded"] == ["c3"]
        # plurality wins over the signature the bridge holds
        assert event["signature"] == signature(V1)
    assert check_signature_purity(read_audit(bridge), assignment_id) == []


@pytest.mark.asyncio
async def test_stopped_client_reports_unavailable(bridge, fleet):
    nodes = [await fleet(f"c{i}", seed=i) for i in (1, 2, 3)]
    assignment_id = await bridge.handle_assignment(
        speed_doc("mean", iterations=3), "u1"
    )
    reached, release = gate_iteration(bridge, assignment_id, 1)
    await asyncio.wait_for(reached.wait(), 30)
    await nodes[2].stop()
    while "c3" in bridge.registry:
        await asyncio.sleep(0.01)
    release.set()

    events = await wait_done(bridge, assignment_id)
    delivered = results_of(events)
    assert [e["iteration"] for e in delivered] == [0, 1, 2]
    assert delivered[0]["kept"] == ["c1", "c2", "c3"]
    assert delivered[1]["kept"] == ["c1", "c2"]
    assert delivered[1]["errors"] == {"c3": "client unavailable"}


@pytest.mark.asyncio
async def test_filtered_assignment_completes_when_paced(bridge, fleet):
    # x > 100 keeps about one speed draw in eleven, so filling 150 samples at
    # 1 ms per draw outlasts a limit derived from the nominal duration alone
    for i in (1, 2):
        await fleet(f"c{i}", seed=i, time_scale=100)
    doc = speed_doc("collect", iterations=2, samples=150, offboard="collect", filters="x > 100")
    assignment_id = await bridge.handle_assignment(doc, "u1")

    events = await wait_done(bridge, assignment_id)
    delivered = results_of(events)
    assert [e["iteration"] for e in delivered] == [0, 1]
    for event in delivered:
        assert event["errors"] == {}
        assert [cid for cid, _ in event["payload"]] == ["c1", "c2"]
        for _, values in event["payload"]:
            assert len(values) == 150 and all(v > 100 for v in values)


def workload():
    docs = []
    shapes = itertools.product(
        ("speed", "steering_angle", "odometer"),
        (("mean", "average", None), ("histogram", "average", None),
         ("collect", "collect", "x > 0"), ("mean", "average", "x < 90")),
    )
    for n, (signal, (onboard, offboard, filters)) in enumerate(itertools.cycle(shapes)):
        if n == 24:
            break
        doc = {
            "name": f"load {n}",
            "clients": "all",
            "onboard": {"computation": onboard, "signal": signal, "frequency": 10,
                        "samples": 20 + n},
            "offboard": {"computation": offboard, "iterations": 2},
        }
        if filters:
            doc["onboard"]["filters"] = filters
        docs.append(doc)
    return docs


@pytest.mark.asyncio
async def test_concurrent_assignments_match_solo_runs(bridge, fleet):
    for i in range(1, 9):
        await fleet(f"c{i}", model="type_a" if i % 2 else "type_b", seed=100 + i)
    docs = workload()

    solo = []
    for doc in docs:
        assignment_id = await bridge.handle_assignment(doc, "u3")
        solo.append([e["payload"] for e in results_of(await wait_done(bridge, assignment_id))])

    ids = await asyncio.gather(
        *(bridge.handle_assignment(doc, "u1" if n % 2 else "u2") for n, doc in enumerate(docs))
    )
    assert len(set(ids)) == 24
    assert sorted(i for i in ids if i.startswith("u1-")) == sorted(f"u1-{k}" for k in range(1, 13))

    for assignment_id, expected in zip(ids, solo):
        events = await wait_done(bridge, assignment_id, timeout=60)
        assert [e["payload"] for e in results_of(events)] == expected, assignment_id
        assert [e["seq"] for e in events] == list(range(1, len(events) + 1))


@pytest.mark.asyncio
async def test_connected_run_matches_oracle(bridge, fleet):
    seeds = {"c1": 7, "c2": 8, "c3": 9}
    for client_id, seed in seeds.items():
        await fleet(client_id, seed=seed)
    onboard = (CUSTOM_CODE / "fedavg_onboard.py").read_text()
    offboard = (CUSTOM_CODE / "fedavg_offboard.py").read_text()
    assert (await bridge.handle_deploy(deploy_message("onboard", onboard))).body["status"] == "ok"
    assert (await bridge.handle_deploy(deploy_message("offboard", offboard))).body["status"] == "ok"

    doc = json.loads((ASSIGNMENTS / "federated.json").read_text())
    assignment_id = await bridge.handle_assignment(doc, "u1")
    delivered = results_of(await wait_done(bridge, assignment_id))
    assert len(delivered) == 3

    spec = validate_assignment(doc, user_id="u1")
    expected = federated_trajectory(spec, onboard, seeds)
    for event, model in zip(delivered, expected.models):
        assert max_abs_diff(event["payload"], model) <= 1e-12
