import copy
import json
import os
import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

# Add parent directory to path to import the package
sys.path.insert(0, os.path.join(str(Path(__file__).parent.parent), "src"))

from fleetswap.errors import SelectionError
from fleetswap.spec import (
    AssignmentSpec,
    ClientSelector,
    select_clients,
    split_into_tasks,
    validate_assignment,
)

SPEED_ANOMALIES = {
    "name": "speed above 100",
    "clients": "all",
    "onboard": {
        "computation": "collect",
        "signals": ["speed"],
        "filters": "x > 100",
        "frequency": 10,
        "samples": 36000,
    },
    "offboard": {"computation": "collect", "iterations": 10},
}

REGISTRY = [("c1", "type_a"), ("c2", "type_b"), ("c3", "type_a")]


def with_onboard(**changes):
    doc = copy.deepcopy(SPEED_ANOMALIES)
    doc["onboard"].update(changes)
    return doc


def test_speed_anomalies_document_is_valid():
    spec = validate_assignment(SPEED_ANOMALIES)
    assert isinstance(spec, AssignmentSpec)
    assert spec.onboard.samples == 3600 * spec.onboard.frequency
    assert spec.offboard.iterations == 10
    assert spec.clients.variant == "all"


def test_shipped_assignment_files_are_valid():
    root = Path(__file__).parent.parent / "assignments"
    for path in sorted(root.glob("*.json")):
        result = validate_assignment(json.loads(path.read_text()))
        assert isinstance(result, AssignmentSpec), (path.name, result)


def test_frequency_zero():
    violations = validate_assignment(with_onboard(frequency=0))
    assert [str(v) for v in violations] == ["onboard.frequency: must be positive integer"]


def test_fractional_frequency():
    violations = validate_assignment(with_onboard(frequency=10.5))
    assert [v.field for v in violations] == ["onboard.frequency"]


def test_frequency_cap():
    assert validate_assignment(with_onboard(frequency=1001))[0].field == "onboard.frequency"


def test_unknown_computation_lists_keywords():
    (violation,) = validate_assignment(with_onboard(computation="colect"))
    assert violation.field == "onboard.computation"
    for keyword in ("collect", "mean", "histogram", "custom"):
        assert keyword in violation.reason


def test_all_violations_reported():
    doc = with_onboard(frequency=0, samples=-1, filters="y > 1")
    del doc["name"]
    fields = {v.field for v in validate_assignment(doc)}
    assert fields == {"name", "onboard.frequency", "onboard.samples", "onboard.filters"}


def test_multiple_signals_rejected():
    (violation,) = validate_assignment(with_onboard(signals=["speed", "odometer"]))
    assert "one signal per task" in violation.reason


def test_signal_alias():
    doc = copy.deepcopy(SPEED_ANOMALIES)
    onboard = doc["onboard"]
    onboard["signal"] = onboard.pop("signals")[0]
    assert validate_assignment(doc).onboard.signal == "speed"


def test_not_a_document():
    assert validate_assignment([1, 2])[0].field == "spec"


def test_connected_flow_needs_numeric_offboard():
    doc = with_onboard(parameters={"result_flow": "connected"})
    violations = validate_assignment(doc)
    assert "connected result_flow" in violations[0].reason


def test_bad_result_flow():
    (violation,) = validate_assignment(with_onboard(parameters={"result_flow": "sideways"}))
    assert "result_flow" in violation.reason


def test_iterations_default_to_one():
    doc = copy.deepcopy(SPEED_ANOMALIES)
    doc["offboard"] = {"computation": "collect"}
    assert validate_assignment(doc).offboard.iterations == 1


def test_idempotent():
    spec = validate_assignment(SPEED_ANOMALIES)
    assert validate_assignment(spec) == spec


def test_user_id_is_stamped():
    assert validate_assignment(SPEED_ANOMALIES, user_id="u7").user_id == "u7"


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("all", "all"),
        ("random:2", "random:2"),
        (2, "random:2"),
        ({"random": 2}, "random:2"),
        ("ids:c1,c3", "ids:c1,c3"),
        (["c1", "c3"], "ids:c1,c3"),
        ({"model": "type_a"}, "model:type_a"),
        ("model:type_a", "model:type_a"),
    ],
)
def test_selector_shorthands(raw, expected):
    assert str(ClientSelector.model_validate(raw)) == expected


@pytest.mark.parametrize("raw", ["random:x", "ids:", [], {"model": ""}, ["c1", "c1"], True])
def test_bad_selectors(raw):
    with pytest.raises(ValidationError):
        ClientSelector.model_validate(raw)


def test_select_all():
    assert select_clients(ClientSelector(variant="all"), REGISTRY, 0) == ["c1", "c2", "c3"]


def test_select_unknown_id():
    with pytest.raises(SelectionError, match="c9"):
        select_clients(ClientSelector(variant="ids", ids=["c2", "c9"]), REGISTRY, 0)


def test_select_model():
    registry = [("c1", "type_a"), ("c2", "type_b")]
    assert select_clients(ClientSelector(variant="model", model="type_a"), registry, 0) == ["c1"]


def test_select_model_without_match():
    with pytest.raises(SelectionError):
        select_clients(ClientSelector(variant="model", model="type_z"), REGISTRY, 0)


def test_random_selection_is_seeded():
    sel = ClientSelector(variant="random", count=2)
    registry = [(f"c{i}", "type_a") for i in range(20)]
    first = select_clients(sel, registry, 42)
    assert first == select_clients(sel, registry, 42)
    assert first == sorted(first) and len(set(first)) == 2


def test_random_selection_too_large():
    with pytest.raises(SelectionError):
        select_clients(ClientSelector(variant="random", count=4), REGISTRY, 0)


def test_split_isolated():
    spec = validate_assignment(SPEED_ANOMALIES)
    tasks = split_into_tasks(spec, "u1-1", ["c1", "c2", "c3"], 0, input_model=[1.0])
    assert [t.client_id for t in tasks] == ["c1", "c2", "c3"]
    assert all(t.input_model is None and t.iteration == 0 for t in tasks)
    assert {t.assignment_id for t in tasks} == {"u1-1"}


def test_split_connected_carries_model():
    doc = with_onboard(computation="custom", parameters={"result_flow": "connected"})
    doc["offboard"] = {"computation": "average", "iterations": 3}
    spec = validate_assignment(doc)
    tasks = split_into_tasks(spec, "u1-1", ["c1", "c2"], 1, input_model=[2, 3])
    assert [t.input_model for t in tasks] == [[2.0, 3.0], [2.0, 3.0]]


def test_split_needs_clients():
    spec = validate_assignment(SPEED_ANOMALIES)
    with pytest.raises(ValueError):
        split_into_tasks(spec, "u1-1", [], 0)


def test_split_iteration_out_of_range():
    spec = validate_assignment(SPEED_ANOMALIES)
    with pytest.raises(ValueError):
        split_into_tasks(spec, "u1-1", ["c1"], 10)
