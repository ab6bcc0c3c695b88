"""Reference recomputation of connected-flow runs, outside the node processes.

Sample streams are regenerated from the client seeds and the on-board script
runs in-process, in the same order the clients apply it. The off-board step is
a plain element-wise average, kept apart from the bridge's code path.
"""

from dataclasses import dataclass, field
from typing import Any

from fleetswap.client import task_seed
from fleetswap.filters import eval_filter
from fleetswap.sandbox import conform, load_entry
from fleetswap.sensors import DEFAULT_CATALOG, SignalCatalog, open_stream
from fleetswap.spec import AssignmentSpec, TaskSpec


@dataclass
class Trajectory:
    models: list[list[float]] = field(default_factory=list)

    @property
    def final(self) -> list[float] | None:
        return self.models[-1] if self.models else None


def regenerate_buffer(task: TaskSpec, seed: int, catalog: SignalCatalog) -> list[float]:
    onboard = task.onboard
    expr = onboard.filter_expr
    buffer = []
    for value in open_stream(onboard.signal, catalog, task_seed(seed, task)):
        if expr is None or eval_filter(expr, value):
            buffer.append(value)
            if len(buffer) == onboard.samples:
                break
    return buffer


def _as_model(value: float | list[float]) -> list[float]:
    return list(value) if isinstance(value, list) else [value]


def federated_trajectory(
    spec: AssignmentSpec,
    onboard_source: str,
    client_seeds: dict[str, int],
    catalog: SignalCatalog = DEFAULT_CATALOG,
) -> Trajectory:
    """Model after every iteration of a connected custom/custom assignment."""
    parameters: dict[str, Any] = dict(spec.onboard.parameters)
    model = parameters.get("initial_model")
    clients = sorted(client_seeds)
    trajectory = Trajectory()
    for iteration in range(spec.offboard.iterations):
        locals_ = []
        for client_id in clients:
            task = TaskSpec(
                assignment_id="oracle",
                user_id=spec.user_id or "oracle",
                client_id=client_id,
                iteration=iteration,
                onboard=spec.onboard,
                input_model=model,
            )
            buffer = regenerate_buffer(task, client_seeds[client_id], catalog)
            entry = load_entry(onboard_source, {**parameters, "input_model": model})
            locals_.append(conform(entry(list(buffer))))
        model = plain_average([_as_model(value) for value in locals_])
        trajectory.models.append(model)
    return trajectory


def plain_average(vectors: list[list[float]]) -> list[float]:
    width = len(vectors[0])
    return [sum(v[j] for v in vectors) / len(vectors) for j in range(width)]


def max_abs_diff(a: list[float], b: list[float]) -> float:
    if len(a) != len(b):
        return float("inf")
    return max((abs(x - y) for x, y in zip(a, b)), default=0.0)
