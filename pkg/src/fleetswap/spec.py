"""Assignment data model, front-end validation, client selection and task split."""

import math
import random
from typing import Annotated, Any, Literal

from pydantic import (
    AliasChoices,
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_core import PydanticCustomError

from fleetswap.errors import FilterSyntaxError, SelectionError
from fleetswap.filters import FilterExpr, parse_filter
from fleetswap.wire import Violation

ONBOARD_COMPUTATIONS = ("collect", "mean", "histogram", "custom")
OFFBOARD_COMPUTATIONS = ("collect", "average", "custom")
RESULT_FLOWS = ("isolated", "connected")
MAX_FREQUENCY = 1000


def _positive_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise PydanticCustomError("positive_int", "must be positive integer")
    return value


PositiveInt = Annotated[int, BeforeValidator(_positive_int)]


def _finite_vector(value: Any) -> list[float]:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        for v in value
    ):
        raise PydanticCustomError("finite_vector", "must be a list of finite numbers")
    return [float(v) for v in value]


Vector = Annotated[list[float], BeforeValidator(_finite_vector)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OnboardTask(_Strict):
    computation: Literal["collect", "mean", "histogram", "custom"]
    signals: list[str] = Field(validation_alias=AliasChoices("signals", "signal"))
    filters: str | None = None
    frequency: PositiveInt
    samples: PositiveInt
    parameters: dict[str, Any] = Field(default_factory=dict)

    @field_validator("signals", mode="before")
    @classmethod
    def _wrap_single_signal(cls, value: Any) -> Any:
        return [value] if isinstance(value, str) else value

    @field_validator("signals")
    @classmethod
    def _single_signal(cls, value: list[str]) -> list[str]:
        if not value or not all(value):
            raise PydanticCustomError("signals", "must name at least one signal")
        if len(value) > 1:
            raise PydanticCustomError(
                "signals",
                "only one signal per task is supported; submit one assignment per signal",
            )
        return value

    @field_validator("frequency")
    @classmethod
    def _frequency_cap(cls, value: int) -> int:
        if value > MAX_FREQUENCY:
            raise PydanticCustomError("frequency", f"must be at most {MAX_FREQUENCY}")
        return value

    @field_validator("filters")
    @classmethod
    def _parsable_filter(cls, value: str | None) -> str | None:
        if value is not None:
            try:
                parse_filter(value)
            except FilterSyntaxError as exc:
                raise PydanticCustomError("filter", str(exc)) from None
        return value

    @field_validator("parameters")
    @classmethod
    def _reserved_parameters(cls, value: dict[str, Any]) -> dict[str, Any]:
        flow = value.get("result_flow", "isolated")
        if flow not in RESULT_FLOWS:
            raise PydanticCustomError(
                "result_flow", f"result_flow must be one of {', '.join(RESULT_FLOWS)}"
            )
        if "initial_model" in value:
            value = {**value, "initial_model": _finite_vector(value["initial_model"])}
        return value

    @property
    def signal(self) -> str:
        return self.signals[0]

    @property
    def result_flow(self) -> str:
        return self.parameters.get("result_flow", "isolated")

    @property
    def filter_expr(self) -> FilterExpr | None:
        return parse_filter(self.filters) if self.filters else None

    @property
    def nominal_duration(self) -> float:
        return self.samples / self.frequency


class OffboardTask(_Strict):
    computation: Literal["collect", "average", "custom"]
    iterations: PositiveInt = 1


class ClientSelector(_Strict):
    variant: Literal["all", "random", "ids", "model"]
    count: PositiveInt | None = None
    ids: list[str] | None = None
    model: str | None = None

    @model_validator(mode="before")
    @classmethod
    def _shorthand(cls, value: Any) -> Any:
        match value:
            case "all":
                return {"variant": "all"}
            case str() if ":" in value:
                variant, _, arg = value.partition(":")
                if variant == "random":
                    return {"variant": "random", "count": int(arg) if arg.isdigit() else arg}
                if variant == "ids":
                    return {"variant": "ids", "ids": [i for i in arg.split(",") if i]}
                if variant == "model":
                    return {"variant": "model", "model": arg}
            case bool():
                pass
            case int():
                return {"variant": "random", "count": value}
            case list():
                return {"variant": "ids", "ids": value}
            case {"random": count} if len(value) == 1:
                return {"variant": "random", "count": count}
            case {"ids": ids} if len(value) == 1:
                return {"variant": "ids", "ids": ids}
            case {"model": name} if len(value) == 1:
                return {"variant": "model", "model": name}
        return value

    @model_validator(mode="after")
    def _variant_arguments(self) -> "ClientSelector":
        match self.variant:
            case "random" if self.count is None:
                raise PydanticCustomError("selector", "random selection needs a count")
            case "ids" if not self.ids:
                raise PydanticCustomError("selector", "ids selection must be non-empty")
            case "ids" if len(set(self.ids)) != len(self.ids):
                raise PydanticCustomError("selector", "ids selection contains duplicates")
            case "model" if not self.model:
                raise PydanticCustomError("selector", "model selection needs a model name")
        return self

    def __str__(self) -> str:
        match self.variant:
            case "random":
                return f"random:{self.count}"
            case "ids":
                return "ids:" + ",".join(self.ids or [])
            case "model":
                return f"model:{self.model}"
        return "all"


class AssignmentSpec(_Strict):
    name: str = Field(min_length=1)
    clients: ClientSelector
    onboard: OnboardTask
    offboard: OffboardTask
    user_id: str = ""

    @model_validator(mode="after")
    def _connected_flow_needs_numbers(self) -> "AssignmentSpec":
        if self.onboard.result_flow == "connected" and self.offboard.computation == "collect":
            raise PydanticCustomError(
                "result_flow",
                "connected result_flow needs an off-board computation of average or custom",
            )
        return self

    @property
    def uses_custom(self) -> dict[str, bool]:
        return {
            "onboard": self.onboard.computation == "custom",
            "offboard": self.offboard.computation == "custom",
        }


class TaskSpec(_Strict):
    assignment_id: str
    user_id: str
    client_id: str
    iteration: int = Field(ge=0)
    onboard: OnboardTask
    input_model: Vector | None = None
    signature_hint: str | None = None


def _violations(exc: ValidationError) -> list[Violation]:
    out = []
    for error in exc.errors():
        path = ".".join(str(part) for part in error["loc"] if not isinstance(part, int))
        out.append(Violation(field=path or "spec", reason=error["msg"]))
    return out


def validate_assignment(
    doc: Any, user_id: str | None = None
) -> AssignmentSpec | list[Violation]:
    """Return a typed spec, or every violation found in ``doc``."""
    if isinstance(doc, AssignmentSpec):
        doc = doc.model_dump(exclude_none=True)
    if not isinstance(doc, dict):
        return [Violation(field="spec", reason="must be a key/value document")]
    if user_id is not None:
        doc = {**doc, "user_id": user_id}
    try:
        return AssignmentSpec.model_validate(doc)
    except ValidationError as exc:
        return _violations(exc)


def select_clients(
    sel: ClientSelector, registry: list[tuple[str, str]], rng_seed: int
) -> list[str]:
    """Resolve a selector against ``(client_id, model)`` pairs, sorted ascending."""
    known = sorted(cid for cid, _ in registry)
    match sel.variant:
        case "all":
            return known
        case "random":
            if sel.count > len(known):
                raise SelectionError(
                    f"random selection of {sel.count} clients exceeds the {len(known)} registered"
                )
            return sorted(random.Random(rng_seed).sample(known, sel.count))
        case "ids":
            registered = set(known)
            unknown = [cid for cid in sel.ids if cid not in registered]
            if unknown:
                raise SelectionError(f"unknown client ids: {', '.join(unknown)}")
            return sorted(sel.ids)
        case "model":
            matched = sorted(cid for cid, model in registry if model == sel.model)
            if not matched:
                raise SelectionError(f"no registered client of model {sel.model}")
            return matched
    raise SelectionError(f"unsupported selector {sel.variant}")


def split_into_tasks(
    a: AssignmentSpec,
    assignment_id: str,
    clients: list[str],
    iteration: int,
    input_model: list[float] | None = None,
    signature_hint: str | None = None,
) -> list[TaskSpec]:
    if not clients:
        raise ValueError("split_into_tasks needs at least one client")
    if not 0 <= iteration < a.offboard.iterations:
        raise ValueError(
            f"iteration {iteration} outside 0..{a.offboard.iterations - 1}"
        )
    if a.onboard.result_flow != "connected":
        input_model = None
    return [
        TaskSpec(
            assignment_id=assignment_id,
            user_id=a.user_id,
            client_id=cid,
            iteration=iteration,
            onboard=a.onboard,
            input_model=list(input_model) if input_model is not None else None,
            signature_hint=signature_hint,
        )
        for cid in clients
    ]
