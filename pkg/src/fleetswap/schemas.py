from typing import Any, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    node: str = Field(..., description="Kind of node answering the probe")
    pid: int = Field(..., description="Operating system process id")
    started_at: float = Field(..., description="Process start time, seconds since the epoch")
    port: Optional[int] = Field(None, description="Port of the framed protocol listener")
    active_handlers: int = Field(..., description="Number of running assignment handlers")
    registered_clients: int = Field(..., description="Number of connected clients")


class Client(BaseModel):
    client_id: str = Field(..., description="The ID of the client")
    model: str = Field(..., description="The vehicle model of the client")
    pid: Optional[int] = Field(None, description="Process id reported at registration")
    started_at: Optional[float] = Field(
        None, description="Process start time reported at registration"
    )


class Assignment(BaseModel):
    assignment_id: str = Field(..., description="The ID of the assignment")
    user_id: str = Field(..., description="The user that submitted the assignment")
    name: str = Field(..., description="The name given in the assignment document")
    status: str = Field(..., description="running, finished or failed")
    iteration: int = Field(..., description="Number of completed iterations")
    iterations: int = Field(..., description="Number of requested iterations")


class IterationEvent(BaseModel):
    seq: int = Field(..., description="Delivery order within the assignment")
    assignment_id: str = Field(..., description="The ID of the assignment")
    event: str = Field(..., description="iteration_result, iteration_discarded, ...")
    iteration: Optional[int] = Field(None, description="Iteration the event belongs to")
    signature: Optional[str] = Field(None, description="Signature of the kept results")
    payload: Any = Field(None, description="Off-board result of the iteration")
    kept: list[str] = Field(default_factory=list, description="Clients whose results were kept")
    discarded: list[str] = Field(
        default_factory=list, description="Clients whose results were discarded"
    )
    errors: dict[str, str] = Field(default_factory=dict, description="Client error reports")
    reason: Optional[str] = Field(None, description="Why an iteration produced no result")
