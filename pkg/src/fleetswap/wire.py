"""Length-prefixed JSON framing and message schemas.

Wire format::

    [4 bytes big-endian uint32: payload length][UTF-8 JSON object payload]

Every payload is a single JSON object with a string ``kind``. Custom code
travels base64-encoded in the ``custom_code`` body field.
"""

import asyncio
import base64
import binascii
import json
import struct
from collections.abc import Iterator
from typing import Any, Literal, get_args

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fleetswap.errors import FrameTooLarge, ProtocolError

HEADER = struct.Struct("!I")
MAX_FRAME = 16 * 1024 * 1024

Kind = Literal["assignment", "deploy_code", "task", "result", "status", "error", "ack"]
KINDS: tuple[str, ...] = get_args(Kind)
DEPLOY_MODES = ("deploy_onboard", "deploy_offboard")


class Message(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Kind
    assignment_id: str = ""
    user_id: str = ""
    body: dict[str, Any] = Field(default_factory=dict)


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}"


def encode_source(source: str) -> str:
    return base64.b64encode(source.encode("utf-8")).decode("ascii")


def decode_source(encoded: str) -> str:
    return base64.b64decode(encoded.encode("ascii"), validate=True).decode("utf-8")


def encode_frame(msg: Message) -> bytes:
    payload = json.dumps(
        msg.model_dump(mode="json"),
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(len(payload), MAX_FRAME)
    return HEADER.pack(len(payload)) + payload


def decode_frame(data: bytes) -> tuple[Message | None, int]:
    """Decode one frame from the start of ``data``.

    Returns the message and the number of consumed bytes, or ``(None, 0)``
    when ``data`` does not yet hold a complete frame.
    """
    if len(data) < HEADER.size:
        return None, 0
    (length,) = HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise FrameTooLarge(length, MAX_FRAME)
    end = HEADER.size + length
    if len(data) < end:
        return None, 0
    return parse_payload(bytes(data[HEADER.size : end])), end


def parse_payload(payload: bytes) -> Message:
    if not payload.strip():
        raise ProtocolError("payload", "not a JSON object")
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("payload", f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ProtocolError("payload", "not a JSON object")
    kind = doc.get("kind")
    if not isinstance(kind, str):
        raise ProtocolError("kind", "missing or not a string")
    if kind not in KINDS:
        raise ProtocolError("kind", f"unknown kind {kind!r}")
    for name in ("assignment_id", "user_id"):
        if name in doc and not isinstance(doc[name], str):
            raise ProtocolError(name, "must be a string")
    if not isinstance(doc.get("body", {}), dict):
        raise ProtocolError("body", "must be an object")
    unknown = set(doc) - set(Message.model_fields)
    if unknown:
        raise ProtocolError(sorted(unknown)[0], "unknown field")
    msg = Message.model_validate(doc)
    violations = validate_message(msg)
    if violations:
        raise ProtocolError(violations[0].field, violations[0].reason)
    return msg


def _require(body: dict, name: str, kind: type | tuple[type, ...], out: list) -> None:
    if name not in body:
        out.append(Violation(field=name, reason="required field missing"))
    elif not isinstance(body[name], kind) or isinstance(body[name], bool):
        out.append(Violation(field=name, reason="wrong type"))


def validate_message(msg: Message) -> list[Violation]:
    """Return every schema violation of ``msg``; an empty list means ok."""
    violations: list[Violation] = []
    body = msg.body
    if msg.kind != "ack":
        if not msg.assignment_id:
            violations.append(Violation(field="assignment_id", reason="must be non-empty"))
        if not msg.user_id:
            violations.append(Violation(field="user_id", reason="must be non-empty"))

    match msg.kind:
        case "assignment":
            _require(body, "spec", dict, violations)
        case "deploy_code":
            if "mode" not in body:
                violations.append(Violation(field="mode", reason="required field missing"))
            elif body["mode"] not in DEPLOY_MODES:
                violations.append(
                    Violation(field="mode", reason=f"must be one of {', '.join(DEPLOY_MODES)}")
                )
            _require(body, "custom_code", str, violations)
            if isinstance(body.get("custom_code"), str):
                try:
                    decode_source(body["custom_code"])
                except (binascii.Error, UnicodeDecodeError, ValueError):
                    violations.append(
                        Violation(field="custom_code", reason="not base64-encoded UTF-8")
                    )
        case "task":
            _require(body, "client_id", str, violations)
            _require(body, "iteration", int, violations)
            _require(body, "onboard", dict, violations)
            if isinstance(body.get("iteration"), int) and body["iteration"] < 0:
                violations.append(Violation(field="iteration", reason="must be >= 0"))
        case "result":
            _require(body, "client_id", str, violations)
            _require(body, "iteration", int, violations)
            _require(body, "signature", str, violations)
            if ("payload" in body) == ("error" in body):
                violations.append(
                    Violation(field="payload", reason="exactly one of payload/error required")
                )
        case "status":
            _require(body, "event", str, violations)
        case "error":
            _require(body, "reason", str, violations)
    return violations


class FrameDecoder:
    """Incremental decoder for a byte stream split at arbitrary points."""

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> Iterator[Message]:
        self._buffer.extend(data)
        while True:
            msg, consumed = decode_frame(self._buffer)
            if msg is None:
                return
            del self._buffer[:consumed]
            yield msg

    @property
    def pending(self) -> int:
        return len(self._buffer)


async def read_message(reader: asyncio.StreamReader) -> Message | None:
    """Read one message, or return None on a clean end of stream."""
    try:
        header = await reader.readexactly(HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise ProtocolError("frame", "stream closed inside a frame header") from None
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameTooLarge(length, MAX_FRAME)
    try:
        payload = await reader.readexactly(length)
    except asyncio.IncompleteReadError:
        raise ProtocolError("frame", "stream closed inside a frame payload") from None
    return parse_payload(payload)


async def write_message(writer: asyncio.StreamWriter, msg: Message) -> None:
    writer.write(encode_frame(msg))
    await writer.drain()


def error_message(reason: str, *, assignment_id: str, user_id: str, **body: Any) -> Message:
    return Message(
        kind="error",
        assignment_id=assignment_id,
        user_id=user_id,
        body={"reason": reason, **body},
    )


class ResultEnvelope(BaseModel):
    """One client's result for one iteration, tagged with the producing code."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    assignment_id: str
    client_id: str
    iteration: int = Field(ge=0)
    signature: str = ""
    payload: float | list[float] | None = None
    error: str | None = None

    @model_validator(mode="after")
    def _payload_xor_error(self) -> "ResultEnvelope":
        if (self.payload is None) == (self.error is None):
            raise ValueError("exactly one of payload/error must be present")
        return self

    @classmethod
    def failure(cls, assignment_id: str, client_id: str, iteration: int, reason: str,
                signature: str = "") -> "ResultEnvelope":
        return cls(
            assignment_id=assignment_id,
            client_id=client_id,
            iteration=iteration,
            signature=signature,
            error=reason,
        )

    @classmethod
    def from_message(cls, msg: Message) -> "ResultEnvelope":
        return cls(assignment_id=msg.assignment_id, **msg.body)

    def to_message(self, user_id: str) -> Message:
        body = self.model_dump(exclude={"assignment_id"}, exclude_none=True)
        return Message(kind="result", assignment_id=self.assignment_id, user_id=user_id, body=body)
