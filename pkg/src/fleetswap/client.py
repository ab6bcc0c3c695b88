"""Client node: a simulated vehicle with per-task handlers and a custom-code store."""

import argparse
import asyncio
import os
import zlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import structlog
from pydantic import ValidationError

from fleetswap import PROCESS_STARTED_AT, UNASSIGNED
from fleetswap.codeswap import CodeStore, CustomModule, execute_custom, validate_custom
from fleetswap.config import ClientConfig, SandboxConfig, split_address
from fleetswap.errors import (
    EndOfStream,
    ExecutionError,
    NotDeployed,
    PartialCollection,
    ProtocolError,
    UnknownSignal,
)
from fleetswap.filters import eval_filter
from fleetswap.logs import configure_logging
from fleetswap.sensors import DEFAULT_CATALOG, SignalCatalog, SignalStream, open_stream
from fleetswap.spec import TaskSpec
from fleetswap.wire import (
    Message,
    ResultEnvelope,
    decode_source,
    read_message,
    write_message,
)

logger = structlog.get_logger(__name__)

HISTOGRAM_BINS = 10
YIELD_EVERY = 256

HandlerState = Literal["collecting", "computing", "reporting", "done"]


def task_seed(seed: int, task: TaskSpec) -> int:
    """Stream seed for one task: fixed by client seed, signal and iteration."""
    return seed ^ zlib.crc32(f"{task.onboard.signal}/{task.iteration}".encode())


@dataclass
class TaskHandler:
    task: TaskSpec
    state: HandlerState = "collecting"
    buffer: list[float] = field(default_factory=list)

    def discard(self) -> None:
        self.buffer = []
        self.state = "done"


def collect_cap(
    task: TaskSpec,
    time_scale: float,
    cap: float | None = None,
    accepted: int = 0,
    elapsed: float = 0.0,
) -> float:
    """Wall-clock limit on collection for ``task``.

    Draws rejected by a filter take time too, so a filtered task's limit grows
    with the projected time to fill the buffer at the acceptance rate seen so
    far. An explicit ``cap`` overrides both.
    """
    if cap is not None:
        return cap
    nominal = task.onboard.nominal_duration
    scaled = nominal / time_scale if time_scale > 0 else 0.0
    limit = 2 * scaled + 1.0
    if task.onboard.filters and accepted:
        projected = elapsed * task.onboard.samples / accepted
        limit = max(limit, 2 * projected + 1.0)
    return limit


async def collect_samples(
    handler: TaskHandler,
    stream: SignalStream,
    *,
    time_scale: float = 0.0,
    cap: float | None = None,
) -> list[float]:
    """Fill ``handler.buffer`` with samples accepted by the task filter.

    Draws are paced at the task frequency divided by ``time_scale``; a scale
    of 0 draws as fast as possible.
    """
    onboard = handler.task.onboard
    wanted = onboard.samples
    expr = onboard.filter_expr
    interval = 1.0 / onboard.frequency / time_scale if time_scale > 0 else 0.0
    loop = asyncio.get_running_loop()
    started = next_at = loop.time()
    drawn = 0
    handler.state = "collecting"
    while len(handler.buffer) < wanted:
        elapsed = loop.time() - started
        if elapsed > collect_cap(handler.task, time_scale, cap, len(handler.buffer), elapsed):
            raise PartialCollection(len(handler.buffer), wanted)
        try:
            value = stream.next_sample()
        except EndOfStream:
            raise PartialCollection(len(handler.buffer), wanted) from None
        drawn += 1
        if expr is None or eval_filter(expr, value):
            handler.buffer.append(value)
        if interval:
            next_at += interval
            delay = next_at - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
        elif drawn % YIELD_EVERY == 0:
            await asyncio.sleep(0)
    return handler.buffer


def onboard_compute(
    handler: TaskHandler, store: CodeStore, sandbox: SandboxConfig | None = None
) -> ResultEnvelope:
    task = handler.task
    onboard = task.onboard
    handler.state = "computing"
    buffer = handler.buffer

    def envelope(payload, signature: str) -> ResultEnvelope:
        return ResultEnvelope(
            assignment_id=task.assignment_id,
            client_id=task.client_id,
            iteration=task.iteration,
            signature=signature,
            payload=payload,
        )

    def failure(reason: str, signature: str = "") -> ResultEnvelope:
        return ResultEnvelope.failure(
            task.assignment_id, task.client_id, task.iteration, reason, signature
        )

    match onboard.computation:
        case "collect":
            return envelope(list(buffer), "builtin:collect")
        case "mean":
            return envelope(float(np.mean(buffer)), "builtin:mean")
        case "histogram":
            counts, _ = np.histogram(np.asarray(buffer, dtype=float), bins=HISTOGRAM_BINS)
            return envelope([float(c) for c in counts], "builtin:histogram")

    try:
        module = store.load_module(task.user_id, "onboard")
    except NotDeployed:
        return failure(f"no custom code for user {task.user_id}")
    params = {**onboard.parameters, "input_model": task.input_model}
    try:
        result = execute_custom(module, buffer, params, config=sandbox)
    except ExecutionError as exc:
        logger.warning("custom_failed", assignment_id=task.assignment_id,
                       signature=module.signature, error=str(exc))
        return failure(str(exc), module.signature)
    return envelope(result.value, result.signature)


def handle_client_deploy(
    msg: Message, store: CodeStore, sandbox: SandboxConfig | None = None
) -> Message:
    """Re-validate a forwarded module, store it, and build the ack or error reply."""
    client_id = msg.body.get("client_id", "")
    target = "onboard" if msg.body["mode"] == "deploy_onboard" else "offboard"
    source = decode_source(msg.body["custom_code"])
    report = validate_custom(source, target, config=sandbox)
    if not report.ok:
        return Message(
            kind="error",
            assignment_id=msg.assignment_id,
            user_id=msg.user_id,
            body={"reason": f"validation failed: {report.describe()}",
                  "stage": report.stage, "client_id": client_id},
        )
    module = CustomModule.build(source, msg.user_id, target)
    try:
        store.store_module(module)
    except (OSError, ValueError) as exc:
        return Message(
            kind="error",
            assignment_id=msg.assignment_id,
            user_id=msg.user_id,
            body={"reason": f"store failed: {exc}", "client_id": client_id},
        )
    return Message(
        kind="ack",
        assignment_id=msg.assignment_id,
        user_id=msg.user_id,
        body={"event": "deployed", "signature": module.signature, "client_id": client_id},
    )


class ClientNode:
    def __init__(self, config: ClientConfig):
        self.config = config
        self.client_id = config.client_id
        self.store = CodeStore(config.resolved_store_dir)
        self.sandbox = SandboxConfig(timeout=config.timeout)
        self.catalog = (
            SignalCatalog.from_file(config.catalog) if config.catalog else DEFAULT_CATALOG
        )
        self.handlers: set[asyncio.Task] = set()
        self.started_at = PROCESS_STARTED_AT
        self._writer: asyncio.StreamWriter | None = None
        self._lock = asyncio.Lock()
        self._stopping = False
        self.log = logger.bind(client_id=self.client_id)

    async def send(self, msg: Message) -> None:
        if self._writer is None:
            raise ConnectionError("not connected to the bridge")
        async with self._lock:
            await write_message(self._writer, msg)

    async def connect(self, retry_delay: float = 0.2):
        host, port = split_address(self.config.bridge)
        while True:
            try:
                reader, writer = await asyncio.open_connection(host, port)
                break
            except OSError:
                if self._stopping:
                    raise
                await asyncio.sleep(retry_delay)
        self._writer = writer
        await self.send(
            Message(
                kind="status",
                assignment_id=UNASSIGNED,
                user_id=self.client_id,
                body={
                    "event": "register",
                    "client_id": self.client_id,
                    "model": self.config.model,
                    "pid": os.getpid(),
                    "started_at": self.started_at,
                },
            )
        )
        self.log.info("client_connected", bridge=self.config.bridge, model=self.config.model)
        return reader

    async def run(self) -> None:
        while not self._stopping:
            reader = await self.connect()
            try:
                await self.serve(reader)
            finally:
                if self._writer is not None:
                    self._writer.close()
                    self._writer = None
            if not self._stopping:
                self.log.warning("bridge_connection_lost")

    async def serve(self, reader: asyncio.StreamReader) -> None:
        while True:
            try:
                msg = await read_message(reader)
            except ProtocolError as exc:
                self.log.warning("protocol_error", error=str(exc))
                continue
            except (ConnectionError, asyncio.IncompleteReadError):
                return
            if msg is None:
                return
            match msg.kind:
                case "task":
                    self.handle_message_task(msg)
                case "deploy_code":
                    reply = await asyncio.to_thread(
                        handle_client_deploy, msg, self.store, self.sandbox
                    )
                    self.log.info("deploy_handled", deploy_id=msg.assignment_id,
                                  ok=reply.kind == "ack",
                                  signature=reply.body.get("signature"))
                    await self.send(reply)
                case "ack":
                    self.log.debug("bridge_ack", body=msg.body)
                case _:
                    self.log.debug("message_ignored", kind=msg.kind)

    def handle_message_task(self, msg: Message) -> asyncio.Task | None:
        try:
            task = TaskSpec.model_validate(
                {**msg.body, "assignment_id": msg.assignment_id, "user_id": msg.user_id}
            )
        except ValidationError as exc:
            self.log.warning("bad_task", assignment_id=msg.assignment_id, error=str(exc))
            return None
        return self.handle_task(task)

    def handle_task(self, t: TaskSpec) -> asyncio.Task:
        handler = TaskHandler(t)
        job = asyncio.create_task(self._run_handler(handler))
        self.handlers.add(job)
        job.add_done_callback(self.handlers.discard)
        return job

    async def run_handler(self, handler: TaskHandler) -> ResultEnvelope:
        task = handler.task
        try:
            stream = open_stream(task.onboard.signal, self.catalog, task_seed(self.config.seed, task))
        except (UnknownSignal, OSError, ValueError) as exc:
            return ResultEnvelope.failure(task.assignment_id, task.client_id, task.iteration, str(exc))
        try:
            await collect_samples(handler, stream, time_scale=self.config.time_scale,
                                  cap=self.config.collect_cap)
        except PartialCollection as exc:
            return ResultEnvelope.failure(task.assignment_id, task.client_id, task.iteration, str(exc))
        return await asyncio.to_thread(onboard_compute, handler, self.store, self.sandbox)

    async def _run_handler(self, handler: TaskHandler) -> None:
        task = handler.task
        log = self.log.bind(assignment_id=task.assignment_id, iteration=task.iteration)
        log.debug("task_started", signal=task.onboard.signal,
                  computation=task.onboard.computation)
        try:
            envelope = await self.run_handler(handler)
        except Exception as exc:
            log.exception("task_crashed")
            envelope = ResultEnvelope.failure(
                task.assignment_id, task.client_id, task.iteration, f"client error: {exc}"
            )
        handler.state = "reporting"
        try:
            await self.send(envelope.to_message(task.user_id))
            log.debug("task_reported", signature=envelope.signature, error=envelope.error)
        except (ConnectionError, OSError):
            log.warning("report_failed")
        finally:
            handler.discard()

    async def stop(self) -> None:
        self._stopping = True
        for job in list(self.handlers):
            job.cancel()
        await asyncio.gather(*self.handlers, return_exceptions=True)
        if self._writer is not None:
            self._writer.close()


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="fleetswap-client", description=__doc__)
    parser.add_argument("--client-id")
    parser.add_argument("--model")
    parser.add_argument("--bridge", help="host:port of the bridge")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--timeout", type=float, help="custom code execution timeout")
    parser.add_argument("--time-scale", type=float)
    parser.add_argument("--store-dir")
    parser.add_argument("--catalog", help="JSON signal catalog file")
    parser.add_argument("--collect-cap", type=float)
    parser.add_argument("--log-level")
    parser.add_argument("--json-logs", action="store_true", default=None)
    config = ClientConfig.load(**vars(parser.parse_args(argv)))
    configure_logging(config.log_level, config.json_logs)
    try:
        asyncio.run(ClientNode(config).run())
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
