"""Central server: assignment handlers, dispatch, majority filtering, deployment.

One listener serves analysts and clients; a client identifies itself with a
``register`` status message, every other connection is an analyst session.
Each accepted assignment gets its own handler task that runs the iteration
loop and terminates after delivering its final result.
"""

import argparse
import asyncio
import os
import zlib
from collections import Counter, defaultdict
from contextlib import AsyncExitStack
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import structlog
import uvicorn
from pydantic import ValidationError

from fleetswap import PROCESS_STARTED_AT, UNASSIGNED
from fleetswap.codeswap import (
    CodeStore,
    CustomModule,
    execute_custom,
    validate_custom,
)
from fleetswap.config import BridgeConfig, SandboxConfig
from fleetswap.db import ResultStore
from fleetswap.errors import (
    ExecutionError,
    FrameTooLarge,
    NotDeployed,
    ProtocolError,
    RejectedError,
    SelectionError,
)
from fleetswap.logs import AuditLog, configure_logging
from fleetswap.spec import (
    AssignmentSpec,
    ClientSelector,
    TaskSpec,
    select_clients,
    split_into_tasks,
    validate_assignment,
)
from fleetswap.wire import (
    Message,
    ResultEnvelope,
    decode_source,
    error_message,
    read_message,
    write_message,
)

logger = structlog.get_logger(__name__)

INCONSISTENT = "iteration discarded: inconsistent signatures"
TERMINAL_EVENTS = ("finished", "failed")


class ClientLink:
    """The bridge's side of one registered client connection."""

    def __init__(self, client_id: str, model: str, writer: asyncio.StreamWriter | None,
                 pid: int | None = None, started_at: float | None = None):
        self.client_id = client_id
        self.model = model
        self.pid = pid
        self.started_at = started_at
        self.writer = writer
        self._lock = asyncio.Lock()

    async def send(self, msg: Message) -> None:
        async with self._lock:
            await write_message(self.writer, msg)


@dataclass
class MajorityOutcome:
    winning_signature: str | None
    kept: list[ResultEnvelope] = field(default_factory=list)
    discarded: list[ResultEnvelope] = field(default_factory=list)


def majority_filter(
    results: list[ResultEnvelope], deployed_signature: str | None = None
) -> MajorityOutcome:
    """Keep the envelopes carrying the plurality signature, discard the rest.

    A tie is won by ``deployed_signature`` when it is among the tied
    signatures; otherwise there is no winner and everything is discarded.
    """
    counts = Counter(e.signature for e in results)
    if not counts:
        return MajorityOutcome(None)
    top = max(counts.values())
    tied = sorted(sig for sig, n in counts.items() if n == top)
    if len(tied) == 1:
        winner = tied[0]
    elif deployed_signature in tied:
        winner = deployed_signature
    else:
        winner = None
    return MajorityOutcome(
        winning_signature=winner,
        kept=[e for e in results if e.signature == winner],
        discarded=[e for e in results if e.signature != winner],
    )


def _flatten(kept: list[ResultEnvelope]) -> list[float]:
    flat: list[float] = []
    for envelope in sorted(kept, key=lambda e: e.client_id):
        if isinstance(envelope.payload, list):
            flat.extend(envelope.payload)
        else:
            flat.append(envelope.payload)
    return flat


def offboard_compute(
    computation: str,
    inputs: list[ResultEnvelope],
    user_id: str,
    store: CodeStore,
    parameters: dict[str, Any] | None = None,
    sandbox: SandboxConfig | None = None,
) -> Any:
    ordered = sorted(inputs, key=lambda e: e.client_id)
    match computation:
        case "collect":
            return [[e.client_id, e.payload] for e in ordered]
        case "average":
            if not ordered:
                raise ValueError("average needs at least one input")
            payloads = [e.payload for e in ordered]
            if all(isinstance(p, (int, float)) for p in payloads):
                return float(np.mean(payloads))
            lengths = {len(p) if isinstance(p, list) else None for p in payloads}
            if len(lengths) != 1 or None in lengths:
                raise ValueError("average over mixed-length vectors")
            return np.mean(np.array(payloads, dtype=float), axis=0).tolist()
        case "custom":
            module = store.load_module(user_id, "offboard")
            params = {**(parameters or {}), "n_inputs": len(ordered)}
            return execute_custom(module, _flatten(ordered), params, config=sandbox).value
    raise ValueError(f"unknown off-board computation {computation}")


class AssignmentHandler:
    def __init__(self, bridge: "Bridge", assignment_id: str, spec: AssignmentSpec,
                 clients: list[str]):
        self.bridge = bridge
        self.assignment_id = assignment_id
        self.spec = spec
        self.clients = clients
        self.iteration = 0
        self.pending: set[str] = set()
        self.carry_model: list[float] | None = spec.onboard.parameters.get("initial_model")
        self.status = "running"
        self.seq = 0
        self.task: asyncio.Task | None = None
        self._inbox: dict[str, ResultEnvelope] = {}
        self._all_in = asyncio.Event()
        self.log = logger.bind(assignment_id=assignment_id, user_id=spec.user_id)

    @property
    def connected(self) -> bool:
        return self.spec.onboard.result_flow == "connected"

    def start(self) -> asyncio.Task:
        self.task = asyncio.create_task(self.run(), name=f"assignment-{self.assignment_id}")
        return self.task

    def run_iteration(self) -> list[TaskSpec]:
        if self.status != "running" or self.pending:
            raise RuntimeError("previous iteration still pending")
        hint = None
        if self.spec.onboard.computation == "custom":
            hint = self.bridge.store.signature_of(self.spec.user_id, "onboard")
        tasks = split_into_tasks(
            self.spec,
            self.assignment_id,
            self.clients,
            self.iteration,
            self.carry_model if self.connected else None,
            signature_hint=hint,
        )
        self.pending = set(self.clients)
        self._inbox = {}
        self._all_in.clear()
        return tasks

    def deliver(self, envelope: ResultEnvelope) -> None:
        audit = self.bridge.audit
        if envelope.iteration != self.iteration or envelope.client_id not in self.pending:
            audit.record("late_result", assignment_id=self.assignment_id,
                         iteration=envelope.iteration, signature=envelope.signature,
                         client_id=envelope.client_id)
            return
        self._inbox[envelope.client_id] = envelope
        self.pending.discard(envelope.client_id)
        audit.record(
            "error_received" if envelope.error else "result_received",
            assignment_id=self.assignment_id,
            iteration=envelope.iteration,
            signature=envelope.signature or None,
            client_id=envelope.client_id,
        )
        if not self.pending:
            self._all_in.set()

    def _failure(self, client_id: str, reason: str) -> ResultEnvelope:
        return ResultEnvelope.failure(self.assignment_id, client_id, self.iteration, reason)

    async def _dispatch(self, tasks: list[TaskSpec]) -> None:
        for task in tasks:
            link = self.bridge.registry.get(task.client_id)
            if link is None:
                self.deliver(self._failure(task.client_id, "client unavailable"))
                continue
            msg = Message(
                kind="task",
                assignment_id=self.assignment_id,
                user_id=self.spec.user_id,
                body=task.model_dump(mode="json", exclude={"assignment_id", "user_id"}),
            )
            try:
                await link.send(msg)
            except (ConnectionError, OSError) as exc:
                self.deliver(self._failure(task.client_id, f"dispatch failed: {exc}"))
                continue
            self.bridge.audit.record("dispatched", assignment_id=self.assignment_id,
                                     iteration=self.iteration, signature=task.signature_hint,
                                     client_id=task.client_id)

    def iteration_timeout(self) -> float:
        config = self.bridge.config
        nominal = self.spec.onboard.nominal_duration
        scaled = nominal / config.time_scale if config.time_scale > 0 else 0.0
        return scaled + config.client_timeout

    async def _await_results(self) -> None:
        if not self.pending:
            return
        timeout = self.iteration_timeout()
        try:
            await asyncio.wait_for(self._all_in.wait(), timeout)
        except TimeoutError:
            for client_id in sorted(self.pending):
                self.deliver(self._failure(client_id, f"no result within {timeout:.1f}s"))

    async def run(self) -> None:
        self.log.info("handler_started", clients=self.clients,
                      iterations=self.spec.offboard.iterations)
        try:
            while self.iteration < self.spec.offboard.iterations:
                await self._dispatch(self.run_iteration())
                await self._await_results()
                await self._aggregate()
            self.log.info("handler_finished")
        except asyncio.CancelledError:
            self.status = "failed"
            raise
        except Exception as exc:
            self.log.exception("handler_crashed")
            self.status = "failed"
            await self.publish({"event": "failed", "reason": str(exc)})
        finally:
            self.bridge.handler_done(self)

    async def _aggregate(self) -> None:
        envelopes = [self._inbox[cid] for cid in sorted(self._inbox)]
        ok = [e for e in envelopes if e.error is None]
        errors = {e.client_id: e.error for e in envelopes if e.error is not None}
        deployed = None
        if self.spec.onboard.computation == "custom":
            deployed = self.bridge.store.signature_of(self.spec.user_id, "onboard")
        outcome = majority_filter(ok, deployed)
        for envelope in outcome.kept:
            self.bridge.audit.record("kept", assignment_id=self.assignment_id,
                                     iteration=self.iteration, signature=envelope.signature,
                                     client_id=envelope.client_id)
        for envelope in outcome.discarded:
            self.bridge.audit.record("discarded", assignment_id=self.assignment_id,
                                     iteration=self.iteration, signature=envelope.signature,
                                     client_id=envelope.client_id)

        if outcome.winning_signature is None:
            if ok:
                await self.complete_iteration(outcome, None, event="iteration_discarded",
                                              errors=errors, reason=INCONSISTENT)
            else:
                await self.complete_iteration(outcome, None, event="iteration_failed",
                                              errors=errors,
                                              reason="no client produced a result")
            return
        try:
            result = await asyncio.to_thread(
                offboard_compute,
                self.spec.offboard.computation,
                outcome.kept,
                self.spec.user_id,
                self.bridge.store,
                self.spec.onboard.parameters,
                self.bridge.sandbox,
            )
        except (ExecutionError, NotDeployed, ValueError) as exc:
            self.log.warning("offboard_failed", iteration=self.iteration, error=str(exc))
            await self.complete_iteration(outcome, None, event="iteration_failed",
                                          errors=errors, reason=f"off-board: {exc}")
            return
        await self.complete_iteration(outcome, result, errors=errors)

    async def complete_iteration(
        self,
        outcome: MajorityOutcome,
        offboard_result: Any,
        *,
        event: str = "iteration_result",
        errors: dict[str, str] | None = None,
        reason: str | None = None,
    ) -> "AssignmentHandler":
        await self.publish(
            {
                "event": event,
                "iteration": self.iteration,
                "signature": outcome.winning_signature,
                "payload": offboard_result,
                "kept": [e.client_id for e in outcome.kept],
                "discarded": [e.client_id for e in outcome.discarded],
                "errors": errors or {},
                "reason": reason,
            }
        )
        if event == "iteration_result" and self.connected and offboard_result is not None:
            self.carry_model = (
                list(offboard_result) if isinstance(offboard_result, list) else [offboard_result]
            )
        self.log.info("iteration_completed", iteration=self.iteration, event=event,
                      signature=outcome.winning_signature)
        self.iteration += 1
        if self.iteration >= self.spec.offboard.iterations:
            self.status = "finished"
            await self.publish({"event": "finished"})
        else:
            await self.bridge.results.update_assignment(
                self.assignment_id, status=self.status, iteration=self.iteration
            )
        return self

    async def publish(self, body: dict[str, Any]) -> None:
        self.seq += 1
        body = {"seq": self.seq, "assignment_id": self.assignment_id, **body}
        await self.bridge.results.record_event(
            self.assignment_id, self.seq, body["event"], body,
            iteration=body.get("iteration"), signature=body.get("signature"),
        )
        if body["event"] in TERMINAL_EVENTS:
            await self.bridge.results.update_assignment(
                self.assignment_id, status=self.status, iteration=self.iteration
            )
        self.bridge.audit.record(body["event"], assignment_id=self.assignment_id,
                                 iteration=body.get("iteration"),
                                 signature=body.get("signature"))
        self.bridge.notify(self.assignment_id, body)


class Bridge:
    def __init__(self, config: BridgeConfig):
        self.config = config
        self.sandbox = SandboxConfig(timeout=config.execution_timeout)
        self.store = CodeStore(config.store_dir)
        self.results = ResultStore(config.resolved_database_url)
        self.registry: dict[str, ClientLink] = {}
        self.handlers: dict[str, AssignmentHandler] = {}
        self.audit: AuditLog | None = None
        self.port: int | None = None
        self.started_at = PROCESS_STARTED_AT
        self._counters: defaultdict[str, int] = defaultdict(int)
        self._deploy_counters: defaultdict[str, int] = defaultdict(int)
        self._watchers: defaultdict[str, list[asyncio.Queue]] = defaultdict(list)
        self._deploy_waiters: dict[tuple[str, str], asyncio.Future] = {}
        self._server: asyncio.Server | None = None
        self._api: uvicorn.Server | None = None
        self._api_task: asyncio.Task | None = None
        self._stack = AsyncExitStack()

    # lifecycle

    async def start(self) -> None:
        self.config.data_dir.mkdir(parents=True, exist_ok=True)
        self.audit = AuditLog(self.config.audit_log)
        await self._stack.enter_async_context(self.results.lifespan())
        self._server = await asyncio.start_server(
            self._serve_connection, self.config.host, self.config.port
        )
        self.port = self._server.sockets[0].getsockname()[1]
        if self.config.api_port is not None:
            from fleetswap.api import create_app

            api_config = uvicorn.Config(
                create_app(self),
                host=self.config.host,
                port=self.config.api_port,
                log_level="warning",
                lifespan="off",
            )
            self._api = uvicorn.Server(api_config)
            self._api_task = asyncio.create_task(self._api.serve())
        logger.info("bridge_started", host=self.config.host, port=self.port,
                    api_port=self.config.api_port, pid=os.getpid())

    async def stop(self) -> None:
        for handler in list(self.handlers.values()):
            if handler.task:
                handler.task.cancel()
        await asyncio.gather(
            *(h.task for h in list(self.handlers.values()) if h.task), return_exceptions=True
        )
        if self._server:
            self._server.close()
            for link in list(self.registry.values()):
                if link.writer:
                    link.writer.close()
            await self._server.wait_closed()
        if self._api:
            self._api.should_exit = True
            await self._api_task
        await self._stack.aclose()
        if self.audit:
            self.audit.close()
        logger.info("bridge_stopped")

    async def serve_forever(self) -> None:
        await self.start()
        try:
            await self._server.serve_forever()
        finally:
            await self.stop()

    # connections

    async def _serve_connection(self, reader: asyncio.StreamReader,
                                writer: asyncio.StreamWriter) -> None:
        link: ClientLink | None = None
        peer = writer.get_extra_info("peername")
        try:
            while True:
                try:
                    msg = await read_message(reader)
                except FrameTooLarge as exc:
                    logger.warning("frame_rejected", peer=peer, error=str(exc))
                    break
                except ProtocolError as exc:
                    logger.warning("protocol_error", peer=peer, error=str(exc))
                    await write_message(writer, error_message(
                        str(exc), assignment_id=UNASSIGNED, user_id="bridge", field=exc.field))
                    continue
                if msg is None:
                    break
                if msg.kind == "status" and msg.body.get("event") == "register":
                    link = await self._register(msg, writer)
                elif link is not None:
                    self._on_client_message(link, msg)
                else:
                    await self._on_analyst_message(msg, writer)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        except Exception:
            logger.exception("connection_failed", peer=peer)
        finally:
            if link is not None and self.registry.get(link.client_id) is link:
                del self.registry[link.client_id]
                logger.info("client_unregistered", client_id=link.client_id)
            writer.close()

    async def _register(self, msg: Message, writer: asyncio.StreamWriter) -> ClientLink:
        body = msg.body
        link = ClientLink(
            client_id=body.get("client_id") or msg.user_id,
            model=body.get("model", ""),
            writer=writer,
            pid=body.get("pid"),
            started_at=body.get("started_at"),
        )
        self.registry[link.client_id] = link
        logger.info("client_registered", client_id=link.client_id, model=link.model,
                    pid=link.pid)
        await link.send(Message(kind="ack", assignment_id=UNASSIGNED, user_id="bridge",
                                body={"event": "registered", "client_id": link.client_id}))
        return link

    def _on_client_message(self, link: ClientLink, msg: Message) -> None:
        match msg.kind:
            case "result":
                try:
                    envelope = ResultEnvelope.from_message(msg)
                except (ValidationError, TypeError) as exc:
                    logger.warning("bad_result", client_id=link.client_id, error=str(exc))
                    return
                handler = self.handlers.get(envelope.assignment_id)
                if handler is None:
                    self.audit.record("orphan_result", assignment_id=envelope.assignment_id,
                                      iteration=envelope.iteration,
                                      signature=envelope.signature,
                                      client_id=envelope.client_id)
                    return
                handler.deliver(envelope)
            case "ack" | "error":
                key = (msg.assignment_id, msg.body.get("client_id", link.client_id))
                waiter = self._deploy_waiters.get(key)
                if waiter is not None and not waiter.done():
                    waiter.set_result(msg)
            case _:
                logger.debug("client_message_ignored", client_id=link.client_id, kind=msg.kind)

    async def _on_analyst_message(self, msg: Message, writer: asyncio.StreamWriter) -> None:
        match msg.kind:
            case "assignment":
                try:
                    assignment_id = await self.handle_assignment(msg.body["spec"], msg.user_id)
                except RejectedError as exc:
                    reply = error_message(str(exc), assignment_id=msg.assignment_id,
                                          user_id=msg.user_id)
                else:
                    reply = Message(kind="ack", assignment_id=assignment_id,
                                    user_id=msg.user_id,
                                    body={"assignment_id": assignment_id})
                await write_message(writer, reply)
            case "deploy_code":
                await write_message(writer, await self.handle_deploy(msg))
            case "status" if msg.body.get("request") == "watch":
                await self.watch(msg.assignment_id, msg.user_id, writer)
            case _:
                await write_message(writer, error_message(
                    f"unsupported request kind {msg.kind}",
                    assignment_id=msg.assignment_id, user_id=msg.user_id))

    # assignments

    def registry_pairs(self) -> list[tuple[str, str]]:
        return [(cid, link.model) for cid, link in self.registry.items()]

    async def handle_assignment(self, doc: Any, user_id: str) -> str:
        spec = validate_assignment(doc, user_id=user_id)
        if isinstance(spec, list):
            raise RejectedError("invalid assignment: " + "; ".join(str(v) for v in spec))
        for target, used in spec.uses_custom.items():
            try:
                deployed = self.store.signature_of(user_id, target)
            except ValueError as exc:
                raise RejectedError(str(exc)) from None
            if used and deployed is None:
                raise RejectedError(str(NotDeployed(user_id, target)))
        number = self._counters[user_id] + 1
        assignment_id = f"{user_id}-{number}"
        seed = zlib.crc32(assignment_id.encode()) ^ self.config.selection_seed
        try:
            clients = select_clients(spec.clients, self.registry_pairs(), seed)
        except SelectionError as exc:
            raise RejectedError(str(exc)) from None
        if not clients:
            raise RejectedError("client selection resolved to no clients")
        self._counters[user_id] = number
        await self.results.record_assignment(
            assignment_id, user_id, spec.name, spec.offboard.iterations
        )
        handler = AssignmentHandler(self, assignment_id, spec, clients)
        self.handlers[assignment_id] = handler
        self.audit.record("assignment_accepted", assignment_id=assignment_id)
        handler.start()
        return assignment_id

    def handler_done(self, handler: AssignmentHandler) -> None:
        self.handlers.pop(handler.assignment_id, None)

    # deployment

    async def handle_deploy(self, msg: Message) -> Message:
        user_id = msg.user_id
        mode = msg.body["mode"]
        target = "onboard" if mode == "deploy_onboard" else "offboard"
        source = decode_source(msg.body["custom_code"])
        report = await asyncio.to_thread(validate_custom, source, target, config=self.sandbox)
        if not report.ok:
            logger.warning("deploy_rejected", user_id=user_id, target=target,
                           stage=report.stage)
            return error_message(f"validation failed: {report.describe()}",
                                 assignment_id=msg.assignment_id, user_id=user_id,
                                 stage=report.stage)
        module = CustomModule.build(source, user_id, target)
        try:
            self.store.store_module(module)
        except ValueError as exc:
            return error_message(str(exc), assignment_id=msg.assignment_id, user_id=user_id)
        self._deploy_counters[user_id] += 1
        deploy_id = f"{user_id}-deploy-{self._deploy_counters[user_id]}"
        self.audit.record("deployed", assignment_id=deploy_id, signature=module.signature,
                          client_id=None, target=target)
        body = {"event": "deployed", "target": target, "signature": module.signature,
                "status": "ok", "acks": [], "failures": {}}
        if target == "onboard":
            try:
                selector = ClientSelector.model_validate(msg.body.get("clients", "all"))
            except ValidationError as exc:
                return error_message(f"invalid client selector: {exc.errors()[0]['msg']}",
                                     assignment_id=msg.assignment_id, user_id=user_id)
            acks, failures = await self._forward_onboard(deploy_id, msg, selector)
            status = "ok" if not failures else ("partial" if acks else "failed")
            body.update(acks=acks, failures=failures, status=status)
        logger.info("deploy_completed", user_id=user_id, target=target,
                    signature=module.signature, status=body["status"])
        return Message(kind="status", assignment_id=deploy_id, user_id=user_id, body=body)

    async def _forward_onboard(
        self, deploy_id: str, msg: Message, selector: ClientSelector
    ) -> tuple[list[str], dict[str, str]]:
        failures: dict[str, str] = {}
        if selector.variant == "ids":
            targets = sorted(selector.ids)
        else:
            try:
                targets = select_clients(selector, self.registry_pairs(),
                                         zlib.crc32(deploy_id.encode()))
            except SelectionError as exc:
                return [], {"*": str(exc)}
        loop = asyncio.get_running_loop()
        waiters: dict[str, asyncio.Future] = {}
        for client_id in targets:
            link = self.registry.get(client_id)
            if link is None:
                failures[client_id] = "unreachable"
                continue
            waiter = loop.create_future()
            self._deploy_waiters[(deploy_id, client_id)] = waiter
            waiters[client_id] = waiter
            forward = Message(
                kind="deploy_code",
                assignment_id=deploy_id,
                user_id=msg.user_id,
                body={"mode": msg.body["mode"], "custom_code": msg.body["custom_code"],
                      "client_id": client_id},
            )
            try:
                await link.send(forward)
            except (ConnectionError, OSError):
                failures[client_id] = "unreachable"
                waiter.cancel()
        pending = [w for w in waiters.values() if not w.done()]
        if pending:
            await asyncio.wait(pending, timeout=self.config.deploy_timeout)
        acks = []
        for client_id, waiter in waiters.items():
            self._deploy_waiters.pop((deploy_id, client_id), None)
            if client_id in failures:
                continue
            if not waiter.done():
                failures[client_id] = f"no ack within {self.config.deploy_timeout}s"
                waiter.cancel()
            elif waiter.result().kind == "ack":
                acks.append(client_id)
            else:
                failures[client_id] = waiter.result().body.get("reason", "error")
        return sorted(acks), failures

    # watchers

    def notify(self, assignment_id: str, body: dict[str, Any]) -> None:
        for queue in self._watchers.get(assignment_id, []):
            queue.put_nowait(body)

    async def known(self, assignment_id: str) -> dict[str, Any] | None:
        return await self.results.fetch_assignment(assignment_id)

    async def watch(self, assignment_id: str, user_id: str,
                    writer: asyncio.StreamWriter) -> None:
        record = await self.known(assignment_id)
        if record is None:
            await write_message(writer, error_message(
                f"unknown assignment {assignment_id}",
                assignment_id=assignment_id or UNASSIGNED, user_id=user_id))
            return
        queue: asyncio.Queue = asyncio.Queue()
        self._watchers[assignment_id].append(queue)
        try:
            last = 0
            for body in await self.results.fetch_events(assignment_id):
                await self._send_event(writer, record["user_id"], body)
                last = body["seq"]
                if body["event"] in TERMINAL_EVENTS:
                    return
            while True:
                body = await queue.get()
                if body["seq"] <= last:
                    continue
                await self._send_event(writer, record["user_id"], body)
                if body["event"] in TERMINAL_EVENTS:
                    return
        finally:
            self._watchers[assignment_id].remove(queue)
            if not self._watchers[assignment_id]:
                del self._watchers[assignment_id]

    async def _send_event(self, writer: asyncio.StreamWriter, user_id: str,
                          body: dict[str, Any]) -> None:
        await write_message(writer, Message(kind="status", assignment_id=body["assignment_id"],
                                            user_id=user_id, body=body))


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="fleetswap-bridge", description=__doc__)
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    parser.add_argument("--api-port", type=int)
    parser.add_argument("--no-api", action="store_true", help="do not serve the status API")
    parser.add_argument("--data-dir")
    parser.add_argument("--database-url")
    parser.add_argument("--client-timeout", type=float)
    parser.add_argument("--deploy-timeout", type=float)
    parser.add_argument("--timeout", type=float, dest="execution_timeout")
    parser.add_argument("--time-scale", type=float)
    parser.add_argument("--selection-seed", type=int)
    parser.add_argument("--log-level")
    parser.add_argument("--json-logs", action="store_true", default=None)
    args = vars(parser.parse_args(argv))
    no_api = args.pop("no_api")
    config = BridgeConfig.load(**args)
    if no_api:
        config = config.model_copy(update={"api_port": None})
    configure_logging(config.log_level, config.json_logs)
    try:
        asyncio.run(Bridge(config).serve_forever())
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
