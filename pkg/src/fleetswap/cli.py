"""Analyst command line: validate, deploy, submit, watch and fetch results.

Exit codes: 0 success, 1 rejected by a validator or the bridge, 2 I/O or
parse failure.
"""

import argparse
import asyncio
import json
import sys
from collections.abc import AsyncIterator
from pathlib import Path
from typing import Any, TextIO

import httpx
from pydantic import ValidationError

from fleetswap import UNASSIGNED
from fleetswap.codeswap import TARGETS, signature, validate_custom
from fleetswap.config import SandboxConfig, split_address
from fleetswap.errors import ProtocolError
from fleetswap.logs import configure_logging
from fleetswap.spec import AssignmentSpec, ClientSelector, validate_assignment
from fleetswap.wire import Message, encode_source, read_message, write_message

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_IO = 2


class AnalystSession:
    """One framed-protocol connection to the bridge, acting for ``user_id``."""

    def __init__(self, bridge: str, user_id: str):
        self.address = split_address(bridge)
        self.user_id = user_id
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None

    async def __aenter__(self) -> "AnalystSession":
        self._reader, self._writer = await asyncio.open_connection(*self.address)
        return self

    async def __aexit__(self, *exc_info) -> None:
        self._writer.close()
        try:
            await self._writer.wait_closed()
        except ConnectionError:
            pass

    async def request(self, kind: str, body: dict[str, Any],
                      assignment_id: str = UNASSIGNED) -> Message:
        await write_message(
            self._writer,
            Message(kind=kind, assignment_id=assignment_id, user_id=self.user_id, body=body),
        )
        reply = await read_message(self._reader)
        if reply is None:
            raise ConnectionError("bridge closed the connection")
        return reply

    async def deploy(self, target: str, source: str, clients: Any = "all") -> Message:
        body = {"mode": f"deploy_{target}", "custom_code": encode_source(source)}
        if target == "onboard":
            body["clients"] = clients
        return await self.request("deploy_code", body)

    async def submit(self, spec: dict[str, Any]) -> Message:
        return await self.request("assignment", {"spec": spec})

    async def watch(self, assignment_id: str) -> AsyncIterator[Message]:
        await write_message(
            self._writer,
            Message(kind="status", assignment_id=assignment_id, user_id=self.user_id,
                    body={"event": "watch", "request": "watch"}),
        )
        while True:
            msg = await read_message(self._reader)
            if msg is None:
                return
            yield msg
            if msg.kind == "error" or msg.body.get("event") in ("finished", "failed"):
                return


def load_document(path: Path) -> Any:
    """Read a JSON document; raises OSError or json.JSONDecodeError."""
    return json.loads(path.read_text(encoding="utf-8"))


def _read_spec(path: Path, out: TextIO) -> tuple[AssignmentSpec | None, int]:
    try:
        doc = load_document(path)
    except OSError as exc:
        print(f"cannot read {path}: {exc.strerror or exc}", file=out)
        return None, EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"parse error at offset {exc.pos}: {exc.msg}", file=out)
        return None, EXIT_IO
    result = validate_assignment(doc)
    if isinstance(result, list):
        for violation in result:
            print(f"violation: {violation}", file=out)
        return None, EXIT_REJECTED
    return result, EXIT_OK


def cmd_validate(spec_file: Path, out: TextIO = sys.stdout) -> int:
    spec, code = _read_spec(spec_file, out)
    if spec is not None:
        print("valid", file=out)
    return code


def format_event(body: dict[str, Any]) -> str:
    event = body.get("event")
    if event == "finished":
        return "finished"
    if event == "failed":
        return f"failed: {body.get('reason')}"
    prefix = f"iteration {body.get('iteration')}"
    if event == "iteration_result":
        line = (
            f"{prefix}: signature={body.get('signature')} "
            f"payload={json.dumps(body.get('payload'))} "
            f"kept={','.join(body.get('kept', []))}"
        )
        if body.get("discarded"):
            line += f" discarded={','.join(body['discarded'])}"
        return line
    return f"{prefix}: {body.get('reason')}"


async def cmd_deploy(
    target: str,
    code_file: Path,
    selector: str,
    *,
    bridge: str,
    user: str,
    sandbox: SandboxConfig | None = None,
    out: TextIO = sys.stdout,
) -> int:
    try:
        source = code_file.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        print(f"cannot read {code_file}: {exc}", file=out)
        return EXIT_IO
    if target == "onboard":
        try:
            ClientSelector.model_validate(selector)
        except ValidationError as exc:
            print(f"invalid client selector {selector!r}: {exc.errors()[0]['msg']}", file=out)
            return EXIT_REJECTED
    report = await asyncio.to_thread(validate_custom, source, target, config=sandbox)
    if not report.ok:
        print(f"rejected locally at stage {report.stage}: {report.describe()}", file=out)
        return EXIT_REJECTED
    try:
        async with AnalystSession(bridge, user) as session:
            reply = await session.deploy(target, source, selector)
    except (OSError, ProtocolError) as exc:
        print(f"bridge unreachable at {bridge}: {exc}", file=out)
        return EXIT_IO
    if reply.kind == "error":
        print(f"rejected: {reply.body['reason']}", file=out)
        return EXIT_REJECTED
    body = reply.body
    print(f"signature {body.get('signature', signature(source))}", file=out)
    for client_id in body.get("acks", []):
        print(f"ack {client_id}", file=out)
    for client_id, reason in sorted(body.get("failures", {}).items()):
        print(f"failed {client_id}: {reason}", file=out)
    print(f"{body.get('status', 'ok')} ({reply.assignment_id})", file=out)
    return EXIT_OK if body.get("status", "ok") == "ok" else EXIT_REJECTED


async def cmd_submit(spec_file: Path, *, bridge: str, user: str,
                     out: TextIO = sys.stdout) -> int:
    spec, code = _read_spec(spec_file, out)
    if spec is None:
        return code
    try:
        async with AnalystSession(bridge, user) as session:
            reply = await session.submit(load_document(spec_file))
    except (OSError, ProtocolError) as exc:
        print(f"bridge unreachable at {bridge}: {exc}", file=out)
        return EXIT_IO
    if reply.kind == "error":
        print(reply.body["reason"], file=out)
        return EXIT_REJECTED
    print(reply.assignment_id, file=out)
    return EXIT_OK


async def cmd_watch(assignment_id: str, *, bridge: str, user: str,
                    out: TextIO = sys.stdout) -> int:
    code = EXIT_OK
    try:
        async with AnalystSession(bridge, user) as session:
            async for msg in session.watch(assignment_id):
                if msg.kind == "error":
                    print(msg.body["reason"], file=out)
                    return EXIT_REJECTED
                print(format_event(msg.body), file=out, flush=True)
                if msg.body.get("event") == "failed":
                    code = EXIT_REJECTED
    except (OSError, ProtocolError) as exc:
        print(f"bridge unreachable at {bridge}: {exc}", file=out)
        return EXIT_IO
    return code


async def cmd_results(assignment_id: str, out_file: Path, *, api: str,
                      out: TextIO = sys.stdout) -> int:
    host, port = split_address(api)
    try:
        async with httpx.AsyncClient(base_url=f"http://{host}:{port}") as client:
            response = await client.get(f"/assignments/{assignment_id}/results")
    except httpx.HTTPError as exc:
        print(f"status API unreachable at {api}: {exc}", file=out)
        return EXIT_IO
    if response.status_code == 404:
        print(response.json()["detail"], file=out)
        return EXIT_REJECTED
    response.raise_for_status()
    events = [e for e in response.json() if e.get("iteration") is not None]
    try:
        with out_file.open("w", encoding="utf-8") as fh:
            for event in events:
                fh.write(json.dumps(event) + "\n")
    except OSError as exc:
        print(f"cannot write {out_file}: {exc}", file=out)
        return EXIT_IO
    print(f"{len(events)} iteration results written to {out_file}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fleetswap", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--bridge", default="127.0.0.1:7411", help="host:port of the bridge")
    parser.add_argument("--api", default="127.0.0.1:7412", help="host:port of the status API")
    parser.add_argument("--user", default="u1", help="user id to act as")
    parser.add_argument("--timeout", type=float, default=10.0,
                        help="execution timeout for local probe runs")
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="check an assignment file")
    validate.add_argument("spec_file", type=Path)

    deploy = sub.add_parser("deploy", help="validate and deploy a custom module")
    deploy.add_argument("target", choices=TARGETS)
    deploy.add_argument("code_file", type=Path)
    deploy.add_argument("--clients", default="all",
                        help="all | random:N | ids:c1,c2 | model:NAME")

    submit = sub.add_parser("submit", help="submit an assignment file")
    submit.add_argument("spec_file", type=Path)

    watch = sub.add_parser("watch", help="stream results of an assignment")
    watch.add_argument("assignment_id")

    results = sub.add_parser("results", help="write delivered results as JSON lines")
    results.add_argument("assignment_id")
    results.add_argument("out_file", type=Path)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    configure_logging("warning")
    match args.command:
        case "validate":
            code = cmd_validate(args.spec_file)
        case "deploy":
            code = asyncio.run(cmd_deploy(
                args.target, args.code_file, args.clients, bridge=args.bridge,
                user=args.user, sandbox=SandboxConfig(timeout=args.timeout)))
        case "submit":
            code = asyncio.run(cmd_submit(args.spec_file, bridge=args.bridge, user=args.user))
        case "watch":
            code = asyncio.run(cmd_watch(args.assignment_id, bridge=args.bridge, user=args.user))
        case "results":
            code = asyncio.run(cmd_results(args.assignment_id, args.out_file, api=args.api))
    sys.exit(code)


if __name__ == "__main__":
    main()
