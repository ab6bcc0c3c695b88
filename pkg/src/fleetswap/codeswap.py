"""Active-code replacement engine.

Custom modules are validated in stages, signed with the md5 of their source,
stored one per (user, target) slot with atomic replacement, re-read from the
store on every load, and executed in a fresh, externally killable process.
There is no rollback: storing a module discards the previous one.
"""

import ast
import hashlib
import multiprocessing
import os
import random
import re
import secrets
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Literal

import structlog
from pydantic import BaseModel, ConfigDict, Field

from fleetswap import sandbox
from fleetswap.config import SandboxConfig
from fleetswap.errors import (
    ExecutionTimeout,
    NotDeployed,
    ReturnTypeViolation,
    ScriptFault,
)

logger = structlog.get_logger(__name__)

Target = Literal["onboard", "offboard"]
TARGETS: tuple[str, ...] = ("onboard", "offboard")
Stage = Literal["syntax", "entry_point", "capability", "probe_run", "return_type"]
STAGES: tuple[str, ...] = ("syntax", "entry_point", "capability", "probe_run", "return_type")

PROBE_FIXED = [0.0, 1.0, 2.0]
PROBE_RANDOM_COUNT = 8
PROBE_MAX_LENGTH = 64
PROBE_PARAMS: dict[str, dict[str, Any]] = {
    "onboard": {"input_model": None},
    "offboard": {"n_inputs": 1},
}

_SLOT_NAME = re.compile(r"^[A-Za-z0-9_-]+$")


def signature(source: str) -> str:
    return hashlib.md5(source.encode("utf-8"), usedforsecurity=False).hexdigest()


class CustomModule(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: str
    user_id: str
    target: Target
    signature: str
    deployed_at: float = 0.0

    @classmethod
    def build(cls, source: str, user_id: str, target: str, deployed_at: float = 0.0):
        return cls(
            source=source,
            user_id=user_id,
            target=target,
            signature=signature(source),
            deployed_at=deployed_at,
        )


class ValidationReport(BaseModel):
    ok: bool
    # stage that failed; None when every stage passed
    stage: Stage | None = None
    violations: list[tuple[Stage, str]] = Field(default_factory=list)

    def describe(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(f"{stage}: {message}" for stage, message in self.violations)


class CustomResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float | list[float]
    signature: str
    elapsed: float


def _mp_context():
    if "forkserver" in multiprocessing.get_all_start_methods():
        ctx = multiprocessing.get_context("forkserver")
        ctx.set_forkserver_preload(["fleetswap.sandbox"])
        return ctx
    return multiprocessing.get_context("spawn")


_CONTEXT = _mp_context()


def check_return(value: Any) -> float | list[float]:
    try:
        return sandbox.conform(value)
    except sandbox.ReturnTypeError as exc:
        raise ReturnTypeViolation(str(exc)) from None


def run_isolated(
    source: str,
    inputs: list[list[float]],
    params: dict[str, Any],
    config: SandboxConfig,
) -> tuple[list[float | list[float]], float]:
    """Run ``custom_code`` over ``inputs`` in one fresh process.

    Returns the conforming values and the elapsed seconds. The process is
    killed when no reply arrived within ``config.timeout``.
    """
    reader, writer = _CONTEXT.Pipe(duplex=False)
    proc = _CONTEXT.Process(
        target=sandbox.child_main,
        args=(writer, source, inputs, params, config.memory_limit_mb),
        daemon=True,
    )
    proc.start()
    started = time.monotonic()
    writer.close()
    try:
        if not reader.poll(config.timeout):
            proc.kill()
            proc.join()
            raise ExecutionTimeout(config.timeout, time.monotonic() - started)
        try:
            status, payload, index = reader.recv()
        except EOFError:
            proc.join(config.kill_grace + 1)
            raise ScriptFault(f"sandbox exited with code {proc.exitcode}") from None
    finally:
        reader.close()
        if proc.is_alive():
            proc.join(config.kill_grace)
        if proc.is_alive():
            proc.kill()
            proc.join()
    elapsed = time.monotonic() - started
    where = f" on input {index}" if index is not None else ""
    if status == "fault":
        raise ScriptFault(f"{payload}{where}")
    if status == "return_type":
        raise ReturnTypeViolation(f"{payload}{where}")
    # Re-checked host side: the child is not trusted to have applied the rule.
    return [check_return(value) for value in payload], elapsed


def probe_inputs(seed: int) -> list[list[float]]:
    rng = random.Random(seed)
    probes = [list(PROBE_FIXED)]
    for _ in range(PROBE_RANDOM_COUNT):
        length = rng.randint(1, PROBE_MAX_LENGTH)
        probes.append([rng.uniform(-1000.0, 1000.0) for _ in range(length)])
    return probes


def validate_custom(
    source: str,
    target: str,
    *,
    seed: int | None = None,
    config: SandboxConfig | None = None,
) -> ValidationReport:
    """Check a module stage by stage; the first failing stage ends the check."""
    config = config or SandboxConfig()

    def fail(stage: str, message: str) -> ValidationReport:
        return ValidationReport(ok=False, stage=stage, violations=[(stage, message)])

    if target not in TARGETS:
        return fail("syntax", f"unknown target {target}")
    try:
        tree = ast.parse(source, filename="<custom_code>")
    except SyntaxError as exc:
        return fail("syntax", f"line {exc.lineno}: {exc.msg}")

    problem = sandbox.entry_point_problem(tree)
    if problem:
        return fail("entry_point", problem)

    problems = sandbox.scan_capabilities(tree)
    if problems:
        return ValidationReport(
            ok=False, stage="capability", violations=[("capability", p) for p in problems]
        )

    seed = secrets.randbits(32) if seed is None else seed
    try:
        run_isolated(source, probe_inputs(seed), PROBE_PARAMS[target], config)
    except ReturnTypeViolation as exc:
        return fail("return_type", str(exc))
    except (ScriptFault, ExecutionTimeout) as exc:
        return fail("probe_run", str(exc))
    return ValidationReport(ok=True)


def execute_custom(
    m: CustomModule,
    input: list[float],
    params: dict[str, Any] | None = None,
    timeout: float | None = None,
    config: SandboxConfig | None = None,
) -> CustomResult:
    config = config or SandboxConfig()
    if timeout is not None:
        config = config.model_copy(update={"timeout": timeout})
    values, elapsed = run_isolated(m.source, [list(input)], dict(params or {}), config)
    logger.debug(
        "custom_executed", user_id=m.user_id, target=m.target, signature=m.signature,
        elapsed=round(elapsed, 4),
    )
    return CustomResult(value=values[0], signature=m.signature, elapsed=elapsed)


class CodeStore:
    """One custom module per (user_id, target), kept as files in ``directory``.

    Files are named ``<user_id>.<target>.script`` and replaced with
    write-to-temp-then-rename, so readers in any process see a whole module.
    """

    SUFFIX = ".script"

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def path_for(self, user_id: str, target: str) -> Path:
        if not _SLOT_NAME.match(user_id):
            raise ValueError(f"user id {user_id!r} is not usable as a store key")
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
        return self.directory / f"{user_id}.{target}{self.SUFFIX}"

    def store_module(self, m: CustomModule) -> "CodeStore":
        path = self.path_for(m.user_id, m.target)
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{path.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                    fh.write(m.source)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        logger.info("module_stored", user_id=m.user_id, target=m.target, signature=m.signature)
        return self

    def load_module(self, user_id: str, target: str) -> CustomModule:
        path = self.path_for(user_id, target)
        try:
            with path.open("r", encoding="utf-8", newline="") as fh:
                source = fh.read()
                deployed_at = os.fstat(fh.fileno()).st_mtime
        except FileNotFoundError:
            raise NotDeployed(user_id, target) from None
        return CustomModule.build(source, user_id, target, deployed_at)

    def signature_of(self, user_id: str, target: str) -> str | None:
        try:
            return self.load_module(user_id, target).signature
        except NotDeployed:
            return None
