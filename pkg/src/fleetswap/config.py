"""Node configuration.

Values are resolved from model defaults, then ``FLEETSWAP_<FIELD>`` environment
variables, then explicit overrides (command-line flags).
"""

import os
from pathlib import Path
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field

ENV_PREFIX = "FLEETSWAP_"


class _NodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    @classmethod
    def load(cls, **overrides: Any) -> Self:
        values: dict[str, Any] = {}
        for name in cls.model_fields:
            raw = os.environ.get(ENV_PREFIX + name.upper())
            if raw is not None:
                values[name] = raw
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(values)


class SandboxConfig(_NodeConfig):
    timeout: float = Field(10.0, gt=0, description="Per-execution limit in seconds")
    kill_grace: float = Field(0.05, ge=0, description="Slack allowed for the kill")
    memory_limit_mb: int | None = Field(
        None, gt=0, description="Address-space cap applied inside the sandbox"
    )


class BridgeConfig(_NodeConfig):
    host: str = "127.0.0.1"
    port: int = 7411
    api_port: int | None = Field(7412, description="Status API port, None disables")
    data_dir: Path = Path("./var/bridge")
    database_url: str | None = None
    client_timeout: float = Field(30.0, gt=0)
    deploy_timeout: float = Field(10.0, gt=0)
    execution_timeout: float = Field(10.0, gt=0)
    time_scale: float = Field(1000.0, ge=0)
    selection_seed: int = 0
    log_level: str = "info"
    json_logs: bool = False

    @property
    def store_dir(self) -> Path:
        return self.data_dir / "code"

    @property
    def audit_log(self) -> Path:
        return self.data_dir / "audit.jsonl"

    @property
    def resolved_database_url(self) -> str:
        if self.database_url:
            return self.database_url
        return f"sqlite+aiosqlite:///{self.data_dir / 'bridge.db'}"


class ClientConfig(_NodeConfig):
    client_id: str = Field(..., min_length=1)
    model: str = "type_a"
    bridge: str = "127.0.0.1:7411"
    seed: int = 0
    timeout: float = Field(10.0, gt=0, description="Custom code execution timeout")
    time_scale: float = Field(1000.0, ge=0)
    store_dir: Path | None = None
    catalog: Path | None = None
    collect_cap: float | None = Field(
        None, gt=0, description="Wall-clock cap on collection in seconds"
    )
    log_level: str = "info"
    json_logs: bool = False

    @property
    def resolved_store_dir(self) -> Path:
        return self.store_dir or Path("./var/clients") / self.client_id


def split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)
