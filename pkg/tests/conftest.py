import asyncio
import os
import sys
import time
from pathlib import Path

import pytest
import pytest_asyncio

# Add parent directory to path to import the package
sys.path.insert(0, os.path.join(str(Path(__file__).parent.parent), "src"))

from fleetswap.bridge import Bridge
from fleetswap.client import ClientNode
from fleetswap.codeswap import CodeStore
from fleetswap.config import BridgeConfig, ClientConfig, SandboxConfig

REPO = Path(__file__).parent.parent
CUSTOM_CODE = REPO / "custom_code"
ASSIGNMENTS = REPO / "assignments"


async def eventually(predicate, timeout: float = 10.0, interval: float = 0.01):
    """Poll ``predicate`` until it returns something truthy."""
    deadline = time.monotonic() + timeout
    while True:
        value = predicate()
        if value:
            return value
        if time.monotonic() > deadline:
            raise AssertionError(f"condition not met within {timeout}s")
        await asyncio.sleep(interval)


@pytest.fixture
def sandbox_config():
    return SandboxConfig(timeout=5.0)


@pytest.fixture
def store(tmp_path):
    return CodeStore(tmp_path / "code")


@pytest.fixture
def bridge_config(tmp_path):
    return BridgeConfig(
        port=0,
        api_port=None,
        data_dir=tmp_path / "bridge",
        database_url="sqlite+aiosqlite://",
        time_scale=0,
        client_timeout=10,
        deploy_timeout=10,
    )


@pytest_asyncio.fixture
async def bridge(bridge_config):
    node = Bridge(bridge_config)
    await node.start()
    yield node
    await node.stop()


@pytest_asyncio.fixture
async def fleet(bridge, tmp_path):
    """Factory starting in-process client nodes connected to ``bridge``."""
    nodes: list[ClientNode] = []
    runs: list[asyncio.Task] = []

    async def start(client_id: str, model: str = "type_a", seed: int = 0, **overrides):
        settings = {"time_scale": 0, "store_dir": tmp_path / "clients" / client_id, **overrides}
        config = ClientConfig(
            client_id=client_id,
            model=model,
            bridge=f"127.0.0.1:{bridge.port}",
            seed=seed,
            **settings,
        )
        node = ClientNode(config)
        nodes.append(node)
        runs.append(asyncio.create_task(node.run()))
        await eventually(lambda: client_id in bridge.registry)
        return node

    yield start
    for node in nodes:
        await node.stop()
    for run in runs:
        run.cancel()
    await asyncio.gather(*runs, return_exceptions=True)
