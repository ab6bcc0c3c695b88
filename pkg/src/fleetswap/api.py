"""Read-only status API served from inside the bridge process."""

import os
from typing import Annotated

from fastapi import Depends, FastAPI, HTTPException, Request

from fleetswap import schemas
from fleetswap.bridge import Bridge


def get_bridge(request: Request) -> Bridge:
    return request.app.state.bridge


BridgeDep = Annotated[Bridge, Depends(get_bridge)]


def create_app(bridge: Bridge) -> FastAPI:
    app = FastAPI(title="fleetswap bridge")
    app.state.bridge = bridge

    @app.get("/health", response_model=schemas.Health)
    async def health(bridge: BridgeDep):
        return schemas.Health(
            node="bridge",
            pid=os.getpid(),
            started_at=bridge.started_at,
            port=bridge.port,
            active_handlers=len(bridge.handlers),
            registered_clients=len(bridge.registry),
        )

    @app.get("/clients", response_model=list[schemas.Client])
    async def get_clients(bridge: BridgeDep):
        return [
            schemas.Client(
                client_id=link.client_id,
                model=link.model,
                pid=link.pid,
                started_at=link.started_at,
            )
            for link in sorted(bridge.registry.values(), key=lambda link: link.client_id)
        ]

    @app.get("/assignments", response_model=list[schemas.Assignment])
    async def get_assignments(bridge: BridgeDep):
        return await bridge.results.fetch_assignments()

    @app.get("/assignments/{assignment_id}", response_model=schemas.Assignment)
    async def get_assignment(assignment_id: str, bridge: BridgeDep):
        record = await bridge.results.fetch_assignment(assignment_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown assignment {assignment_id}")
        return record

    @app.get("/assignments/{assignment_id}/results", response_model=list[schemas.IterationEvent])
    async def get_results(assignment_id: str, bridge: BridgeDep):
        if await bridge.results.fetch_assignment(assignment_id) is None:
            raise HTTPException(status_code=404, detail=f"unknown assignment {assignment_id}")
        return await bridge.results.fetch_events(assignment_id)

    return app
