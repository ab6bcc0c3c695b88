"""Bridge result store: assignments and their delivered iteration events."""

from contextlib import asynccontextmanager
from typing import Any

import sqlalchemy as sa
import structlog
from sqla_fancy_core import fancy
from sqlalchemy.ext.asyncio import create_async_engine
from sqlalchemy.pool import StaticPool

from fleetswap.tables import Assignment, IterationEvent, tb

logger = structlog.get_logger(__name__)


class ResultStore:
    def __init__(self, url: str):
        options: dict[str, Any] = {}
        if url.endswith("://") or ":memory:" in url:
            options["poolclass"] = StaticPool
        self.engine = create_async_engine(url, **options)
        self.fancy_engine = fancy(self.engine)

    async def create_all_tables(self):
        async with self.engine.begin() as conn:
            await conn.run_sync(tb.metadata.create_all)

    async def drop_all_tables(self):
        async with self.engine.begin() as conn:
            await conn.run_sync(tb.metadata.drop_all)

    @asynccontextmanager
    async def lifespan(self):
        # No recovery across restarts: every bridge run starts from empty tables.
        await self.drop_all_tables()
        await self.create_all_tables()
        logger.info("result_store_ready", url=str(self.engine.url))
        try:
            yield self
        finally:
            await self.engine.dispose()

    async def record_assignment(
        self, assignment_id: str, user_id: str, name: str, iterations: int
    ) -> None:
        qry = sa.insert(Assignment.Table).values(
            {
                Assignment.assignment_id: assignment_id,
                Assignment.user_id: user_id,
                Assignment.name: name,
                Assignment.status: "running",
                Assignment.iteration: 0,
                Assignment.iterations: iterations,
            }
        )
        await self.fancy_engine.atx(qry)

    async def update_assignment(
        self, assignment_id: str, *, status: str, iteration: int
    ) -> None:
        qry = (
            sa.update(Assignment.Table)
            .where(Assignment.assignment_id == assignment_id)
            .values({Assignment.status: status, Assignment.iteration: iteration})
        )
        await self.fancy_engine.atx(qry)

    async def record_event(
        self,
        assignment_id: str,
        seq: int,
        event: str,
        body: dict[str, Any],
        iteration: int | None = None,
        signature: str | None = None,
    ) -> None:
        qry = sa.insert(IterationEvent.Table).values(
            {
                IterationEvent.assignment_id: assignment_id,
                IterationEvent.seq: seq,
                IterationEvent.event: event,
                IterationEvent.iteration: iteration,
                IterationEvent.signature: signature,
                IterationEvent.body: body,
            }
        )
        await self.fancy_engine.atx(qry)

    async def fetch_events(self, assignment_id: str) -> list[dict[str, Any]]:
        qry = (
            sa.select(IterationEvent.seq, IterationEvent.body)
            .where(IterationEvent.assignment_id == assignment_id)
            .order_by(IterationEvent.seq)
        )
        res = await self.fancy_engine.nax(qry)
        return [row.body for row in res]

    async def fetch_assignment(self, assignment_id: str) -> dict[str, Any] | None:
        qry = sa.select(
            Assignment.assignment_id,
            Assignment.user_id,
            Assignment.name,
            Assignment.status,
            Assignment.iteration,
            Assignment.iterations,
        ).where(Assignment.assignment_id == assignment_id)
        res = await self.fancy_engine.nax(qry)
        row = res.mappings().first()
        return dict(row) if row else None

    async def fetch_assignments(self) -> list[dict[str, Any]]:
        qry = sa.select(
            Assignment.assignment_id,
            Assignment.user_id,
            Assignment.name,
            Assignment.status,
            Assignment.iteration,
            Assignment.iterations,
        ).order_by(Assignment.id)
        res = await self.fancy_engine.nax(qry)
        return [dict(row) for row in res.mappings().all()]
