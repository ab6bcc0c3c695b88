import sqlalchemy as sa
from sqla_fancy_core import TableBuilder

tb = TableBuilder()


class Assignment:
    id = tb.auto_id()
    assignment_id = tb(
        sa.Column("assignment_id", sa.String(128), nullable=False, unique=True)
    )
    user_id = tb.string("user_id")
    name = tb.string("name")
    status = tb.string("status")
    iteration = tb(sa.Column("iteration", sa.Integer, nullable=False, default=0))
    iterations = tb(sa.Column("iterations", sa.Integer, nullable=False))
    created_at = tb.created_at()
    updated_at = tb.updated_at()

    Table = tb("assignment")


class IterationEvent:
    id = tb.auto_id()
    assignment_id = tb(
        sa.Column(
            "assignment_id",
            sa.String(128),
            sa.ForeignKey(Assignment.assignment_id),
            nullable=False,
            index=True,
        )
    )
    seq = tb(sa.Column("seq", sa.Integer, nullable=False))
    iteration = tb(sa.Column("iteration", sa.Integer, nullable=True))
    event = tb(sa.Column("event", sa.String(64), nullable=False))
    signature = tb(sa.Column("signature", sa.String(64), nullable=True))
    body = tb(sa.Column("body", sa.JSON, nullable=False))
    created_at = tb.created_at()

    Table = tb("iteration_event")
