class FleetswapError(Exception):
    """Base class of every error raised by fleetswap."""


class ProtocolError(FleetswapError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class FrameTooLarge(FleetswapError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"frame of {size} bytes exceeds limit of {limit} bytes")
        self.size = size
        self.limit = limit


class FilterSyntaxError(FleetswapError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifier(FilterSyntaxError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name}", offset)
        self.name = name


class SelectionError(FleetswapError):
    pass


class NotDeployed(FleetswapError):
    def __init__(self, user_id: str, target: str):
        where = target.replace("board", "-board")
        super().__init__(f"no {where} custom code deployed for user {user_id}")
        self.user_id = user_id
        self.target = target


class ExecutionError(FleetswapError):
    """Custom code failed to produce a conforming result."""


class ExecutionTimeout(ExecutionError):
    def __init__(self, timeout: float, elapsed: float):
        super().__init__(f"timeout exceeded after {elapsed:.3f}s (limit {timeout}s)")
        self.timeout = timeout
        self.elapsed = elapsed


class ScriptFault(ExecutionError):
    pass


class ReturnTypeViolation(ExecutionError):
    pass


class UnknownSignal(FleetswapError):
    def __init__(self, name: str):
        super().__init__(f"unknown signal {name}")
        self.name = name


class EndOfStream(FleetswapError):
    pass


class PartialCollection(FleetswapError):
    def __init__(self, accepted: int, wanted: int):
        super().__init__(
            f"collection cap reached with {accepted} of {wanted} samples accepted"
        )
        self.accepted = accepted
        self.wanted = wanted


class RejectedError(FleetswapError):
    """The bridge refused a request; the message is echoed to the analyst."""


class ScenarioFailure(FleetswapError):
    def __init__(self, check: str, diff: str):
        super().__init__(f"{check} failed: {diff}")
        self.check = check
        self.diff = diff
