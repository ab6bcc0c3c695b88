"""Deterministic signal sources standing in for the vehicle bus.

Random values come from xorshift64* (Vigna, 2016): the seed is expanded with
one splitmix64 step, each draw applies the shifts 12, 25, 27 and multiplies by
0x2545F4914F6CDD1D modulo 2**64. A uniform double is the top 53 bits of the
output scaled by 2**-53. Gaussian samples use the cosine branch of Box-Muller
with u1 = 1 - uniform() and u2 = uniform(), two draws per sample.
"""

import json
import math
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, RootModel

from fleetswap.errors import EndOfStream, UnknownSignal

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def gaussian(self) -> float:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class Gaussian(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["gaussian"] = "gaussian"
    mean: float = 0.0
    stddev: float = Field(1.0, ge=0)


class Ramp(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["ramp"] = "ramp"
    start: float = 0.0
    step: float = 1.0


class Replay(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    kind: Literal["replay"] = "replay"
    file: Path


GeneratorSpec = Annotated[Gaussian | Ramp | Replay, Field(discriminator="kind")]


class SignalCatalog(RootModel[dict[str, GeneratorSpec]]):
    """Signal name -> generator, loaded from a JSON catalog file."""

    @classmethod
    def from_file(cls, path: Path) -> "SignalCatalog":
        catalog = cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
        base = path.parent
        return cls(
            {
                name: spec.model_copy(update={"file": base / spec.file})
                if isinstance(spec, Replay) and not spec.file.is_absolute()
                else spec
                for name, spec in catalog.root.items()
            }
        )

    def __contains__(self, name: str) -> bool:
        return name in self.root


DEFAULT_CATALOG = SignalCatalog(
    {
        "speed": Gaussian(mean=80.0, stddev=15.0),
        "steering_angle": Gaussian(mean=0.0, stddev=5.0),
        "odometer": Ramp(start=0.0, step=1.0),
        "idle": Ramp(start=0.0, step=0.0),
    }
)


def read_replay(path: Path) -> list[float]:
    values = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            value = float(line)
            if not math.isfinite(value):
                raise ValueError(f"{path}: non-finite replay value {line.strip()!r}")
            values.append(value)
    return values


class SignalStream:
    """Single-cursor stream; open one per consumer."""

    def __init__(self, name: str, spec: Gaussian | Ramp | Replay, seed: int):
        self.name = name
        self.spec = spec
        self.seed = seed
        self.cursor = 0
        self._rng = XorShift64Star(seed)
        self._replay = read_replay(spec.file) if isinstance(spec, Replay) else None

    def next_sample(self) -> float:
        match self.spec:
            case Gaussian(mean=mean, stddev=stddev):
                value = mean + stddev * self._rng.gaussian()
            case Ramp(start=start, step=step):
                value = start + step * self.cursor
            case Replay():
                if self.cursor >= len(self._replay):
                    raise EndOfStream(f"{self.name}: replay exhausted after {self.cursor} samples")
                value = self._replay[self.cursor]
        self.cursor += 1
        return value

    def __iter__(self):
        while True:
            try:
                yield self.next_sample()
            except EndOfStream:
                return


def open_stream(name: str, config: SignalCatalog, seed: int) -> SignalStream:
    if name not in config:
        raise UnknownSignal(name)
    return SignalStream(name, config.root[name], seed)


def next_sample(s: SignalStream) -> float:
    return s.next_sample()
