"""Protocol configuration types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple, Union

from tools.errors import BadDimension, ConfigInvalid, DimensionMismatch
from tools.gates import COMMITTED_CONVENTION, BellOutcome, PhaseConvention
from tools.qudit_core import StateVector

Outcome = Union[BellOutcome, int]


class ProtocolKind(Enum):
    MANY_TO_ONE = "many_to_one"
    ONE_TO_MANY = "one_to_many"
    MANY_TO_MANY = "many_to_many"
    TWO_WAY = "two_way"

    @classmethod
    def parse(cls, text: str) -> "ProtocolKind":
        try:
            return cls(text.strip().lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(k.cli_name for k in cls)
            raise ConfigInvalid(f"unknown protocol {text!r} (expected one of {names})") from None

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")


class ModeKind(Enum):
    SAMPLE = "sample"
    ENUMERATE = "enumerate"
    BRANCH = "branch"


@dataclass(frozen=True)
class ExecutionMode:
    kind: ModeKind = ModeKind.ENUMERATE
    outcomes: Tuple[Outcome, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "ExecutionMode":
        """``sample``, ``enumerate`` or ``branch=m:n,...,u`` (Bell ``m:n``, projector ``u``)."""
        text = text.strip()
        if text in ("sample", "enumerate"):
            return cls(ModeKind(text))
        if not text.startswith("branch="):
            raise ConfigInvalid(f"unknown mode {text!r}")
        body = text[len("branch="):].strip("()[] ")
        outcomes = []
        for token in filter(None, (t.strip() for t in body.split(","))):
            try:
                if ":" in token:
                    m, n = token.split(":")
                    outcomes.append(BellOutcome(int(m), int(n)))
                else:
                    outcomes.append(int(token))
            except ValueError:
                raise ConfigInvalid(f"bad branch entry {token!r}") from None
        if not outcomes:
            raise ConfigInvalid("branch mode needs at least one outcome")
        return cls(ModeKind.BRANCH, tuple(outcomes))

    @classmethod
    def sample(cls) -> "ExecutionMode":
        return cls(ModeKind.SAMPLE)

    @classmethod
    def enumerate(cls) -> "ExecutionMode":
        return cls(ModeKind.ENUMERATE)

    @classmethod
    def branch(cls, outcomes) -> "ExecutionMode":
        return cls(ModeKind.BRANCH, tuple(outcomes))

    def __str__(self) -> str:
        if self.kind is ModeKind.BRANCH:
            return "branch=" + ",".join(str(o) for o in self.outcomes)
        return self.kind.value


def parse_dims(text: str) -> Tuple[int, ...]:
    try:
        dims = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigInvalid(f"dims must be comma-separated integers, got {text!r}") from None
    if not dims:
        raise ConfigInvalid("empty dims")
    for d in dims:
        if d < 2:
            raise BadDimension(f"every dimension must be at least 2, got {d}")
    return dims


@dataclass(frozen=True)
class ProtocolConfig:
    """One protocol run.

    ``dims`` are the sender factors for ``many_to_one``, ``many_to_many`` and
    ``two_way`` (Bob's qudit first), and the receiver factors for
    ``one_to_many``.  ``inputs`` holds one single-site state per digit; with no
    inputs they are drawn from ``seed``.  ``one_to_many`` may instead take one
    ``joint_input`` over all receiver digits.
    """

    kind: ProtocolKind
    dims: Tuple[int, ...]
    recv_dims: Optional[Tuple[int, ...]] = None
    inputs: Optional[Tuple[StateVector, ...]] = None
    joint_input: Optional[StateVector] = None
    seed: int = 0
    mode: ExecutionMode = field(default_factory=ExecutionMode)
    fold_corrections: bool = False
    convention: PhaseConvention = COMMITTED_CONVENTION

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.recv_dims is not None:
            object.__setattr__(self, "recv_dims", tuple(int(d) for d in self.recv_dims))
        if self.inputs is not None:
            object.__setattr__(self, "inputs", tuple(self.inputs))
        self.validate()

    def validate(self) -> None:
        if not self.dims:
            raise ConfigInvalid("at least one digit is required")
        for d in self.dims + (self.recv_dims or ()):
            if d < 2:
                raise BadDimension(f"every dimension must be at least 2, got {d}")
        if self.kind is ProtocolKind.TWO_WAY and len(self.dims) != 2:
            raise ConfigInvalid("the two-way channel takes exactly two dims (Bob's, Alice's)")
        if self.recv_dims is not None:
            if self.kind is not ProtocolKind.MANY_TO_MANY:
                raise ConfigInvalid("receiver dims only apply to many_to_many")
            if math.prod(self.recv_dims) != self.d:
                raise ConfigInvalid(f"receiver dims {self.recv_dims} do not multiply to d={self.d}")
        if self.joint_input is not None:
            if self.kind is not ProtocolKind.ONE_TO_MANY:
                raise ConfigInvalid("a joint input only applies to one_to_many")
            if self.inputs is not None:
                raise ConfigInvalid("give either per-digit inputs or one joint input")
            if self.joint_input.dims not in (self.dims, (self.d,)):
                raise DimensionMismatch(f"joint input dims {self.joint_input.dims} for {self.dims}")
        if self.inputs is not None:
            if len(self.inputs) != len(self.dims):
                raise ConfigInvalid(f"{len(self.inputs)} inputs for {len(self.dims)} digits")
            for state, d in zip(self.inputs, self.dims):
                if state.dims != (d,):
                    raise DimensionMismatch(f"input of dims {state.dims} for a digit of {d} levels")
        if self.seed < 0:
            raise ConfigInvalid("seed must be non-negative")

    @property
    def d(self) -> int:
        return math.prod(self.dims)

    @property
    def sender_dims(self) -> Tuple[int, ...]:
        if self.kind is ProtocolKind.ONE_TO_MANY:
            return (self.d,)
        return self.dims

    @property
    def receiver_dims(self) -> Tuple[int, ...]:
        if self.kind is ProtocolKind.MANY_TO_ONE:
            return (self.d,)
        if self.kind is ProtocolKind.ONE_TO_MANY:
            return self.dims
        if self.kind is ProtocolKind.TWO_WAY:
            return self.dims
        return self.recv_dims or self.dims

    @property
    def num_senders(self) -> int:
        return len(self.sender_dims)

    @property
    def num_receivers(self) -> int:
        return len(self.receiver_dims)

    def with_mode(self, mode: ExecutionMode) -> "ProtocolConfig":
        return replace(self, mode=mode)
