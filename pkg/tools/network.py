"""Parties, the classical message bus and protocol step plans.

Every protocol is compiled into a list of :class:`PlanStep` records, each
owned by one party and touching named sites (``B1.share``, ``B1.data``,
``A2.share`` ...).  :func:`order_steps` turns the declared steps into a total
order in which no party reads a measurement result before it was measured by
itself or sent to it.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from tools.config import ProtocolConfig, ProtocolKind
from tools.errors import (
    BadOutcome,
    ConfigInvalid,
    InboxViolation,
    RoundRegression,
    TranscriptMismatch,
    ZeroProbabilityBranch,
)
from tools.gates import BellOutcome

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Parties and messages
# ----------------------------------------------------------------------
class Role(Enum):
    SENDER = "sender"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class PartyId:
    """A sender (Bob ``i``) or receiver (Alice ``i``); ``lab`` is the physical owner."""

    role: Role
    index: int
    lab: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ConfigInvalid(f"party index must be at least 1, got {self.index}")

    @property
    def tag(self) -> str:
        return ("B" if self.role is Role.SENDER else "A") + str(self.index)

    @classmethod
    def from_tag(cls, tag: str) -> "PartyId":
        try:
            role = {"B": Role.SENDER, "A": Role.RECEIVER}[tag[0]]
            return cls(role, int(tag[1:]))
        except (KeyError, IndexError, ValueError):
            raise TranscriptMismatch(f"unknown party tag {tag!r}") from None

    def site(self, name: str) -> str:
        return f"{self.tag}.{name}"

    def __str__(self) -> str:
        return f"{self.tag}@{self.lab}" if self.lab else self.tag


def sender(i: int, lab: str = "") -> PartyId:
    return PartyId(Role.SENDER, i, lab)


def receiver(i: int, lab: str = "") -> PartyId:
    return PartyId(Role.RECEIVER, i, lab)


@dataclass(frozen=True)
class ProjectorOutcome:
    m: int

    def __str__(self) -> str:
        return str(self.m)


Payload = Union[BellOutcome, ProjectorOutcome]


def _payload_to_dict(payload: Payload) -> Dict[str, object]:
    if isinstance(payload, BellOutcome):
        return {"type": "bell", "m": payload.m, "n": payload.n}
    return {"type": "projector", "m": payload.m}


def _payload_from_dict(data: Mapping[str, object]) -> Payload:
    kind = data.get("type")
    if kind == "bell":
        return BellOutcome(int(data["m"]), int(data["n"]))
    if kind == "projector":
        return ProjectorOutcome(int(data["m"]))
    raise TranscriptMismatch(f"unknown payload type {kind!r}")


@dataclass(frozen=True)
class ClassicalMessage:
    sender: PartyId
    recipients: Tuple[PartyId, ...]
    round: int
    payload: Payload

    def __post_init__(self) -> None:
        object.__setattr__(self, "recipients", tuple(self.recipients))
        if not self.recipients:
            raise ConfigInvalid("a message needs at least one recipient")

    def to_dict(self) -> Dict[str, object]:
        return {
            "from": self.sender.tag,
            "to": [p.tag for p in self.recipients],
            "round": self.round,
            "payload": _payload_to_dict(self.payload),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "ClassicalMessage":
        try:
            return cls(
                sender=PartyId.from_tag(str(data["from"])),
                recipients=tuple(PartyId.from_tag(str(t)) for t in data["to"]),
                round=int(data["round"]),
                payload=_payload_from_dict(data["payload"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TranscriptMismatch(f"malformed message {data!r}: {exc}") from None


@dataclass(frozen=True)
class Transcript:
    """Append-only ordered message log."""

    messages: Tuple[ClassicalMessage, ...] = ()

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def to_list(self) -> List[Dict[str, object]]:
        return [msg.to_dict() for msg in self.messages]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(msg.to_dict(), sort_keys=True) + "\n" for msg in self.messages)

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        transcript = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TranscriptMismatch(f"line {lineno}: {exc}") from None
            transcript = deliver(transcript, ClassicalMessage.from_dict(data))
        return transcript


def deliver(transcript: Transcript, message: ClassicalMessage) -> Transcript:
    """Append ``message``; its round must be after the last recorded one."""
    if transcript.messages and message.round <= transcript.messages[-1].round:
        raise RoundRegression(
            f"round {message.round} delivered after round {transcript.messages[-1].round}"
        )
    return Transcript(transcript.messages + (message,))


def write_transcript(path: Path, transcript: Transcript) -> None:
    Path(path).write_text(transcript.to_jsonl(), encoding="utf-8")


def read_transcript(path: Path) -> Transcript:
    return Transcript.from_jsonl(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Inbox:
    """Which measurement results each party may read."""

    held: Mapping[PartyId, FrozenSet[str]] = field(default_factory=dict)

    def grant(self, parties: Iterable[PartyId], key: str) -> "Inbox":
        held = dict(self.held)
        for party in parties:
            held[party] = held.get(party, frozenset()) | {key}
        return Inbox(held)

    def check(self, party: PartyId, key: str) -> None:
        if key not in self.held.get(party, frozenset()):
            raise InboxViolation(f"{party} reads result {key!r} it has not received")


# ----------------------------------------------------------------------
# Step plans
# ----------------------------------------------------------------------
class StepKind(Enum):
    PREPARE = "prepare"                  # distribute the shared resource
    EXTEND = "extend"                    # XOR a fresh ancilla onto a held share
    ENCODE = "encode"
    SPREAD = "spread"
    SHARE_CORRECT = "share_correct"      # sender fixes its share for an earlier result
    BELL_MEASURE = "bell_measure"
    SEND = "send"
    HOLDER_CORRECT = "holder_correct"    # receiver fixes its share for a sender's result
    REALIGN = "realign"
    RECEIVER_SPREAD = "receiver_spread"
    PROJECT = "project"
    RELABEL = "relabel"
    PHASE_CORRECT = "phase_correct"
    OUTPUT = "output"


MEASUREMENTS = (StepKind.BELL_MEASURE, StepKind.PROJECT)


@dataclass(frozen=True)
class PlanStep:
    key: str
    party: Optional[PartyId]
    kind: StepKind
    sites: Tuple[str, ...] = ()
    needs: Tuple[str, ...] = ()
    recipients: Tuple[PartyId, ...] = ()
    after: Tuple[str, ...] = ()
    digit: int = 0
    factors: Tuple[int, ...] = ()
    carries_phase: bool = False

    @property
    def is_measurement(self) -> bool:
        return self.kind in MEASUREMENTS

    def outcome_count(self) -> int:
        d = math.prod(self.factors)
        if self.kind is StepKind.BELL_MEASURE:
            return d * d
        if self.kind is StepKind.PROJECT:
            return d // self.factors[self.digit - 1]
        return 1


@dataclass(frozen=True)
class Resources:
    shared_qudits: int
    qudit_dimension: int
    resource_parties: int
    entangled_pairs: int = 0
    xor_ancillas: int = 0

    def as_dict(self) -> Dict[str, int]:
        return {
            "shared_qudits": self.shared_qudits,
            "qudit_dimension": self.qudit_dimension,
            "resource_parties": self.resource_parties,
            "entangled_pairs": self.entangled_pairs,
            "xor_ancillas": self.xor_ancillas,
        }


@dataclass(frozen=True)
class Plan:
    config: ProtocolConfig
    senders: Tuple[PartyId, ...]
    receivers: Tuple[PartyId, ...]
    steps: Tuple[PlanStep, ...]
    resources: Resources

    def step(self, key: str) -> PlanStep:
        for s in self.steps:
            if s.key == key:
                return s
        raise ConfigInvalid(f"no step {key!r} in plan")

    @property
    def measurements(self) -> Tuple[PlanStep, ...]:
        return tuple(s for s in self.steps if s.is_measurement)

    @property
    def output_sites(self) -> Tuple[str, ...]:
        return tuple(p.site("share") for p in self.receivers)


def measurement_count(plan: Plan) -> int:
    return len(plan.measurements)


def branch_bound(plan: Plan) -> int:
    """Product of the outcome counts of every measurement in the plan."""
    return math.prod(s.outcome_count() for s in plan.measurements)


def _delivery_step(steps: Sequence[PlanStep], key: str, party: Optional[PartyId]) -> Optional[PlanStep]:
    for s in steps:
        if s.kind is StepKind.SEND and s.needs == (key,) and party in s.recipients:
            return s
    return None


def order_steps(steps: Sequence[PlanStep]) -> Tuple[PlanStep, ...]:
    """Dependency order of ``steps``; declaration order breaks ties.

    A step depends on its ``after`` keys, on the previous declared step that
    touched one of its sites, and, for every result it needs, on the
    measurement itself (own result) or on the send that delivers it.
    """
    by_key: Dict[str, int] = {}
    for position, s in enumerate(steps):
        if s.key in by_key:
            raise ConfigInvalid(f"duplicate step key {s.key!r}")
        by_key[s.key] = position

    deps: List[set] = [set() for _ in steps]
    last_touch: Dict[str, int] = {}
    for position, s in enumerate(steps):
        for key in s.after:
            if key not in by_key:
                raise ConfigInvalid(f"{s.key} waits for unknown step {key!r}")
            deps[position].add(by_key[key])
        for site in s.sites:
            if site in last_touch:
                deps[position].add(last_touch[site])
            last_touch[site] = position
        for key in s.needs:
            if key not in by_key:
                raise ConfigInvalid(f"{s.key} needs unknown result {key!r}")
            producer = steps[by_key[key]]
            if not producer.is_measurement:
                raise ConfigInvalid(f"{s.key} needs {key!r}, which is not a measurement")
            if producer.party == s.party:
                deps[position].add(by_key[key])
                continue
            send = _delivery_step(steps, key, s.party)
            if send is None:
                raise ConfigInvalid(f"{s.key} reads {key!r}, which is never sent to {s.party}")
            deps[position].add(by_key[send.key])

    waiting = [len(d) for d in deps]
    dependants: List[List[int]] = [[] for _ in steps]
    for position, d in enumerate(deps):
        for dep in d:
            dependants[dep].append(position)
    ready = [p for p, n in enumerate(waiting) if n == 0]
    heapq.heapify(ready)
    ordered: List[PlanStep] = []
    while ready:
        position = heapq.heappop(ready)
        ordered.append(steps[position])
        for nxt in dependants[position]:
            waiting[nxt] -= 1
            if waiting[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(ordered) != len(steps):
        stuck = sorted(s.key for p, s in enumerate(steps) if waiting[p] > 0)
        raise ConfigInvalid(f"cyclic step dependencies among {stuck}")
    return tuple(ordered)


# ----------------------------------------------------------------------
# Protocol step lists
# ----------------------------------------------------------------------
def _sender_steps(senders: Sequence[PartyId], factors: Tuple[int, ...],
                  later_recipients: Sequence[PartyId], fold: bool,
                  encode_joint: bool = False) -> List[PlanStep]:
    steps: List[PlanStep] = []
    n = len(senders)
    for i, party in enumerate(senders, start=1):
        data, share = party.site("data"), party.site("share")
        earlier = tuple(f"{p.tag}.measure" for p in senders[:i - 1])
        steps.append(PlanStep(f"{party.tag}.encode", party, StepKind.ENCODE, (data,),
                              digit=0 if encode_joint else i, factors=factors))
        if n > 1:
            steps.append(PlanStep(f"{party.tag}.spread", party, StepKind.SPREAD, (data,),
                                  needs=earlier if fold else (), digit=i, factors=factors))
        if not fold:
            for prior in earlier:
                steps.append(PlanStep(f"{party.tag}.correct.{prior.split('.')[0]}", party,
                                      StepKind.SHARE_CORRECT, (share,), needs=(prior,),
                                      digit=i, factors=factors))
        steps.append(PlanStep(f"{party.tag}.measure", party, StepKind.BELL_MEASURE, (data, share),
                              digit=i, factors=factors))
        steps.append(PlanStep(f"{party.tag}.send", party, StepKind.SEND,
                              needs=(f"{party.tag}.measure",),
                              recipients=tuple(later_recipients) + tuple(senders[i:])))
    return steps


def _holder_steps(receivers: Sequence[PartyId], senders: Sequence[PartyId],
                  sender_factors: Tuple[int, ...]) -> List[PlanStep]:
    steps: List[PlanStep] = []
    measures = tuple(f"{p.tag}.measure" for p in senders)
    for r, party in enumerate(receivers, start=1):
        share = party.site("share")
        for j, key in enumerate(measures, start=1):
            steps.append(PlanStep(f"{party.tag}.correct.{senders[j - 1].tag}", party,
                                  StepKind.HOLDER_CORRECT, (share,), needs=(key,), digit=j,
                                  factors=sender_factors, carries_phase=(r == 1)))
        if len(senders) > 1:
            steps.append(PlanStep(f"{party.tag}.realign", party, StepKind.REALIGN, (share,),
                                  needs=measures, factors=sender_factors))
    return steps


def _receiver_steps(receivers: Sequence[PartyId], factors: Tuple[int, ...]) -> List[PlanStep]:
    steps: List[PlanStep] = []
    split = len(receivers) > 1
    if split:
        for i, party in enumerate(receivers, start=1):
            share = party.site("share")
            steps.append(PlanStep(f"{party.tag}.spread", party, StepKind.RECEIVER_SPREAD, (share,),
                                  digit=i, factors=factors))
            steps.append(PlanStep(f"{party.tag}.project", party, StepKind.PROJECT, (share,),
                                  digit=i, factors=factors))
            steps.append(PlanStep(f"{party.tag}.send", party, StepKind.SEND,
                                  needs=(f"{party.tag}.project",),
                                  recipients=tuple(p for p in receivers if p != party)))
    for i, party in enumerate(receivers, start=1):
        share = party.site("share")
        if split:
            peers = tuple(f"{p.tag}.project" for p in receivers if p != party)
            steps.append(PlanStep(f"{party.tag}.relabel", party, StepKind.RELABEL, (share,),
                                  needs=(f"{party.tag}.project",), digit=i, factors=factors))
            steps.append(PlanStep(f"{party.tag}.phase", party, StepKind.PHASE_CORRECT, (share,),
                                  needs=peers, digit=i, factors=factors))
        steps.append(PlanStep(f"{party.tag}.output", party, StepKind.OUTPUT, (share,),
                              digit=i, factors=factors))
    return steps


def _prepare(holders: Sequence[PartyId], d: int) -> PlanStep:
    return PlanStep("prepare", None, StepKind.PREPARE, tuple(p.site("share") for p in holders),
                    factors=(d,))


def schedule(config: ProtocolConfig) -> Plan:
    """Ordered step plan for ``config``."""
    d = config.d
    fold = config.fold_corrections
    kind = config.kind
    if kind is ProtocolKind.MANY_TO_ONE:
        senders = tuple(sender(i, "Bob") for i in range(1, len(config.dims) + 1))
        receivers = (receiver(1, "Alice"),)
        steps = [_prepare(receivers + senders, d)]
        steps += _sender_steps(senders, config.dims, receivers, fold)
        steps += _holder_steps(receivers, senders, config.dims)
        steps += _receiver_steps(receivers, (d,))
        resources = Resources(len(senders) + 1, d, len(senders) + 1)
    elif kind is ProtocolKind.ONE_TO_MANY:
        senders = (sender(1, "Bob"),)
        receivers = tuple(receiver(i, "Alice") for i in range(1, len(config.dims) + 1))
        steps = [_prepare(senders + receivers, d)]
        steps += _sender_steps(senders, (d,), receivers, fold, encode_joint=True)
        steps += _holder_steps(receivers, senders, (d,))
        steps += _receiver_steps(receivers, config.dims)
        resources = Resources(len(receivers) + 1, d, len(receivers) + 1)
    elif kind is ProtocolKind.MANY_TO_MANY:
        senders = tuple(sender(i, "Bob") for i in range(1, len(config.sender_dims) + 1))
        receivers = tuple(receiver(i, "Alice") for i in range(1, len(config.receiver_dims) + 1))
        steps = [_prepare(senders + receivers, d)]
        steps += _sender_steps(senders, config.sender_dims, receivers, fold)
        steps += _holder_steps(receivers, senders, config.sender_dims)
        steps += _receiver_steps(receivers, config.receiver_dims)
        resources = Resources(len(senders) + len(receivers), d, len(senders) + len(receivers))
    elif kind is ProtocolKind.TWO_WAY:
        # Bob sends digit 1 and keeps the second receiver ancilla; Alice mirrors him.
        bob, alice = sender(1, "Bob"), sender(2, "Alice")
        alice_out, bob_out = receiver(1, "Alice"), receiver(2, "Bob")
        senders, receivers = (bob, alice), (alice_out, bob_out)
        steps = [
            _prepare((alice, bob), d),
            PlanStep("B1.extend", bob, StepKind.EXTEND, (bob.site("share"), bob_out.site("share")),
                     factors=(d,)),
            PlanStep("B2.extend", alice, StepKind.EXTEND, (alice.site("share"), alice_out.site("share")),
                     factors=(d,)),
        ]
        steps += _sender_steps(senders, config.dims, receivers, fold)
        steps += _holder_steps(receivers, senders, config.dims)
        steps += _receiver_steps(receivers, config.dims)
        resources = Resources(4, d, 4, entangled_pairs=1, xor_ancillas=2)
    else:  # pragma: no cover
        raise ConfigInvalid(f"unsupported protocol {kind}")

    ordered = order_steps(steps)
    logger.debug("%s plan: %s", kind.value, " ".join(s.key for s in ordered))
    return Plan(config, senders, receivers, ordered, resources)


def replay(transcript: Transcript, config: ProtocolConfig):
    """Re-run ``config`` with every measurement forced to the recorded outcomes.

    Returns the final receiver state of that branch.
    """
    from tools.protocols import run_branch

    plan = schedule(config)
    recorded: Dict[str, Union[BellOutcome, int]] = {}
    for message in transcript:
        if not 1 <= message.round <= len(plan.steps):
            raise TranscriptMismatch(f"round {message.round} is outside the plan")
        step = plan.steps[message.round - 1]
        if step.kind is not StepKind.SEND or step.party != message.sender:
            raise TranscriptMismatch(f"round {message.round} is not a send by {message.sender}")
        payload = message.payload
        recorded[step.needs[0]] = payload if isinstance(payload, BellOutcome) else payload.m
    missing = [s.key for s in plan.measurements if s.key not in recorded]
    if missing:
        raise TranscriptMismatch(f"transcript lacks the results of {missing}")
    outcomes = [recorded[s.key] for s in plan.measurements]
    try:
        report = run_branch(config, outcomes)
    except (ZeroProbabilityBranch, BadOutcome) as exc:
        raise TranscriptMismatch(f"recorded outcomes are impossible for this configuration: {exc}") from None
    return report.final_state
