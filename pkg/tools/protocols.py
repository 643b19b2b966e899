"""Protocol execution: registers, the branching engine, runners and reports.

The engine walks a :class:`~tools.network.Plan` step by step.  Measurements
fork the walk: ``enumerate`` follows every nonzero outcome in outcome order,
``sample`` follows one outcome drawn from the measurement stream, ``branch``
follows the forced outcomes.

Enumeration carries every branch at once as one row of an amplitude array
and stores the results column-wise in a :class:`BranchTable`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from tools.config import ExecutionMode, ModeKind, ProtocolConfig, ProtocolKind
from tools.errors import (
    BadOutcome,
    BranchExplosion,
    ConfigInvalid,
    DimensionMismatch,
    NotNormalizable,
    ZeroProbabilityBranch,
)
from tools.gates import (
    BellOutcome,
    PhaseConvention,
    alice_correction,
    alice_realignment,
    bell_basis,
    bell_branches,
    bob_correction,
    embed_input,
    receiver_phase,
    receiver_projectors,
    receiver_relabel,
    receiver_spread_op,
    resource_state,
    spread_op,
    xor_gate,
)
from tools.network import (
    ClassicalMessage,
    Inbox,
    Plan,
    PlanStep,
    ProjectorOutcome,
    StepKind,
    Transcript,
    branch_bound,
    deliver,
    measurement_count,
    schedule,
)
from tools.qudit_core import (
    NORM_TOL,
    ZERO_PROBABILITY,
    LocalOperator,
    SiteSpec,
    StateVector,
    apply_on_batch,
    apply_on_sites,
    basis_state,
    enumerate_outcomes,
    fidelity,
    merge_batch,
    narrow_site,
    permute_sites,
    random_state,
    site_overlap,
    split_batch,
    tensor,
)

logger = logging.getLogger(__name__)

FIDELITY_TOL = 1e-9
PROBABILITY_TOL = 1e-9
MAX_BRANCHES = 1_000_000

Outcome = Union[BellOutcome, int]


# ----------------------------------------------------------------------
# Register of named sites
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Register:
    names: Tuple[str, ...] = ()
    state: Optional[StateVector] = None

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigInvalid(f"site {name!r} is not in the register {self.names}") from None

    def indices(self, names: Sequence[str]) -> List[int]:
        return [self.index(n) for n in names]

    def add(self, name: str, local: StateVector) -> "Register":
        if name in self.names:
            raise ConfigInvalid(f"site {name!r} already exists")
        state = local if self.state is None else tensor(self.state, local)
        return Register(self.names + (name,), state)

    def apply(self, names: Sequence[str], op: LocalOperator, dense: bool = False) -> "Register":
        return replace(self, state=apply_on_sites(self.state, self.indices(names), op, dense=dense))

    def without(self, names: Sequence[str], state: StateVector) -> "Register":
        drop = set(names)
        return Register(tuple(n for n in self.names if n not in drop), state)


class BranchBatch:
    """Every live branch as one row of ``amps``; all rows share the site layout.

    ``codes`` holds, per measurement key, each row's outcome code: the Bell
    index ``m*d + n`` or the projector outcome ``u``.
    """

    def __init__(self) -> None:
        self.names: Tuple[str, ...] = ()
        self.spec: Optional[SiteSpec] = None
        self.amps = np.ones((1, 1), dtype=np.complex128)
        self.probabilities = np.ones(1)
        self.codes: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return int(self.probabilities.shape[0])

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigInvalid(f"site {name!r} is not in the register {self.names}") from None

    def indices(self, names: Sequence[str]) -> List[int]:
        return [self.index(n) for n in names]

    def start(self, names: Sequence[str], local: StateVector) -> None:
        self.names = tuple(names)
        self.spec = local.spec
        self.amps = np.repeat(local.amps[None, :], len(self), axis=0)

    def add(self, name: str, local: StateVector) -> None:
        if self.spec is None:
            self.start((name,), local)
            return
        if name in self.names:
            raise ConfigInvalid(f"site {name!r} already exists")
        self.amps = (local.amps[None, :, None] * self.amps[:, None, :]).reshape(len(self), -1)
        self.spec = self.spec.concat(local.spec)
        self.names += (name,)

    def apply(self, names: Sequence[str], op: LocalOperator, rows: Optional[np.ndarray] = None) -> None:
        sites = self.indices(names)
        if rows is None:
            self.amps = apply_on_batch(self.amps, self.spec, sites, op)
        else:
            self.amps[rows] = apply_on_batch(self.amps[rows], self.spec, sites, op)

    def _fork(self, key: str, weights: np.ndarray, states: np.ndarray) -> None:
        count, outcomes = weights.shape
        keep = (weights >= ZERO_PROBABILITY).reshape(-1)
        kept = weights.reshape(-1)[keep]
        self.amps = states.reshape(count * outcomes, -1)[keep] / np.sqrt(kept)[:, None]
        self.probabilities = np.repeat(self.probabilities, outcomes)[keep] * kept
        self.codes = {k: np.repeat(v, outcomes)[keep] for k, v in self.codes.items()}
        self.codes[key] = np.tile(np.arange(outcomes), count)[keep]

    def bell_fork(self, key: str, names: Sequence[str], d: int) -> None:
        """Bell-measure ``names`` in every row and drop the measured pair."""
        sites = self.indices(names)
        rest = self.spec.without(sites)
        if rest is None:
            raise DimensionMismatch("Bell branches need at least one unmeasured site")
        rows = np.matmul(bell_basis(d).conj().T, split_batch(self.amps, self.spec, sites))
        weights = np.einsum("bor,bor->bo", rows.conj(), rows).real
        self._fork(key, weights, rows)
        self.spec = rest
        self.names = tuple(n for n in self.names if n not in names)

    def project_fork(self, key: str, name: str, projectors: Sequence[LocalOperator]) -> None:
        sites = [self.index(name)]
        blocks = split_batch(self.amps, self.spec, sites)
        projected = np.stack([p.act_batch(blocks) for p in projectors], axis=1)
        weights = np.einsum("buir,buir->bu", projected.conj(), projected).real
        self._fork(key, weights, projected)
        local, rest = blocks.shape[1:]
        self.amps = merge_batch(self.amps.reshape(-1, local, rest), self.spec, sites)

    def narrow(self, name: str, dim: int) -> None:
        site = self.index(name)
        spec = self.spec
        if dim > spec.dims[site]:
            raise DimensionMismatch(f"cannot widen site {site} from {spec.dims[site]} to {dim}")
        psi = self.amps.reshape((len(self),) + tuple(reversed(spec.dims)))
        kept = np.take(psi, range(dim), axis=len(spec.dims) - site).reshape(len(self), -1)
        leaked = 1.0 - np.einsum("bi,bi->b", kept.conj(), kept).real
        if leaked.size and float(np.max(leaked)) > NORM_TOL:
            raise NotNormalizable(f"site {site} has weight {float(np.max(leaked)):.3e} above level {dim - 1}")
        self.amps = kept
        self.spec = spec.replace(site, dim)

    def ordered(self, names: Sequence[str]) -> Tuple[np.ndarray, SiteSpec]:
        """Rows with the sites reordered to ``names``."""
        if set(self.names) != set(names):
            raise ConfigInvalid(f"plan leaves sites {self.names}, expected {tuple(names)}")
        order = self.indices(names)
        k = len(order)
        psi = self.amps.reshape((len(self),) + tuple(reversed(self.spec.dims)))
        psi = np.transpose(psi, [0] + [k - order[k - 1 - a] for a in range(k)])
        return psi.reshape(len(self), -1), SiteSpec(tuple(self.spec.dims[s] for s in order))


# ----------------------------------------------------------------------
# Inputs and expected outputs
# ----------------------------------------------------------------------
def expected_encoded_state(inputs: Sequence[StateVector], spec: SiteSpec) -> StateVector:
    """Product of the inputs with input ``i`` on digit ``i`` of ``spec``."""
    if len(inputs) != len(spec.dims):
        raise DimensionMismatch(f"{len(inputs)} inputs for {len(spec.dims)} digits")
    for state, d in zip(inputs, spec.dims):
        if state.dims != (d,):
            raise DimensionMismatch(f"input of dims {state.dims} for a digit of {d} levels")
    product = inputs[0]
    for state in inputs[1:]:
        product = tensor(product, state)
    return StateVector(spec, product.amps)


@dataclass(frozen=True)
class Inputs:
    """Resolved protocol inputs: per-digit states (when known) and their joint encoding."""

    digits: Optional[Tuple[StateVector, ...]]
    joint: StateVector


def seed_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (input, measurement) generators spawned from ``seed``."""
    input_seq, measure_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(input_seq)), np.random.Generator(np.random.PCG64(measure_seq))


def resolve_inputs(config: ProtocolConfig, rng: np.random.Generator) -> Inputs:
    spec = SiteSpec(config.dims)
    if config.joint_input is not None:
        return Inputs(None, config.joint_input.reshaped(spec))
    digits = config.inputs
    if digits is None:
        digits = tuple(random_state(SiteSpec((d,)), rng) for d in config.dims)
    return Inputs(tuple(digits), expected_encoded_state(digits, spec))


def expected_output(config: ProtocolConfig, inputs: Inputs) -> StateVector:
    """Joint state the receivers should hold, sites in receiver order."""
    return inputs.joint.reshaped(SiteSpec(config.receiver_dims))


def receiver_targets(config: ProtocolConfig, inputs: Inputs) -> List[Tuple[int, StateVector]]:
    """``(output site, state)`` pairs checked one receiver at a time.

    Empty when the expected output is entangled across receivers.
    """
    if config.kind is ProtocolKind.MANY_TO_ONE:
        return [(0, inputs.joint.flattened())]
    if inputs.digits is None or config.receiver_dims != config.dims:
        return []
    return list(enumerate(inputs.digits))


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BranchRecord:
    outcome: Tuple[Outcome, ...]
    probability: float
    fidelity: float
    receiver_fidelities: Tuple[float, ...] = ()
    final_state: Optional[StateVector] = field(default=None, compare=False)


@dataclass(frozen=True, eq=False)
class BranchTable:
    """Branch results column-wise, rows in outcome order.

    ``codes[b, j]`` is branch ``b``'s outcome of the plan's ``j``-th
    measurement; ``bell_dims[j]`` is that measurement's d, or 0 for a
    projector measurement.
    """

    codes: np.ndarray
    probabilities: np.ndarray
    fidelities: np.ndarray
    receiver_fidelities: np.ndarray
    bell_dims: Tuple[int, ...]
    final_states: Optional[Tuple[StateVector, ...]] = None

    def __len__(self) -> int:
        return int(self.probabilities.shape[0])

    def outcome(self, b: int) -> Tuple[Outcome, ...]:
        return tuple(
            BellOutcome.from_index(d, code) if d else int(code)
            for d, code in zip(self.bell_dims, self.codes[b])
        )

    def record(self, b: int) -> BranchRecord:
        return BranchRecord(
            outcome=self.outcome(b),
            probability=float(self.probabilities[b]),
            fidelity=float(self.fidelities[b]),
            receiver_fidelities=tuple(float(v) for v in self.receiver_fidelities[b]),
            final_state=None if self.final_states is None else self.final_states[b],
        )

    @classmethod
    def from_records(cls, records: Sequence[BranchRecord], bell_dims: Sequence[int]) -> "BranchTable":
        count = len(records)
        width = len(records[0].receiver_fidelities) if records else 0
        codes = [[o.index(d) if d else int(o) for d, o in zip(bell_dims, r.outcome)] for r in records]
        finals = tuple(r.final_state for r in records)
        return cls(
            codes=np.array(codes, dtype=np.int64).reshape(count, len(bell_dims)),
            probabilities=np.array([r.probability for r in records], dtype=np.float64),
            fidelities=np.array([r.fidelity for r in records], dtype=np.float64),
            receiver_fidelities=np.array([r.receiver_fidelities for r in records],
                                         dtype=np.float64).reshape(count, width),
            bell_dims=tuple(bell_dims),
            final_states=None if any(s is None for s in finals) else finals,
        )


def bell_dims(plan: Plan) -> Tuple[int, ...]:
    return tuple(
        math.prod(s.factors) if s.kind is StepKind.BELL_MEASURE else 0 for s in plan.measurements
    )


@dataclass(frozen=True)
class ProtocolReport:
    config: ProtocolConfig
    plan: Plan
    inputs: Inputs
    expected_state: StateVector
    table: BranchTable
    transcript: Transcript
    final_state: Optional[StateVector] = None

    @cached_property
    def branches(self) -> Tuple[BranchRecord, ...]:
        return tuple(self.table.record(b) for b in range(len(self.table)))

    @property
    def branch_count(self) -> int:
        return len(self.table)

    @property
    def probability_sum(self) -> float:
        return float(np.sum(self.table.probabilities))

    @property
    def min_fidelity(self) -> float:
        return float(np.min(self.table.fidelities))

    @property
    def resources(self) -> Dict[str, int]:
        return self.plan.resources.as_dict()

    @property
    def succeeded(self) -> bool:
        return self.min_fidelity >= 1.0 - FIDELITY_TOL


def _state_to_dict(state: StateVector) -> Dict[str, object]:
    return {
        "dims": list(state.dims),
        "amplitudes": [[float(a.real), float(a.imag)] for a in state.amps],
    }


def report_to_dict(report: ProtocolReport) -> Dict[str, object]:
    config = report.config
    table = report.table
    return {
        "protocol": config.kind.value,
        "dims": list(config.dims),
        "recv_dims": list(config.receiver_dims),
        "seed": config.seed,
        "mode": str(config.mode),
        "fold_corrections": config.fold_corrections,
        "convention": config.convention.as_dict(),
        "resources": report.resources,
        "branch_count": report.branch_count,
        "probability_sum": report.probability_sum,
        "min_fidelity": report.min_fidelity,
        "branches": [
            {
                "outcome": [str(o) for o in table.outcome(b)],
                "probability": float(table.probabilities[b]),
                "fidelity": float(table.fidelities[b]),
                "receiver_fidelities": [float(v) for v in table.receiver_fidelities[b]],
            }
            for b in range(len(table))
        ],
        "transcript": report.transcript.to_list(),
        "final_state": None if report.final_state is None else _state_to_dict(report.final_state),
    }


def report_to_json(report: ProtocolReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


# ----------------------------------------------------------------------
# Engine
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Trail:
    """Classical side of one branch walk."""

    results: Mapping[str, Outcome] = field(default_factory=dict)
    inbox: Inbox = field(default_factory=Inbox)
    transcript: Transcript = field(default_factory=Transcript)
    probability: float = 1.0
    outcomes: Tuple[Outcome, ...] = ()
    measured: Tuple[Tuple[Tuple[str, ...], StateVector], ...] = ()

    def record(self, step: PlanStep, outcome: Outcome, probability: float) -> "Trail":
        results = dict(self.results)
        results[step.key] = outcome
        return replace(
            self,
            results=results,
            inbox=self.inbox.grant([step.party], step.key),
            probability=self.probability * probability,
            outcomes=self.outcomes + (outcome,),
        )


Fork = Tuple[Outcome, float, Register, Tuple[Tuple[Tuple[str, ...], StateVector], ...]]
Lookup = Callable[[str], Outcome]

# operators of these steps read only the shift m of their Bell results
SHIFT_ONLY = (StepKind.SPREAD, StepKind.SHARE_CORRECT, StepKind.REALIGN)


class Engine:
    """Executes a plan on the smallest register that still holds every live site.

    Bell-measured pairs are dropped as soon as they are measured; every
    operator is applied through its monomial form when it has one.
    """

    dense = False
    batched = True

    def __init__(self, plan: Plan, inputs: Inputs, convention: PhaseConvention):
        self.plan = plan
        self.inputs = inputs
        self.convention = convention
        self._ops: Dict[Hashable, LocalOperator] = {}
        self._steps = {s.key: s for s in plan.steps}
        self._rounds = {s.key: position for position, s in enumerate(plan.steps, start=1)}

    # -- helpers -------------------------------------------------------
    def _op(self, key: Hashable, build: Callable[[], LocalOperator]) -> LocalOperator:
        op = self._ops.get(key)
        if op is None:
            op = self._ops[key] = build()
        return op

    @staticmethod
    def read(trail: Trail, step: PlanStep, key: str) -> Outcome:
        trail.inbox.check(step.party, key)
        return trail.results[key]

    def site_state(self, step: PlanStep) -> StateVector:
        """Local state a PREPARE, EXTEND or ENCODE step brings into the register."""
        d = math.prod(step.factors)
        if step.kind is StepKind.PREPARE:
            return resource_state(d, len(step.sites))
        if step.kind is StepKind.EXTEND:
            return basis_state(SiteSpec((d,)), (0,))
        if step.digit == 0:
            return self.inputs.joint.flattened()
        return embed_input(self.inputs.digits[step.digit - 1], step.factors, step.digit)

    # -- deterministic steps ------------------------------------------
    def local_step(self, step: PlanStep, register: Register, trail: Trail) -> Tuple[Register, Trail]:
        kind = step.kind
        d = math.prod(step.factors) if step.factors else 0

        if kind is StepKind.PREPARE:
            return Register(step.sites, self.site_state(step)), trail
        if kind is StepKind.EXTEND:
            control, target = step.sites
            register = register.add(target, self.site_state(step))
            return register.apply([control, target], self._op(("xor", d), lambda: xor_gate(d)), self.dense), trail
        if kind is StepKind.ENCODE:
            return register.add(step.sites[0], self.site_state(step)), trail
        if kind is StepKind.SEND:
            key = step.needs[0]
            outcome = self.read(trail, step, key)
            payload = outcome if isinstance(outcome, BellOutcome) else ProjectorOutcome(outcome)
            message = ClassicalMessage(step.party, step.recipients, self._rounds[step.key], payload)
            trail = replace(
                trail,
                transcript=deliver(trail.transcript, message),
                inbox=trail.inbox.grant(step.recipients, key),
            )
            return register, trail
        if kind is StepKind.OUTPUT:
            site = register.index(step.sites[0])
            state = narrow_site(register.state, site, step.factors[step.digit - 1])
            return replace(register, state=state), trail

        op = self.operator(step, lambda key: self.read(trail, step, key), d, self.convention)
        return register.apply(step.sites, op, self.dense), trail

    def operator(self, step: PlanStep, lookup: Lookup, d: int, conv: PhaseConvention) -> LocalOperator:
        """The operator ``step`` applies given the results ``lookup`` returns."""
        kind = step.kind
        factors = step.factors
        if kind is StepKind.SPREAD:
            received = tuple(lookup(k) for k in step.needs)
            return self._op(("spread", factors, step.digit, received),
                            lambda: spread_op(factors, step.digit, received, conv))
        if kind is StepKind.SHARE_CORRECT:
            o = lookup(step.needs[0])
            return self._op(("shift", d, o), lambda: bob_correction(d, factors, o))
        if kind is StepKind.HOLDER_CORRECT:
            o = lookup(step.needs[0])
            if step.carries_phase:
                return self._op(("corr", d, o), lambda: alice_correction(d, o, conv))
            return self._op(("shift", d, o), lambda: bob_correction(d, factors, o))
        if kind is StepKind.REALIGN:
            outcomes = tuple(lookup(k) for k in step.needs)
            return self._op(("realign", factors, outcomes), lambda: alice_realignment(factors, outcomes, conv))
        if kind is StepKind.RECEIVER_SPREAD:
            return self._op(("rspread", factors, step.digit), lambda: receiver_spread_op(factors, step.digit))
        if kind is StepKind.RELABEL:
            u = lookup(step.needs[0])
            return self._op(("relabel", factors, step.digit, u), lambda: receiver_relabel(factors, step.digit, u))
        if kind is StepKind.PHASE_CORRECT:
            peers = {self._steps[k].digit: lookup(k) for k in step.needs}
            key = ("phase", factors, step.digit, tuple(sorted(peers.items())))
            return self._op(key, lambda: receiver_phase(factors, step.digit, peers, conv))
        raise ConfigInvalid(f"step {step.key} of kind {kind.value} is not an operator step")

    # -- measurements --------------------------------------------------
    def _check_forced(self, step: PlanStep, forced: Outcome) -> None:
        d = math.prod(step.factors)
        if step.kind is StepKind.BELL_MEASURE:
            if not isinstance(forced, BellOutcome):
                raise BadOutcome(f"{step.key} needs a Bell outcome m:n, got {forced!r}")
            forced.validate(d)
        elif isinstance(forced, BellOutcome) or not 0 <= forced < step.outcome_count():
            raise BadOutcome(f"{step.key} needs a projector outcome in [0, {step.outcome_count()}), got {forced!r}")

    def measure(self, step: PlanStep, register: Register, forced: Optional[Outcome]) -> List[Fork]:
        if forced is not None:
            self._check_forced(step, forced)
        if step.kind is StepKind.BELL_MEASURE:
            a, b = register.indices(step.sites)
            forks = [
                (o, p, register.without(step.sites, residual), ())
                for o, p, residual in bell_branches(register.state, a, b)
            ]
        else:
            site = register.index(step.sites[0])
            projectors = receiver_projectors(step.factors, step.digit)
            forks = [
                (u, p, replace(register, state=post), ())
                for u, p, post in enumerate_outcomes(register.state, [site], projectors)
            ]
        if forced is None:
            return forks
        for fork in forks:
            if fork[0] == forced:
                return [fork]
        raise ZeroProbabilityBranch(f"{step.key} outcome {forced} has zero probability")

    def finish(self, register: Register, trail: Trail) -> StateVector:
        outputs = self.plan.output_sites
        if set(register.names) != set(outputs):
            raise ConfigInvalid(f"plan leaves sites {register.names}, expected {outputs}")
        return permute_sites(register.state, register.indices(outputs))

    # -- walk ----------------------------------------------------------
    def walk(self, mode: ExecutionMode, rng: np.random.Generator,
             on_leaf: Callable[[Trail, StateVector], None]) -> None:
        """Walk the plan depth-first, calling ``on_leaf`` for every finished branch in outcome order."""
        steps = self.plan.steps
        forced = list(mode.outcomes) if mode.kind is ModeKind.BRANCH else None
        if forced is not None and len(forced) != measurement_count(self.plan):
            raise ConfigInvalid(
                f"branch mode gives {len(forced)} outcomes, the plan measures {measurement_count(self.plan)} times"
            )

        def visit(position: int, register: Register, trail: Trail) -> None:
            while position < len(steps):
                step = steps[position]
                position += 1
                if not step.is_measurement:
                    logger.debug("%s", step.key)
                    register, trail = self.local_step(step, register, trail)
                    continue
                target = None if forced is None else forced[len(trail.outcomes)]
                forks = self.measure(step, register, target)
                if mode.kind is ModeKind.SAMPLE:
                    forks = [forks[_draw(rng, [f[1] for f in forks])]]
                for outcome, probability, nxt, measured in forks:
                    branch_trail = trail.record(step, outcome, probability)
                    if measured:
                        branch_trail = replace(branch_trail, measured=branch_trail.measured + measured)
                    visit(position, nxt, branch_trail)
                return
            on_leaf(trail, self.finish(register, trail))

        visit(0, Register(), Trail())

    # -- batched enumeration -------------------------------------------
    def _group_lookups(self, step: PlanStep, batch: BranchBatch) -> List[Tuple[np.ndarray, Lookup]]:
        """Rows of ``batch`` split by the results ``step``'s operator depends on."""
        columns = []
        decoders: List[Callable[[int], Outcome]] = []
        for key in step.needs:
            source = self._steps[key]
            codes = batch.codes[key]
            if source.kind is StepKind.BELL_MEASURE:
                d = math.prod(source.factors)
                if step.kind in SHIFT_ONLY or (step.kind is StepKind.HOLDER_CORRECT and not step.carries_phase):
                    codes = codes // d
                    decoders.append(lambda m: BellOutcome(m, 0))
                else:
                    decoders.append(lambda code, d=d: BellOutcome.from_index(d, code))
            else:
                decoders.append(int)
            columns.append(codes)
        groups, inverse = np.unique(np.stack(columns, axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.cumsum(np.bincount(inverse, minlength=len(groups)))[:-1]
        lookups = []
        for values, rows in zip(groups, np.split(order, bounds)):
            results = {key: decode(int(v)) for key, decode, v in zip(step.needs, decoders, values)}
            lookups.append((rows, results.__getitem__))
        return lookups

    def enumerate_batch(self, expected: StateVector, targets: Sequence[Tuple[int, StateVector]],
                        keep_states: bool = False) -> BranchTable:
        """Every branch at once, forked at each measurement in outcome order."""
        batch = BranchBatch()
        conv = self.convention
        for step in self.plan.steps:
            kind = step.kind
            d = math.prod(step.factors) if step.factors else 0
            if kind is StepKind.SEND:
                continue
            if kind is StepKind.PREPARE:
                batch.start(step.sites, self.site_state(step))
            elif kind is StepKind.EXTEND:
                batch.add(step.sites[1], self.site_state(step))
                batch.apply(step.sites, self._op(("xor", d), lambda: xor_gate(d)))
            elif kind is StepKind.ENCODE:
                batch.add(step.sites[0], self.site_state(step))
            elif kind is StepKind.OUTPUT:
                batch.narrow(step.sites[0], step.factors[step.digit - 1])
            elif kind is StepKind.BELL_MEASURE:
                batch.bell_fork(step.key, step.sites, d)
            elif kind is StepKind.PROJECT:
                batch.project_fork(step.key, step.sites[0], receiver_projectors(step.factors, step.digit))
            elif not step.needs:
                batch.apply(step.sites, self.operator(step, _no_results, d, conv))
            else:
                for rows, lookup in self._group_lookups(step, batch):
                    batch.apply(step.sites, self.operator(step, lookup, d, conv), rows)
            logger.debug("%s: %d branches", step.key, len(batch))

        finals, spec = batch.ordered(self.plan.output_sites)
        overlaps = finals @ expected.amps.conj()
        columns = []
        for site, state in targets:
            residual = np.einsum("j,bjr->br", state.amps.conj(), split_batch(finals, spec, [site]))
            columns.append(np.minimum(1.0, np.einsum("br,br->b", residual.conj(), residual).real))
        return BranchTable(
            codes=np.stack([batch.codes[s.key] for s in self.plan.measurements], axis=1),
            probabilities=batch.probabilities,
            fidelities=np.clip(np.abs(overlaps) ** 2, 0.0, 1.0),
            receiver_fidelities=np.stack(columns, axis=1) if columns else np.zeros((len(batch), 0)),
            bell_dims=bell_dims(self.plan),
            final_states=tuple(StateVector(spec, row) for row in finals) if keep_states else None,
        )


def _no_results(key: str) -> Outcome:
    raise ConfigInvalid(f"result {key!r} is not available to this step")


def _draw(rng: np.random.Generator, weights: Sequence[float]) -> int:
    cdf = np.cumsum(weights)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(index, len(weights) - 1)


# ----------------------------------------------------------------------
# Runners
# ----------------------------------------------------------------------
def execute(config: ProtocolConfig, engine: type = Engine,
            keep_states: Optional[bool] = None) -> ProtocolReport:
    """Run ``config`` with the given engine class and build its report.

    Final states are kept on the branch records in sample and branch mode, or
    whenever ``keep_states`` is true.
    """
    plan = schedule(config)
    enumerate_all = config.mode.kind is ModeKind.ENUMERATE
    if enumerate_all and branch_bound(plan) > MAX_BRANCHES:
        raise BranchExplosion(f"{branch_bound(plan)} branches exceed the limit of {MAX_BRANCHES}")
    input_rng, measure_rng = seed_streams(config.seed)
    inputs = resolve_inputs(config, input_rng)
    expected = expected_output(config, inputs)
    targets = receiver_targets(config, inputs)
    if keep_states is None:
        keep_states = not enumerate_all
    logger.info("%s dims=%s mode=%s: %d steps, %d measurements",
                config.kind.value, config.dims, config.mode, len(plan.steps), measurement_count(plan))

    runner = engine(plan, inputs, config.convention)
    records: List[BranchRecord] = []
    first: List[Tuple[Trail, StateVector]] = []

    def collect(trail: Trail, final: StateVector) -> None:
        if not first:
            first.append((trail, final))
        records.append(BranchRecord(
            outcome=trail.outcomes,
            probability=trail.probability,
            fidelity=fidelity(final, expected),
            receiver_fidelities=tuple(site_overlap(final, [site], state) for site, state in targets),
            final_state=final if keep_states else None,
        ))

    if enumerate_all and runner.batched:
        table = runner.enumerate_batch(expected, targets, keep_states)
        # the first branch is walked once more for its transcript and inbox checks
        runner.walk(ExecutionMode.branch(table.outcome(0)), measure_rng, collect)
    else:
        runner.walk(config.mode, measure_rng, collect)
        table = BranchTable.from_records(records, bell_dims(plan))

    report = ProtocolReport(
        config=config,
        plan=plan,
        inputs=inputs,
        expected_state=expected,
        table=table,
        transcript=first[0][0].transcript,
        final_state=None if enumerate_all else first[0][1],
    )
    logger.info("%s: %d branches, probability sum %.12f, min fidelity %.12f",
                config.kind.value, report.branch_count, report.probability_sum, report.min_fidelity)
    return report


def _expect_kind(config: ProtocolConfig, kind: ProtocolKind) -> None:
    if config.kind is not kind:
        raise ConfigInvalid(f"expected a {kind.value} configuration, got {config.kind.value}")


def run_many_to_one(config: ProtocolConfig) -> ProtocolReport:
    _expect_kind(config, ProtocolKind.MANY_TO_ONE)
    return execute(config)


def run_one_to_many(config: ProtocolConfig) -> ProtocolReport:
    _expect_kind(config, ProtocolKind.ONE_TO_MANY)
    return execute(config)


def run_many_to_many(config: ProtocolConfig) -> ProtocolReport:
    _expect_kind(config, ProtocolKind.MANY_TO_MANY)
    return execute(config)


def run_two_way_channel(config: ProtocolConfig) -> ProtocolReport:
    _expect_kind(config, ProtocolKind.TWO_WAY)
    return execute(config)


RUNNERS = {
    ProtocolKind.MANY_TO_ONE: run_many_to_one,
    ProtocolKind.ONE_TO_MANY: run_one_to_many,
    ProtocolKind.MANY_TO_MANY: run_many_to_many,
    ProtocolKind.TWO_WAY: run_two_way_channel,
}


def run_protocol(config: ProtocolConfig) -> ProtocolReport:
    return RUNNERS[config.kind](config)


def run_branch(config: ProtocolConfig, outcomes: Sequence[Outcome]) -> ProtocolReport:
    """Run with every measurement forced to ``outcomes`` (plan measurement order)."""
    return run_protocol(config.with_mode(ExecutionMode.branch(outcomes)))


REPORT_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "report.schema.json"


def load_report_schema() -> Dict[str, object]:
    return json.loads(REPORT_SCHEMA_PATH.read_text(encoding="utf-8"))


def validate_report(data: Mapping[str, object]) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``data`` matches the committed report schema."""
    import jsonschema

    jsonschema.validate(instance=data, schema=load_report_schema())
