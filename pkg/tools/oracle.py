"""Independent verification of the protocol engine.

``DenseEngine`` re-executes a plan the slow way: every operator through its
materialized matrix, every measurement through the projector family on the
full register, measured pairs kept until the branch ends.  The checks here
compare it with the fast engine, enumerate branches, pin the correction phase
signs and run the property suite behind ``qunet verify``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from tools.config import ExecutionMode, ProtocolConfig, ProtocolKind
from tools.errors import (
    AmbiguousConvention,
    CapacityExceeded,
    NoConsistentConvention,
    QunetError,
    ZeroProbabilityBranch,
)
from tools.gates import (
    COMMITTED_CONVENTION,
    BellOutcome,
    PhaseConvention,
    alice_correction,
    alice_realignment,
    bell_basis,
    bell_measure,
    bell_state,
    bob_correction,
    receiver_corrections,
    receiver_projectors,
    receiver_spread_op,
    resource_state,
    spread_op,
    xor_gate,
)
from tools.network import PlanStep, StepKind, branch_bound, replay, schedule
from tools.protocols import (
    MAX_BRANCHES,
    PROBABILITY_TOL,
    BranchRecord,
    Engine,
    Fork,
    Outcome,
    Register,
    Trail,
    execute,
    report_to_dict,
    run_branch,
    run_protocol,
    validate_report,
)
from tools.qudit_core import (
    LocalOperator,
    SiteSpec,
    StateVector,
    apply_on_sites,
    check_projector_family,
    detach_sites,
    measure_with_projectors,
    random_state,
    tensor,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
UNITARY_TOL = 1e-10
AGREEMENT_TOL = 1e-12
DENSE_BRANCH_LIMIT = 1024
PIN_DIMS: Tuple[Tuple[int, ...], ...] = ((2, 2), (2, 3), (3, 2))
DEFAULT_MATRIX: Tuple[Tuple[int, ...], ...] = ((2, 2), (2, 3), (3, 2), (2, 2, 2), (2, 4), (3, 3))


# ----------------------------------------------------------------------
# Dense re-execution
# ----------------------------------------------------------------------
class DenseEngine(Engine):
    dense = True
    batched = False

    def measure(self, step: PlanStep, register: Register, forced: Optional[Outcome]) -> List[Fork]:
        if forced is not None:
            self._check_forced(step, forced)
        d = int(np.prod(step.factors))
        if step.kind is StepKind.BELL_MEASURE:
            candidates = [forced] if forced is not None else [
                BellOutcome.from_index(d, o) for o in range(d * d)
            ]
        else:
            candidates = [forced] if forced is not None else list(range(step.outcome_count()))
            projectors = [
                LocalOperator.from_matrix(p.dense(), label=p.label)
                for p in receiver_projectors(step.factors, step.digit)
            ]
        forks: List[Fork] = []
        for outcome in candidates:
            try:
                if step.kind is StepKind.BELL_MEASURE:
                    a, b = register.indices(step.sites)
                    _, probability, post = bell_measure(register.state, a, b, outcome=outcome)
                    measured = ((step.sites, bell_state(d, outcome)),)
                else:
                    site = register.index(step.sites[0])
                    _, probability, post = measure_with_projectors(
                        register.state, [site], projectors, outcome=outcome
                    )
                    measured = ()
            except ZeroProbabilityBranch:
                if forced is not None:
                    raise
                continue
            forks.append((outcome, probability, replace(register, state=post), measured))
        return forks

    def finish(self, register: Register, trail: Trail) -> StateVector:
        for names, local in trail.measured:
            state = detach_sites(register.state, register.indices(names), local)
            register = register.without(names, state)
        return super().finish(register, trail)


def enumerate_branches(config: ProtocolConfig) -> List[BranchRecord]:
    """Every nonzero-probability branch of ``config`` computed by the dense engine."""
    report = execute(config.with_mode(ExecutionMode.enumerate()), engine=DenseEngine, keep_states=True)
    return list(report.branches)


def branch_count(config: ProtocolConfig) -> int:
    """Bell outcomes times projector outcomes over the whole plan."""
    return branch_bound(schedule(config))


def dense_crosscheck(state: StateVector,
                     ops: Sequence[Tuple[Sequence[int], LocalOperator]]) -> float:
    """Max amplitude deviation between monomial and materialized application of ``ops``."""
    if state.spec.total > DENSE_LIMIT:
        raise CapacityExceeded(f"dense cross-check is limited to dimension {DENSE_LIMIT}")
    fast = slow = state
    for sites, op in ops:
        fast = apply_on_sites(fast, sites, op)
        slow = apply_on_sites(slow, sites, op, dense=True)
    return float(np.max(np.abs(fast.amps - slow.amps)))


def branch_deviation(config: ProtocolConfig, outcomes: Sequence[Outcome]) -> float:
    """Fast engine against the dense engine on one forced branch."""
    fast = run_branch(config, outcomes).final_state
    dense = execute(config.with_mode(ExecutionMode.branch(outcomes)), engine=DenseEngine).final_state
    return float(np.max(np.abs(fast.amps - dense.amps)))


# ----------------------------------------------------------------------
# Phase pinning
# ----------------------------------------------------------------------
RELEVANT_FIELDS: Dict[ProtocolKind, Tuple[str, ...]] = {
    ProtocolKind.MANY_TO_ONE: ("shift_sign", "bell_phase_sign"),
    ProtocolKind.ONE_TO_MANY: ("bell_phase_sign", "receiver_phase_sign"),
    ProtocolKind.MANY_TO_MANY: ("shift_sign", "bell_phase_sign", "receiver_phase_sign"),
    ProtocolKind.TWO_WAY: ("shift_sign", "bell_phase_sign", "receiver_phase_sign"),
}


@dataclass(frozen=True)
class PinnedConvention:
    kind: ProtocolKind
    convention: PhaseConvention
    fields: Tuple[str, ...]

    def as_dict(self) -> Dict[str, object]:
        return {
            "protocol": self.kind.value,
            "fields": list(self.fields),
            "convention": {f: getattr(self.convention, f) for f in self.fields},
        }


def candidate_conventions(kind: ProtocolKind) -> List[PhaseConvention]:
    """Every sign choice for the fields ``kind`` depends on; the rest stay committed."""
    fields = RELEVANT_FIELDS[kind]
    return [
        COMMITTED_CONVENTION.with_fields(**dict(zip(fields, signs)))
        for signs in itertools.product((1, -1), repeat=len(fields))
    ]


def _holds_everywhere(kind: ProtocolKind, convention: PhaseConvention,
                      dims_set: Iterable[Tuple[int, ...]], seed: int) -> bool:
    for dims in dims_set:
        report = run_protocol(ProtocolConfig(kind, tuple(dims), seed=seed, convention=convention))
        if not report.succeeded:
            return False
    return True


def pin_phases(kind: ProtocolKind, dims_set: Iterable[Tuple[int, ...]] = PIN_DIMS,
               candidates: Optional[Sequence[PhaseConvention]] = None, seed: int = 0) -> PinnedConvention:
    """The unique candidate under which every enumerated branch has fidelity 1."""
    dims_set = tuple(tuple(d) for d in dims_set)
    candidates = candidate_conventions(kind) if candidates is None else list(candidates)
    survivors = []
    for convention in candidates:
        ok = _holds_everywhere(kind, convention, dims_set, seed)
        logger.info("pin %s %s over %s: %s", kind.value, convention.as_dict(), dims_set,
                    "survives" if ok else "fails")
        if ok:
            survivors.append(convention)
    if not survivors:
        raise NoConsistentConvention(f"no candidate convention works for {kind.value} on {dims_set}")
    if len(survivors) > 1:
        raise AmbiguousConvention(
            f"{len(survivors)} conventions work for {kind.value}: {[s.as_dict() for s in survivors]}"
        )
    return PinnedConvention(kind, survivors[0], RELEVANT_FIELDS[kind])


# ----------------------------------------------------------------------
# Property suite
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name: str, passed: bool, detail: str = "") -> PropertyResult:
    if not passed:
        logger.warning("property %s failed: %s", name, detail)
    return PropertyResult(name, bool(passed), detail)


def check_bell_basis(ds: Iterable[int] = (2, 3, 4, 5), seed: int = 0) -> List[PropertyResult]:
    results = []
    rng = np.random.default_rng(seed)
    for d in ds:
        basis = bell_basis(d)
        gram_error = float(np.max(np.abs(basis.conj().T @ basis - np.eye(d * d))))
        results.append(_check(f"bell_orthonormality[d={d}]", gram_error < 1e-12, f"max error {gram_error:.3e}"))
        # a Bell measurement of an arbitrary qudit against one leg of the pair
        state = tensor(random_state(SiteSpec((d,)), rng), resource_state(d, 2))
        weights = []
        for o in range(d * d):
            _, p, _ = bell_measure(state, 0, 1, outcome=BellOutcome.from_index(d, o))
            weights.append(p)
        spread = float(np.max(np.abs(np.array(weights) - 1.0 / d ** 2)))
        results.append(_check(f"bell_uniformity[d={d}]", spread < 1e-12, f"max deviation {spread:.3e}"))
    return results


def protocol_operators(dims: Tuple[int, ...]) -> List[LocalOperator]:
    """Every operator the protocols can build for the factorization ``dims``."""
    d = int(np.prod(dims))
    n = len(dims)
    outcomes = [BellOutcome(m, k) for m in range(d) for k in range(d)]
    ops: List[LocalOperator] = [xor_gate(d)]
    for i in range(1, n + 1):
        ops.append(spread_op(dims, i))
        ops.append(spread_op(dims, i, [BellOutcome(1 % d, 0)]))
        ops.append(receiver_spread_op(dims, i))
        # each peer reports its own last projector outcome
        peers = {j: d // dims[j - 1] - 1 for j in range(1, n + 1) if j != i}
        for u in range(d // dims[i - 1]):
            ops.extend(receiver_corrections(dims, i, u, peers))
    for o in outcomes:
        ops.append(alice_correction(d, o))
        ops.append(bob_correction(d, dims, o))
    ops.append(alice_realignment(dims, [BellOutcome(d - 1, 0)] * n))
    return ops


def check_operators(matrix: Iterable[Tuple[int, ...]]) -> List[PropertyResult]:
    results = []
    for dims in matrix:
        worst = max(op.unitarity_error() for op in protocol_operators(dims))
        results.append(_check(f"unitarity[{_dims_text(dims)}]", worst < UNITARY_TOL, f"max error {worst:.3e}"))
        try:
            for i in range(1, len(dims) + 1):
                check_projector_family(receiver_projectors(dims, i), int(np.prod(dims)), tol=1e-10)
            results.append(_check(f"projector_completeness[{_dims_text(dims)}]", True))
        except QunetError as exc:
            results.append(_check(f"projector_completeness[{_dims_text(dims)}]", False, str(exc)))
    return results


def _dims_text(dims: Sequence[int]) -> str:
    return ",".join(str(d) for d in dims)


def check_protocol(kind: ProtocolKind, dims: Tuple[int, ...], seed: int,
                   convention: PhaseConvention = COMMITTED_CONVENTION) -> List[PropertyResult]:
    label = f"{kind.value}[{_dims_text(dims)}]"
    config = ProtocolConfig(kind, dims, seed=seed, convention=convention)
    report = run_protocol(config)
    expected_count = branch_count(config)
    return [
        _check(f"fidelity:{label}", report.succeeded, f"min fidelity {report.min_fidelity:.15f}"),
        _check(f"probability_sum:{label}", abs(report.probability_sum - 1.0) < PROBABILITY_TOL,
               f"sum {report.probability_sum:.15f}"),
        _check(f"branch_count:{label}", report.branch_count == expected_count,
               f"{report.branch_count} branches, expected {expected_count}"),
    ]


def check_agreement(kind: ProtocolKind, dims: Tuple[int, ...], seed: int,
                    samples: int = 3) -> PropertyResult:
    """Fast and dense engines agree on a few sampled branches."""
    worst = 0.0
    for k in range(samples):
        sampled = run_protocol(ProtocolConfig(kind, dims, seed=seed + k, mode=ExecutionMode.sample()))
        config = ProtocolConfig(kind, dims, seed=seed + k)
        worst = max(worst, branch_deviation(config, sampled.branches[0].outcome))
    return _check(f"engine_agreement:{kind.value}[{_dims_text(dims)}]", worst < AGREEMENT_TOL,
                  f"max deviation {worst:.3e}")


def check_replay(config: ProtocolConfig) -> PropertyResult:
    report = run_protocol(config.with_mode(ExecutionMode.sample()))
    replayed = replay(report.transcript, config)
    deviation = float(np.max(np.abs(replayed.amps - report.final_state.amps)))
    return _check(f"replay:{config.kind.value}[{_dims_text(config.dims)}]", deviation <= 1e-12,
                  f"max deviation {deviation:.3e}")


def check_report_schema(config: ProtocolConfig) -> PropertyResult:
    import jsonschema

    name = f"report_schema:{config.kind.value}[{_dims_text(config.dims)}]"
    try:
        validate_report(report_to_dict(run_protocol(config)))
    except jsonschema.ValidationError as exc:
        return _check(name, False, exc.message)
    return _check(name, True)


def check_pinning(kinds: Iterable[ProtocolKind], seed: int) -> List[PropertyResult]:
    results = []
    for kind in kinds:
        name = f"phase_pinning:{kind.value}"
        try:
            pinned = pin_phases(kind, seed=seed)
        except QunetError as exc:
            results.append(_check(name, False, str(exc)))
            continue
        committed = all(getattr(pinned.convention, f) == getattr(COMMITTED_CONVENTION, f) for f in pinned.fields)
        results.append(_check(name, committed, str(pinned.as_dict()["convention"])))
    return results


def check_enumeration_agreement(kind: ProtocolKind, dims: Tuple[int, ...], seed: int) -> PropertyResult:
    """Fast and dense engines agree on every enumerated branch."""
    config = ProtocolConfig(kind, dims, seed=seed)
    fast = run_protocol(config).table
    dense = execute(config, engine=DenseEngine).table
    name = f"enumeration_agreement:{kind.value}[{_dims_text(dims)}]"
    if fast.codes.shape != dense.codes.shape or not np.array_equal(fast.codes, dense.codes):
        return _check(name, False, f"{len(fast)} fast branches against {len(dense)} dense branches")
    worst = max(float(np.max(np.abs(fast.fidelities - dense.fidelities))),
                float(np.max(np.abs(fast.probabilities - dense.probabilities))))
    return _check(name, worst < AGREEMENT_TOL, f"max deviation {worst:.3e}")


def run_verification(matrix: Iterable[Tuple[int, ...]] = DEFAULT_MATRIX, seed: int = 0,
                     inject_fault: bool = False) -> List[PropertyResult]:
    """The full property suite; ``inject_fault`` flips every correction sign.

    Protocol runs whose branch count exceeds the enumeration limit are skipped.
    """
    matrix = tuple(tuple(d) for d in matrix)
    convention = COMMITTED_CONVENTION.flipped() if inject_fault else COMMITTED_CONVENTION
    if inject_fault:
        logger.warning("fault injection: protocol checks run with convention %s", convention.as_dict())
    results = check_bell_basis(seed=seed)
    results += check_operators(matrix)
    for dims in matrix:
        for kind in ProtocolKind:
            if kind is ProtocolKind.TWO_WAY and len(dims) != 2:
                continue
            count = branch_count(ProtocolConfig(kind, dims, seed=seed))
            if count > MAX_BRANCHES:
                logger.info("skipping %s[%s]: %d branches", kind.value, _dims_text(dims), count)
                continue
            results += check_protocol(kind, dims, seed, convention)
    smallest = min(matrix, key=lambda dims: int(np.prod(dims)))
    for kind in ProtocolKind:
        if kind is ProtocolKind.TWO_WAY and len(smallest) != 2:
            continue
        results.append(check_agreement(kind, smallest, seed))
        if branch_count(ProtocolConfig(kind, smallest, seed=seed)) <= DENSE_BRANCH_LIMIT:
            results.append(check_enumeration_agreement(kind, smallest, seed))
        results.append(check_replay(ProtocolConfig(kind, smallest, seed=seed)))
        results.append(check_report_schema(ProtocolConfig(kind, smallest, seed=seed)))
    results += check_pinning((ProtocolKind.MANY_TO_ONE, ProtocolKind.ONE_TO_MANY), seed)
    return results


def verification_summary(results: Sequence[PropertyResult]) -> Dict[str, object]:
    failures = [r for r in results if not r.passed]
    return {
        "passed": not failures,
        "checked": len(results),
        "first_failure": failures[0].name if failures else None,
        "properties": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
    }
