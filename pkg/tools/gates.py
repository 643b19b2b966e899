"""Gates, Bell tables and the protocol operator family.

A d-level label site is read as digits ``(k_1..k_N)`` of the factorization
``d = d_1 * ... * d_N`` with ``k = sum(k_j * p_j)``.  Party indices (sender
``i``, receiver ``i``) are 1-based like the digits they own.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tools.errors import (
    BadDimension,
    BadOutcome,
    BadReceiverIndex,
    BadSenderIndex,
    ConfigInvalid,
    DimensionMismatch,
)
from tools.qudit_core import (
    ZERO_PROBABILITY,
    LocalOperator,
    SiteSpec,
    StateVector,
    measure_with_projectors,
    split_sites,
)

_QUARTER_TURNS = (1 + 0j, 1j, -1 + 0j, -1j)


def _check_dim(d: int) -> int:
    if int(d) < 2:
        raise BadDimension(f"dimension must be at least 2, got {d}")
    return int(d)


def omega(d: int, e: int) -> complex:
    """``exp(2*pi*i*e/d)`` with ``e`` reduced mod ``d`` first."""
    d = _check_dim(d)
    e = int(e) % d
    if (4 * e) % d == 0:
        return _QUARTER_TURNS[(4 * e) // d]
    return cmath.exp(2j * math.pi * e / d)


@lru_cache(maxsize=None)
def _omega_table(d: int) -> np.ndarray:
    table = np.array([omega(d, e) for e in range(d)], dtype=np.complex128)
    table.setflags(write=False)
    return table


# ----------------------------------------------------------------------
# Phase convention
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PhaseConvention:
    """Signs of the correction exponents.

    shift_sign           direction in which later senders' shifts carry into
                         earlier digits (realignment and folded spreads)
    bell_phase_sign      sign of ``n*l`` in the phase-carrying correction
    receiver_phase_sign  sign of the peer-outcome phase receivers remove
    """

    shift_sign: int = 1
    bell_phase_sign: int = 1
    receiver_phase_sign: int = -1

    def __post_init__(self) -> None:
        for name in ("shift_sign", "bell_phase_sign", "receiver_phase_sign"):
            if getattr(self, name) not in (1, -1):
                raise ConfigInvalid(f"{name} must be +1 or -1")

    def flipped(self) -> "PhaseConvention":
        return PhaseConvention(-self.shift_sign, -self.bell_phase_sign, -self.receiver_phase_sign)

    def with_fields(self, **signs: int) -> "PhaseConvention":
        return replace(self, **signs)

    def as_dict(self) -> Dict[str, int]:
        return {
            "shift_sign": self.shift_sign,
            "bell_phase_sign": self.bell_phase_sign,
            "receiver_phase_sign": self.receiver_phase_sign,
        }


COMMITTED_CONVENTION = PhaseConvention(shift_sign=1, bell_phase_sign=1, receiver_phase_sign=-1)


# ----------------------------------------------------------------------
# Single-site generators
# ----------------------------------------------------------------------
def mod_add_gate(d: int, m: int) -> LocalOperator:
    """``|l> -> |l + m mod d>``."""
    d = _check_dim(d)
    m = int(m) % d
    return LocalOperator.monomial((np.arange(d) + m) % d, label=f"X^{m}")


def phase_gate(d: int, n: int) -> LocalOperator:
    """``|l> -> omega^(n*l) |l>``."""
    d = _check_dim(d)
    n = int(n) % d
    table = _omega_table(d)
    return LocalOperator.monomial(np.arange(d), table[(n * np.arange(d)) % d], label=f"Z^{n}")


@lru_cache(maxsize=None)
def _dft_matrix(d: int) -> np.ndarray:
    table = _omega_table(d)
    k = np.arange(d)
    f = table[np.outer(k, k) % d] / math.sqrt(d)
    f.setflags(write=False)
    return f


def dft(d: int) -> LocalOperator:
    """``|x> -> d^(-1/2) sum_u omega^(x*u) |u>``."""
    return LocalOperator.from_matrix(_dft_matrix(_check_dim(d)), label=f"F{d}")


def xor_gate(d: int) -> LocalOperator:
    """Two-site gate ``|k>|l> -> |k>|k + l mod d>``; control is the first listed site."""
    d = _check_dim(d)
    k, l = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    source = (k + d * l).reshape(-1)
    target = (k + d * ((k + l) % d)).reshape(-1)
    perm = np.empty(d * d, dtype=np.int64)
    perm[source] = target
    return LocalOperator.monomial(perm, label=f"XOR{d}")


# ----------------------------------------------------------------------
# Bell basis
# ----------------------------------------------------------------------
@dataclass(frozen=True, order=True)
class BellOutcome:
    m: int
    n: int

    def validate(self, d: int) -> "BellOutcome":
        if not (0 <= self.m < d and 0 <= self.n < d):
            raise BadOutcome(f"Bell outcome {self} outside [0, {d}) x [0, {d})")
        return self

    def index(self, d: int) -> int:
        return self.m * d + self.n

    @classmethod
    def from_index(cls, d: int, index: int) -> "BellOutcome":
        return cls(*divmod(int(index), d))

    def __str__(self) -> str:
        return f"{self.m}:{self.n}"


def bell_state(d: int, outcome: BellOutcome) -> StateVector:
    """``(1/sqrt d) sum_l omega^(n*l) |l>|l + m>`` on two d-level sites."""
    d = _check_dim(d)
    outcome.validate(d)
    return StateVector(SiteSpec((d, d)), _bell_column(d, outcome.m, outcome.n))


def _bell_column(d: int, m: int, n: int) -> np.ndarray:
    table = _omega_table(d)
    column = np.zeros(d * d, dtype=np.complex128)
    l = np.arange(d)
    column[l + d * ((l + m) % d)] = table[(n * l) % d] / math.sqrt(d)
    return column


@lru_cache(maxsize=None)
def _bell_basis(d: int) -> np.ndarray:
    basis = np.empty((d * d, d * d), dtype=np.complex128)
    for m in range(d):
        for n in range(d):
            basis[:, m * d + n] = _bell_column(d, m, n)
    basis.setflags(write=False)
    return basis


def bell_basis(d: int) -> np.ndarray:
    """Columns are the Bell states in ``(m, n)`` lexicographic order."""
    return _bell_basis(_check_dim(d))


@lru_cache(maxsize=None)
def _bell_projectors(d: int) -> Tuple[LocalOperator, ...]:
    basis = _bell_basis(d)
    return tuple(
        LocalOperator.rank_one(basis[:, o], label=f"Bell{BellOutcome.from_index(d, o)}")
        for o in range(d * d)
    )


def bell_projectors(d: int) -> Tuple[LocalOperator, ...]:
    return _bell_projectors(_check_dim(d))


def _pair_dim(state: StateVector, site_a: int, site_b: int) -> int:
    dims = state.spec.dims
    if dims[site_a] != dims[site_b]:
        raise DimensionMismatch(f"Bell measurement on sites of dims {dims[site_a]} and {dims[site_b]}")
    return dims[site_a]


def bell_measure(state: StateVector, site_a: int, site_b: int, *,
                 rng: Optional[np.random.Generator] = None,
                 outcome: Optional[BellOutcome] = None) -> Tuple[BellOutcome, float, StateVector]:
    """Generalized Bell measurement; ``site_a`` holds the ``|l>`` half."""
    d = _pair_dim(state, site_a, site_b)
    forced = None if outcome is None else outcome.validate(d).index(d)
    index, probability, post = measure_with_projectors(
        state, [site_a, site_b], bell_projectors(d), rng=rng, outcome=forced
    )
    return BellOutcome.from_index(d, index), probability, post


def bell_branches(state: StateVector, site_a: int,
                  site_b: int) -> List[Tuple[BellOutcome, float, StateVector]]:
    """All nonzero Bell outcomes with the remaining register, measured pair removed."""
    d = _pair_dim(state, site_a, site_b)
    matrix, rest = split_sites(state, [site_a, site_b])
    if rest is None:
        raise DimensionMismatch("Bell branches need at least one unmeasured site")
    rows = bell_basis(d).conj().T @ matrix
    weights = np.einsum("ij,ij->i", rows.conj(), rows).real
    return [
        (BellOutcome.from_index(d, o), float(w), StateVector(rest, rows[o] / math.sqrt(w)))
        for o, w in enumerate(weights)
        if w >= ZERO_PROBABILITY
    ]


# ----------------------------------------------------------------------
# Shared resource and encoding
# ----------------------------------------------------------------------
def resource_state(d: int, parties: int) -> StateVector:
    """``(1/sqrt d) sum_k |k>^(x parties)``."""
    d = _check_dim(d)
    if parties < 2:
        raise ConfigInvalid(f"the shared resource needs at least 2 parties, got {parties}")
    spec = SiteSpec((d,) * parties)
    diagonal = sum(d ** j for j in range(parties))
    amps = np.zeros(spec.total, dtype=np.complex128)
    amps[np.arange(d) * diagonal] = 1 / math.sqrt(d)
    return StateVector(spec, amps)


def _strides(factors: Sequence[int]) -> List[int]:
    strides = [1]
    for f in factors[:-1]:
        strides.append(strides[-1] * f)
    return strides


def _check_factors(factors: Sequence[int], d: Optional[int] = None) -> Tuple[int, ...]:
    factors = tuple(_check_dim(f) for f in factors)
    if not factors:
        raise ConfigInvalid("empty factorization")
    if d is not None and math.prod(factors) != d:
        raise DimensionMismatch(f"factors {factors} do not multiply to {d}")
    return factors


def _check_index(factors: Sequence[int], i: int, error: type) -> int:
    if not 1 <= i <= len(factors):
        raise error(f"index {i} outside 1..{len(factors)}")
    return i


def embed_input(state: StateVector, factors: Sequence[int], i: int) -> StateVector:
    """Place a d_i-level state on digit ``i`` of a d-level site: ``|k> -> |k p_i>``."""
    factors = _check_factors(factors)
    _check_index(factors, i, BadSenderIndex)
    if state.spec.dims != (factors[i - 1],):
        raise DimensionMismatch(f"input of dims {state.spec.dims} for a digit of {factors[i - 1]} levels")
    d = math.prod(factors)
    amps = np.zeros(d, dtype=np.complex128)
    amps[np.arange(factors[i - 1]) * _strides(factors)[i - 1]] = state.amps
    return StateVector(SiteSpec((d,)), amps)


def digitwise_operator(factors: Sequence[int], local: Mapping[int, np.ndarray]) -> np.ndarray:
    """Kronecker product over digits, identity where ``local`` has no entry."""
    matrix = np.ones((1, 1), dtype=np.complex128)
    for j in range(len(factors), 0, -1):
        matrix = np.kron(matrix, local.get(j, np.eye(factors[j - 1])))
    return matrix


def _complement_dft(factors: Sequence[int], i: int) -> np.ndarray:
    return digitwise_operator(factors, {j: _dft_matrix(f) for j, f in enumerate(factors, 1) if j != i})


# ----------------------------------------------------------------------
# Sender side
# ----------------------------------------------------------------------
def spread_op(factors: Sequence[int], i: int, received: Sequence[BellOutcome] = (),
              convention: PhaseConvention = COMMITTED_CONVENTION) -> LocalOperator:
    """Sender ``i``'s spread: DFT on every digit but ``i``.

    Non-empty ``received`` folds the earlier senders' shift corrections in as a
    flat shift by ``shift_sign * sum(m)``.
    """
    factors = _check_factors(factors)
    _check_index(factors, i, BadSenderIndex)
    d = math.prod(factors)
    total = sum(o.validate(d).m for o in received)
    spread = LocalOperator.from_matrix(_complement_dft(factors, i), label=f"spread{i}")
    if total % d == 0:
        return spread
    return mod_add_gate(d, convention.shift_sign * total).compose(spread)


def bob_correction(d: int, factors: Sequence[int], outcome: BellOutcome) -> LocalOperator:
    """Shift-only correction ``|l + m> -> |l>`` for holders that do not carry the phase."""
    _check_factors(factors, _check_dim(d))
    outcome.validate(d)
    return LocalOperator.monomial((np.arange(d) - outcome.m) % d, label=f"shift-{outcome.m}")


def alice_correction(d: int, outcome: BellOutcome,
                     convention: PhaseConvention = COMMITTED_CONVENTION) -> LocalOperator:
    """Phase-carrying correction ``|l + m> -> omega^(n*l) |l>``."""
    d = _check_dim(d)
    outcome.validate(d)
    source = np.arange(d)
    target = (source - outcome.m) % d
    phases = _omega_table(d)[(convention.bell_phase_sign * outcome.n * target) % d]
    return LocalOperator.monomial(target, phases, label=f"corr{outcome}")


def alice_realignment(factors: Sequence[int], outcomes: Sequence[BellOutcome],
                      convention: PhaseConvention = COMMITTED_CONVENTION) -> LocalOperator:
    """Undo the carries of later senders' shifts into earlier digits.

    After sender ``i`` is corrected the amplitude at label ``l`` belongs to the
    digit values the earlier senders wrote at label ``l + m_i``; tracking those
    offsets gives the permutation that puts every digit back in place.
    """
    factors = _check_factors(factors)
    if len(outcomes) != len(factors):
        raise ConfigInvalid(f"{len(outcomes)} sender outcomes for {len(factors)} senders")
    d = math.prod(factors)
    strides = _strides(factors)
    labels = np.arange(d)

    def digit(j: int, values: np.ndarray) -> np.ndarray:
        return (values // strides[j]) % factors[j]

    owned = [digit(0, labels)]
    for i in range(1, len(factors)):
        shift = convention.shift_sign * outcomes[i].validate(d).m
        moved = (labels + shift) % d
        owned = [values[moved] for values in owned]
        owned.append(digit(i, labels))
    tau = sum(values * p for values, p in zip(owned, strides))
    return LocalOperator.monomial(tau, label="realign")


# ----------------------------------------------------------------------
# Receiver side
# ----------------------------------------------------------------------
def receiver_spread_op(factors: Sequence[int], i: int) -> LocalOperator:
    factors = _check_factors(factors)
    _check_index(factors, i, BadReceiverIndex)
    return LocalOperator.from_matrix(_complement_dft(factors, i), label=f"rspread{i}")


def complement_digits(factors: Sequence[int], i: int, u: int) -> Dict[int, int]:
    """Decode receiver ``i``'s projector outcome into ``{digit: value}`` for digits j != i."""
    factors = _check_factors(factors)
    _check_index(factors, i, BadReceiverIndex)
    others = [j for j in range(1, len(factors) + 1) if j != i]
    count = math.prod(factors[j - 1] for j in others)
    if not 0 <= u < count:
        raise BadOutcome(f"projector outcome {u} outside [0, {count})")
    digits = {}
    for j in others:
        u, digits[j] = divmod(u, factors[j - 1])
    return digits


def _support_offset(factors: Sequence[int], digits: Mapping[int, int]) -> int:
    strides = _strides(factors)
    return sum(v * strides[j - 1] for j, v in digits.items())


def receiver_projectors(factors: Sequence[int], i: int) -> List[LocalOperator]:
    """``P_u = sum_k |k p_i + r(u)><...|`` with ``u`` the mixed-radix complement digits."""
    factors = _check_factors(factors)
    _check_index(factors, i, BadReceiverIndex)
    d = math.prod(factors)
    count = d // factors[i - 1]
    p_i = _strides(factors)[i - 1]
    levels = np.arange(factors[i - 1]) * p_i
    return [
        LocalOperator.support_projector(
            d, levels + _support_offset(factors, complement_digits(factors, i, u)), label=f"P{i}.{u}"
        )
        for u in range(count)
    ]


def receiver_relabel(factors: Sequence[int], i: int, u: int) -> LocalOperator:
    """``|k p_i + r(u)> -> |k>``, completed to a permutation in increasing order."""
    factors = _check_factors(factors)
    _check_index(factors, i, BadReceiverIndex)
    d = math.prod(factors)
    d_i = factors[i - 1]
    p_i = _strides(factors)[i - 1]
    sources = np.arange(d_i) * p_i + _support_offset(factors, complement_digits(factors, i, u))
    perm = np.full(d, -1, dtype=np.int64)
    perm[sources] = np.arange(d_i)
    perm[np.flatnonzero(perm < 0)] = np.arange(d_i, d)
    return LocalOperator.monomial(perm, label=f"relabel{i}.{u}")


def receiver_phase(factors: Sequence[int], i: int, peers: Mapping[int, int],
                   convention: PhaseConvention = COMMITTED_CONVENTION) -> LocalOperator:
    """Remove ``omega_{d_i}^(sum_j u^(j)_i * k)`` left on levels ``k < d_i`` by the peers' spreads.

    ``peers`` maps every other receiver's index to its projector outcome.
    """
    factors = _check_factors(factors)
    _check_index(factors, i, BadReceiverIndex)
    d = math.prod(factors)
    d_i = factors[i - 1]
    exponent = 0
    for j, peer_u in peers.items():
        if j == i:
            raise BadReceiverIndex(f"receiver {i} listed among its own peers")
        exponent += complement_digits(factors, j, peer_u)[i]
    phases = np.ones(d, dtype=np.complex128)
    k = np.arange(d_i)
    phases[:d_i] = _omega_table(d_i)[(convention.receiver_phase_sign * exponent * k) % d_i]
    return LocalOperator.monomial(np.arange(d), phases, label=f"phase{i}")


def receiver_corrections(factors: Sequence[int], i: int, u: int, peers: Mapping[int, int],
                         convention: PhaseConvention = COMMITTED_CONVENTION) -> List[LocalOperator]:
    """``[relabel, phase]`` for receiver ``i`` after its projector outcome ``u``."""
    return [receiver_relabel(factors, i, u), receiver_phase(factors, i, peers, convention)]
