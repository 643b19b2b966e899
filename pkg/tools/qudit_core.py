"""Mixed-radix pure-state engine.

A register is an ordered list of sites with level counts d_1..d_K.  Site 1 has
the lowest stride: the flat basis index of digits (k_1..k_K) is
``sum(k_i * p_i)`` with ``p_1 = 1`` and ``p_i = d_1 * ... * d_{i-1}``.  The
same convention is used for the local index of an operator acting on a list of
sites: the first listed site is the least significant digit.

States and operators are immutable values; every operation returns a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tools.errors import (
    BadOutcome,
    CapacityExceeded,
    BadDimension,
    DigitOutOfRange,
    DimensionMismatch,
    IncompleteProjectorFamily,
    IndexOutOfRange,
    NonUnitary,
    NotNormalizable,
    ZeroProbabilityBranch,
)
from tools.settings import get_settings

NORM_TOL = 1e-9
RENORM_WINDOW = 1e-6
ZERO_NORM = 1e-12
ZERO_PROBABILITY = 1e-12
UNITARY_TOL = 1e-10

DigitTuple = Tuple[int, ...]


# ----------------------------------------------------------------------
# Site layout
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SiteSpec:
    """Ordered per-site level counts with derived strides."""

    dims: Tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims:
            raise BadDimension("a register needs at least one site")
        for d in dims:
            if d < 2:
                raise BadDimension(f"every site needs at least 2 levels, got {d}")
        total = math.prod(dims)
        limit = get_settings().max_dim
        if total > limit:
            raise CapacityExceeded(f"register dimension {total} exceeds the maximum {limit}")

    @cached_property
    def strides(self) -> Tuple[int, ...]:
        strides = [1]
        for d in self.dims[:-1]:
            strides.append(strides[-1] * d)
        return tuple(strides)

    @cached_property
    def total(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    def concat(self, other: "SiteSpec") -> "SiteSpec":
        return SiteSpec(self.dims + other.dims)

    def without(self, sites: Iterable[int]) -> Optional["SiteSpec"]:
        drop = set(sites)
        kept = tuple(d for s, d in enumerate(self.dims) if s not in drop)
        return SiteSpec(kept) if kept else None

    def replace(self, site: int, dim: int) -> "SiteSpec":
        dims = list(self.dims)
        dims[site] = dim
        return SiteSpec(tuple(dims))


def encode_digits(spec: SiteSpec, digits: Sequence[int]) -> int:
    """Flat index ``sum(k_i * p_i)`` of a digit tuple."""
    if len(digits) != len(spec.dims):
        raise DigitOutOfRange(f"expected {len(spec.dims)} digits, got {len(digits)}")
    index = 0
    for k, d, p in zip(digits, spec.dims, spec.strides):
        if not 0 <= k < d:
            raise DigitOutOfRange(f"digit {k} outside [0, {d})")
        index += int(k) * p
    return index


def decode_digits(spec: SiteSpec, k: int) -> DigitTuple:
    if not 0 <= k < spec.total:
        raise IndexOutOfRange(f"index {k} outside [0, {spec.total})")
    digits = []
    for d in spec.dims:
        k, r = divmod(int(k), d)
        digits.append(r)
    return tuple(digits)


# ----------------------------------------------------------------------
# States
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class StateVector:
    """Unit-norm amplitude array over a SiteSpec.

    Construct through :func:`make_state` unless the amplitudes are known to be
    normalized already.
    """

    spec: SiteSpec
    amps: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amps, dtype=np.complex128).reshape(-1)
        if amps.shape[0] != self.spec.total:
            raise DimensionMismatch(
                f"{amps.shape[0]} amplitudes for a register of dimension {self.spec.total}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.spec.dims

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def amplitude(self, digits: Sequence[int]) -> complex:
        return complex(self.amps[encode_digits(self.spec, digits)])

    def reshaped(self, spec: SiteSpec) -> "StateVector":
        """The same amplitudes read on another layout of equal total dimension."""
        if spec.total != self.spec.total:
            raise DimensionMismatch(f"cannot read dimension {self.spec.total} as {spec.dims}")
        return StateVector(spec, self.amps)

    def flattened(self) -> "StateVector":
        return self.reshaped(SiteSpec((self.spec.total,)))

    def __repr__(self) -> str:
        return f"StateVector(dims={self.dims}, norm={self.norm():.12f})"


def make_state(spec: SiteSpec, amps: Union[Sequence[complex], np.ndarray]) -> StateVector:
    arr = np.array(amps, dtype=np.complex128).reshape(-1)
    if arr.shape[0] != spec.total:
        raise DimensionMismatch(f"{arr.shape[0]} amplitudes for dims {spec.dims}")
    if not np.all(np.isfinite(arr)):
        raise NotNormalizable("amplitudes must be finite")
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM:
        raise NotNormalizable("amplitude vector is zero")
    if abs(norm - 1.0) > RENORM_WINDOW:
        raise NotNormalizable(f"norm {norm:.9g} outside the renormalization window")
    if norm != 1.0:
        arr = arr / norm
    return StateVector(spec, arr)


def basis_state(spec: SiteSpec, digits: Sequence[int]) -> StateVector:
    amps = np.zeros(spec.total, dtype=np.complex128)
    amps[encode_digits(spec, digits)] = 1.0
    return StateVector(spec, amps)


def random_state(spec: SiteSpec, rng: np.random.Generator) -> StateVector:
    amps = rng.normal(size=spec.total) + 1j * rng.normal(size=spec.total)
    return StateVector(spec, amps / np.linalg.norm(amps))


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """``a ⊗ b`` with the sites of ``a`` first (lower strides)."""
    spec = a.spec.concat(b.spec)
    return StateVector(spec, np.kron(b.amps, a.amps))


def inner_product(a: StateVector, b: StateVector) -> complex:
    """Conjugate-linear in ``a``."""
    if a.spec.dims != b.spec.dims:
        raise DimensionMismatch(f"{a.spec.dims} vs {b.spec.dims}")
    return complex(np.vdot(a.amps, b.amps))


def fidelity(a: StateVector, b: StateVector) -> float:
    return float(min(1.0, max(0.0, abs(inner_product(a, b)) ** 2)))


# ----------------------------------------------------------------------
# Selected-sites views
# ----------------------------------------------------------------------
def _check_sites(spec: SiteSpec, sites: Sequence[int]) -> Tuple[int, ...]:
    sites = tuple(int(s) for s in sites)
    if not sites:
        raise DimensionMismatch("no sites selected")
    if len(set(sites)) != len(sites):
        raise DimensionMismatch(f"repeated site in {sites}")
    for s in sites:
        if not 0 <= s < len(spec.dims):
            raise DimensionMismatch(f"site {s} not in a register of {len(spec.dims)} sites")
    return sites


def _moved_axes(spec: SiteSpec, sites: Sequence[int]) -> List[int]:
    # numpy axes of the reshaped amplitudes, most significant selected site first
    k = len(spec.dims)
    return [k - 1 - s for s in reversed(sites)]


def split_sites(state: StateVector, sites: Sequence[int]) -> Tuple[np.ndarray, Optional[SiteSpec]]:
    """Return the (selected × remaining) amplitude matrix and the remaining layout."""
    spec = state.spec
    sites = _check_sites(spec, sites)
    psi = state.amps.reshape(tuple(reversed(spec.dims)))
    axes = _moved_axes(spec, sites)
    psi = np.moveaxis(psi, axes, list(range(len(sites))))
    selected = math.prod(spec.dims[s] for s in sites)
    return psi.reshape(selected, -1), spec.without(sites)


def merge_sites(matrix: np.ndarray, sites: Sequence[int], spec: SiteSpec) -> np.ndarray:
    """Inverse of :func:`split_sites`; returns flat amplitudes on ``spec``."""
    sites = _check_sites(spec, sites)
    axes = _moved_axes(spec, sites)
    reversed_dims = tuple(reversed(spec.dims))
    leading = tuple(spec.dims[s] for s in reversed(sites))
    rest = tuple(d for ax, d in enumerate(reversed_dims) if ax not in axes)
    psi = np.asarray(matrix).reshape(leading + rest)
    psi = np.moveaxis(psi, list(range(len(sites))), axes)
    return psi.reshape(-1)


def split_batch(amps: np.ndarray, spec: SiteSpec, sites: Sequence[int]) -> np.ndarray:
    """(branch × selected × remaining) blocks of a ``(branches, spec.total)`` batch."""
    sites = _check_sites(spec, sites)
    count = amps.shape[0]
    psi = amps.reshape((count,) + tuple(reversed(spec.dims)))
    psi = np.moveaxis(psi, [a + 1 for a in _moved_axes(spec, sites)], list(range(1, len(sites) + 1)))
    selected = math.prod(spec.dims[s] for s in sites)
    return psi.reshape(count, selected, -1)


def merge_batch(blocks: np.ndarray, spec: SiteSpec, sites: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`split_batch`."""
    sites = _check_sites(spec, sites)
    axes = _moved_axes(spec, sites)
    reversed_dims = tuple(reversed(spec.dims))
    leading = tuple(spec.dims[s] for s in reversed(sites))
    rest = tuple(d for ax, d in enumerate(reversed_dims) if ax not in axes)
    count = blocks.shape[0]
    psi = np.asarray(blocks).reshape((count,) + leading + rest)
    psi = np.moveaxis(psi, list(range(1, len(sites) + 1)), [a + 1 for a in axes])
    return psi.reshape(count, -1)


def detach_sites(state: StateVector, sites: Sequence[int], local: StateVector) -> StateVector:
    """Remove ``sites`` from a product state ``local ⊗ rest`` and return ``rest``."""
    matrix, rest = split_sites(state, sites)
    if rest is None:
        raise DimensionMismatch("cannot detach every site of a register")
    if local.spec.total != matrix.shape[0]:
        raise DimensionMismatch(f"local state of dimension {local.spec.total} for {matrix.shape[0]} levels")
    residual = local.amps.conj() @ matrix
    weight = float(np.vdot(residual, residual).real)
    if abs(weight - 1.0) > NORM_TOL:
        raise NotNormalizable(f"register is not a product with the detached state (weight {weight:.3e})")
    return StateVector(rest, residual)


def narrow_site(state: StateVector, site: int, dim: int) -> StateVector:
    """Keep only the first ``dim`` levels of ``site``; the rest must be empty."""
    spec = state.spec
    (site,) = _check_sites(spec, [site])
    if dim > spec.dims[site]:
        raise DimensionMismatch(f"cannot widen site {site} from {spec.dims[site]} to {dim}")
    axis = len(spec.dims) - 1 - site
    psi = state.amps.reshape(tuple(reversed(spec.dims)))
    kept = np.take(psi, range(dim), axis=axis)
    leaked = 1.0 - float(np.vdot(kept, kept).real)
    if leaked > NORM_TOL:
        raise NotNormalizable(f"site {site} has weight {leaked:.3e} above level {dim - 1}")
    return StateVector(spec.replace(site, dim), kept.reshape(-1))


def permute_sites(state: StateVector, order: Sequence[int]) -> StateVector:
    """New site ``t`` is old site ``order[t]``."""
    spec = state.spec
    k = len(spec.dims)
    if sorted(order) != list(range(k)):
        raise DimensionMismatch(f"{order} is not a permutation of {k} sites")
    psi = state.amps.reshape(tuple(reversed(spec.dims)))
    psi = np.transpose(psi, [k - 1 - order[k - 1 - a] for a in range(k)])
    return StateVector(SiteSpec(tuple(spec.dims[s] for s in order)), psi.reshape(-1))


def site_overlap(state: StateVector, sites: Sequence[int], target: StateVector) -> float:
    """``|| (<target| ⊗ I) |psi> ||^2`` for ``target`` living on ``sites``."""
    matrix, _ = split_sites(state, sites)
    if target.spec.total != matrix.shape[0]:
        raise DimensionMismatch(f"target dimension {target.spec.total} for {matrix.shape[0]} levels")
    residual = target.amps.conj() @ matrix
    return float(min(1.0, np.vdot(residual, residual).real))


# ----------------------------------------------------------------------
# Local operators
# ----------------------------------------------------------------------
class OperatorKind(Enum):
    DENSE = "dense"
    MONOMIAL = "monomial"
    SUPPORT = "support"      # projector onto a set of basis indices
    RANK_ONE = "rank_one"    # projector |v><v|


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """Operator on the joint space of a list of sites.

    Monomial operators map ``|j> -> phases[j] |perm[j]>``.
    """

    dim: int
    kind: OperatorKind
    matrix: Optional[np.ndarray] = None
    perm: Optional[np.ndarray] = None
    phases: Optional[np.ndarray] = None
    vector: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    label: str = ""

    # -- constructors --------------------------------------------------
    @classmethod
    def from_matrix(cls, matrix: np.ndarray, label: str = "") -> "LocalOperator":
        matrix = np.array(matrix, dtype=np.complex128)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"operator matrix must be square, got {matrix.shape}")
        matrix.setflags(write=False)
        return cls(dim=matrix.shape[0], kind=OperatorKind.DENSE, matrix=matrix, label=label)

    @classmethod
    def monomial(cls, perm: Sequence[int], phases: Optional[Sequence[complex]] = None,
                 label: str = "") -> "LocalOperator":
        perm = np.array(perm, dtype=np.int64)
        dim = perm.shape[0]
        if not np.array_equal(np.sort(perm), np.arange(dim)):
            raise DimensionMismatch("monomial targets must form a permutation")
        phases = np.ones(dim, dtype=np.complex128) if phases is None else np.array(phases, dtype=np.complex128)
        if phases.shape != (dim,):
            raise DimensionMismatch(f"{phases.shape[0]} phases for dimension {dim}")
        perm.setflags(write=False)
        phases.setflags(write=False)
        return cls(dim=dim, kind=OperatorKind.MONOMIAL, perm=perm, phases=phases, label=label)

    @classmethod
    def support_projector(cls, dim: int, indices: Iterable[int], label: str = "") -> "LocalOperator":
        support = np.array(sorted(set(int(i) for i in indices)), dtype=np.int64)
        if support.size and (support[0] < 0 or support[-1] >= dim):
            raise IndexOutOfRange(f"projector support outside [0, {dim})")
        support.setflags(write=False)
        return cls(dim=dim, kind=OperatorKind.SUPPORT, support=support, label=label)

    @classmethod
    def rank_one(cls, vector: np.ndarray, label: str = "") -> "LocalOperator":
        vector = np.array(vector, dtype=np.complex128).reshape(-1)
        vector.setflags(write=False)
        return cls(dim=vector.shape[0], kind=OperatorKind.RANK_ONE, vector=vector, label=label)

    @classmethod
    def identity(cls, dim: int) -> "LocalOperator":
        return cls.monomial(np.arange(dim), label="I")

    # -- views ---------------------------------------------------------
    @property
    def is_monomial(self) -> bool:
        return self.kind is OperatorKind.MONOMIAL

    @property
    def is_projector(self) -> bool:
        return self.kind in (OperatorKind.SUPPORT, OperatorKind.RANK_ONE)

    @cached_property
    def _dense(self) -> np.ndarray:
        if self.kind is OperatorKind.DENSE:
            return self.matrix
        if self.kind is OperatorKind.MONOMIAL:
            out = np.zeros((self.dim, self.dim), dtype=np.complex128)
            out[self.perm, np.arange(self.dim)] = self.phases
        elif self.kind is OperatorKind.SUPPORT:
            out = np.zeros((self.dim, self.dim), dtype=np.complex128)
            out[self.support, self.support] = 1.0
        else:
            out = np.outer(self.vector, self.vector.conj())
        out.setflags(write=False)
        return out

    def dense(self) -> np.ndarray:
        return self._dense

    # -- algebra -------------------------------------------------------
    def adjoint(self) -> "LocalOperator":
        if self.is_projector:
            return self
        if self.is_monomial:
            inverse = np.empty_like(self.perm)
            inverse[self.perm] = np.arange(self.dim)
            phases = np.empty_like(self.phases)
            phases[self.perm] = self.phases.conj()
            return LocalOperator.monomial(inverse, phases, label=f"{self.label}^dag")
        return LocalOperator.from_matrix(self.matrix.conj().T, label=f"{self.label}^dag")

    def compose(self, other: "LocalOperator") -> "LocalOperator":
        """``self ∘ other``: apply ``other`` first."""
        if self.dim != other.dim:
            raise DimensionMismatch(f"cannot compose dimensions {self.dim} and {other.dim}")
        label = f"{self.label}*{other.label}"
        if self.is_monomial and other.is_monomial:
            perm = self.perm[other.perm]
            phases = other.phases * self.phases[other.perm]
            return LocalOperator.monomial(perm, phases, label=label)
        return LocalOperator.from_matrix(self.dense() @ other.dense(), label=label)

    def power(self, k: int) -> "LocalOperator":
        result = LocalOperator.identity(self.dim)
        for _ in range(k):
            result = self.compose(result)
        return result

    def unitarity_error(self) -> float:
        if self.is_monomial:
            return float(np.max(np.abs(np.abs(self.phases) - 1.0))) if self.dim else 0.0
        u = self.dense()
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))

    def is_unitary(self, tol: float = UNITARY_TOL) -> bool:
        return not self.is_projector and self.unitarity_error() < tol

    def check_unitary(self, tol: float = UNITARY_TOL) -> None:
        if not self.is_unitary(tol):
            raise NonUnitary(f"operator {self.label or self.kind.value} is not unitary")

    # -- application ---------------------------------------------------
    def act(self, matrix: np.ndarray, dense: bool = False) -> np.ndarray:
        """Apply to the rows of a (local × rest) amplitude matrix."""
        if dense or self.kind is OperatorKind.DENSE:
            return self.dense() @ matrix
        if self.kind is OperatorKind.MONOMIAL:
            out = np.empty_like(matrix)
            out[self.perm] = self.phases[:, None] * matrix
            return out
        if self.kind is OperatorKind.SUPPORT:
            out = np.zeros_like(matrix)
            out[self.support] = matrix[self.support]
            return out
        coefficients = self.vector.conj() @ matrix
        return np.outer(self.vector, coefficients)

    def act_batch(self, blocks: np.ndarray) -> np.ndarray:
        """Apply to every (local × rest) block of a (branch × local × rest) array."""
        if self.kind is OperatorKind.DENSE:
            return np.matmul(self.matrix, blocks)
        if self.kind is OperatorKind.MONOMIAL:
            out = np.empty_like(blocks)
            out[:, self.perm] = self.phases[None, :, None] * blocks
            return out
        if self.kind is OperatorKind.SUPPORT:
            out = np.zeros_like(blocks)
            out[:, self.support] = blocks[:, self.support]
            return out
        coefficients = np.einsum("j,bjr->br", self.vector.conj(), blocks)
        return np.einsum("i,br->bir", self.vector, coefficients)


def _check_application(spec: SiteSpec, sites: Sequence[int], op: LocalOperator) -> Tuple[int, ...]:
    sites = _check_sites(spec, sites)
    local = math.prod(spec.dims[s] for s in sites)
    if op.dim != local:
        raise DimensionMismatch(f"operator of dimension {op.dim} on sites of dimension {local}")
    if get_settings().verify and not op.is_projector:
        op.check_unitary()
    return sites


def apply_on_sites(state: StateVector, sites: Sequence[int], op: LocalOperator,
                   dense: bool = False) -> StateVector:
    """Apply ``op`` along ``sites``; ``dense=True`` forces the materialized matrix."""
    spec = state.spec
    sites = _check_application(spec, sites, op)
    matrix, _ = split_sites(state, sites)
    return StateVector(spec, merge_sites(op.act(matrix, dense=dense), sites, spec))


def apply_on_batch(amps: np.ndarray, spec: SiteSpec, sites: Sequence[int],
                   op: LocalOperator) -> np.ndarray:
    """:func:`apply_on_sites` for every row of a ``(branches, spec.total)`` batch."""
    sites = _check_application(spec, sites, op)
    return merge_batch(op.act_batch(split_batch(amps, spec, sites)), spec, sites)


# ----------------------------------------------------------------------
# Projective measurement
# ----------------------------------------------------------------------
def check_projector_family(projectors: Sequence[LocalOperator], dim: int,
                           tol: float = NORM_TOL) -> None:
    """Raise unless the family is Hermitian, idempotent, orthogonal and complete."""
    if not projectors:
        raise IncompleteProjectorFamily("empty projector family")
    if any(p.dim != dim for p in projectors):
        raise DimensionMismatch(f"projector dimension differs from {dim}")
    kinds = {p.kind for p in projectors}
    if kinds == {OperatorKind.SUPPORT}:
        counts = np.zeros(dim, dtype=np.int64)
        for p in projectors:
            counts[p.support] += 1
        if not np.all(counts == 1):
            raise IncompleteProjectorFamily("supports must partition the basis")
        return
    if kinds == {OperatorKind.RANK_ONE}:
        if len(projectors) != dim:
            raise IncompleteProjectorFamily(f"{len(projectors)} rank-one projectors for dimension {dim}")
        vectors = np.array([p.vector for p in projectors])
        gram = vectors.conj() @ vectors.T
        if np.max(np.abs(gram - np.eye(dim))) > tol:
            raise IncompleteProjectorFamily("rank-one projectors are not orthonormal")
        return
    total = np.zeros((dim, dim), dtype=np.complex128)
    for p in projectors:
        m = p.dense()
        if np.max(np.abs(m - m.conj().T)) > tol or np.max(np.abs(m @ m - m)) > tol:
            raise IncompleteProjectorFamily(f"{p.label or 'operator'} is not an orthogonal projector")
        total += m
    if np.max(np.abs(total - np.eye(dim))) > tol:
        raise IncompleteProjectorFamily("projectors do not sum to the identity")


def _outcome_weights(matrix: np.ndarray, projectors: Sequence[LocalOperator]) -> np.ndarray:
    weights = np.empty(len(projectors))
    for idx, p in enumerate(projectors):
        if p.kind is OperatorKind.SUPPORT:
            block = matrix[p.support]
            weights[idx] = float(np.vdot(block, block).real)
        elif p.kind is OperatorKind.RANK_ONE:
            c = p.vector.conj() @ matrix
            weights[idx] = float(np.vdot(c, c).real)
        else:
            projected = p.dense() @ matrix
            weights[idx] = float(np.vdot(projected, projected).real)
    return weights


def _collapse(state: StateVector, sites: Sequence[int], matrix: np.ndarray,
              projector: LocalOperator, probability: float) -> StateVector:
    projected = projector.act(matrix) / math.sqrt(probability)
    return StateVector(state.spec, merge_sites(projected, sites, state.spec))


def measure_with_projectors(state: StateVector, sites: Sequence[int],
                            projectors: Sequence[LocalOperator], *,
                            rng: Optional[np.random.Generator] = None,
                            outcome: Optional[int] = None) -> Tuple[int, float, StateVector]:
    """Projective measurement on ``sites``.

    Pass ``rng`` to sample an outcome (inverse CDF over one uniform draw) or
    ``outcome`` to force one.  Returns ``(outcome, probability, post_state)``.
    """
    if (rng is None) == (outcome is None):
        raise ValueError("pass exactly one of rng= or outcome=")
    sites = _check_sites(state.spec, sites)
    matrix, _ = split_sites(state, sites)
    check_projector_family(projectors, matrix.shape[0])
    weights = _outcome_weights(matrix, projectors)
    if outcome is None:
        cdf = np.cumsum(weights)
        draw = rng.random() * cdf[-1]
        outcome = int(min(np.searchsorted(cdf, draw, side="right"), len(weights) - 1))
        while weights[outcome] < ZERO_PROBABILITY and outcome > 0:
            outcome -= 1
    elif not 0 <= outcome < len(projectors):
        raise BadOutcome(f"outcome {outcome} outside [0, {len(projectors)})")
    probability = float(weights[outcome])
    if probability < ZERO_PROBABILITY:
        raise ZeroProbabilityBranch(f"outcome {outcome} has probability {probability:.3e}")
    return outcome, probability, _collapse(state, sites, matrix, projectors[outcome], probability)


def enumerate_outcomes(state: StateVector, sites: Sequence[int],
                       projectors: Sequence[LocalOperator]) -> List[Tuple[int, float, StateVector]]:
    """Every nonzero-probability outcome of a projective measurement, in index order."""
    sites = _check_sites(state.spec, sites)
    matrix, _ = split_sites(state, sites)
    check_projector_family(projectors, matrix.shape[0])
    weights = _outcome_weights(matrix, projectors)
    return [
        (idx, float(w), _collapse(state, sites, matrix, projectors[idx], float(w)))
        for idx, w in enumerate(weights)
        if w >= ZERO_PROBABILITY
    ]


# ----------------------------------------------------------------------
# State files
# ----------------------------------------------------------------------
def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_states(states: Sequence[StateVector], labels: Optional[Sequence[str]] = None) -> str:
    blocks = []
    for idx, state in enumerate(states):
        lines = []
        if labels is not None:
            lines.append(f"# {labels[idx]}")
        lines.append("dims: " + ",".join(str(d) for d in state.dims))
        lines.extend(f"{_fmt(a.real)} {_fmt(a.imag)}" for a in state.amps)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def loads_states(text: str) -> List[StateVector]:
    docs: List[Tuple[SiteSpec, List[complex]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("dims:"):
            try:
                dims = tuple(int(tok) for tok in line[5:].split(","))
            except ValueError:
                raise DimensionMismatch(f"line {lineno}: bad dims header {line!r}") from None
            docs.append((SiteSpec(dims), []))
            continue
        if not docs:
            raise DimensionMismatch(f"line {lineno}: amplitude before any dims header")
        parts = line.split()
        if len(parts) != 2:
            raise DimensionMismatch(f"line {lineno}: expected 're im', got {line!r}")
        try:
            docs[-1][1].append(complex(float(parts[0]), float(parts[1])))
        except ValueError:
            raise DimensionMismatch(f"line {lineno}: amplitudes must be numbers, got {line!r}") from None
    return [make_state(spec, amps) for spec, amps in docs]


def write_states(path: Path, states: Sequence[StateVector], labels: Optional[Sequence[str]] = None) -> None:
    Path(path).write_text(dumps_states(states, labels), encoding="utf-8")


def read_states(path: Path) -> List[StateVector]:
    return loads_states(Path(path).read_text(encoding="utf-8"))
