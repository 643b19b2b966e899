"""
Tests for gates, the Bell basis and the protocol operator family.
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from tools.errors import BadOutcome, BadReceiverIndex, BadSenderIndex, ConfigInvalid, DimensionMismatch
from tools.gates import (
    COMMITTED_CONVENTION,
    BellOutcome,
    PhaseConvention,
    alice_correction,
    alice_realignment,
    bell_basis,
    bell_branches,
    bell_measure,
    bell_state,
    bob_correction,
    complement_digits,
    dft,
    embed_input,
    mod_add_gate,
    omega,
    receiver_corrections,
    receiver_phase,
    receiver_projectors,
    receiver_relabel,
    resource_state,
    spread_op,
    xor_gate,
)
from tools.qudit_core import (
    SiteSpec,
    apply_on_sites,
    basis_state,
    check_projector_family,
    detach_sites,
    fidelity,
    random_state,
    tensor,
)


class TestPrimitives(unittest.TestCase):

    def test_omega_quarter_turns_are_exact(self):
        self.assertEqual(omega(4, 1), 1j)
        self.assertEqual(omega(4, 2), -1)
        self.assertEqual(omega(3, 3), 1)
        self.assertEqual(omega(2, -1), -1)
        self.assertAlmostEqual(omega(3, 1), complex(-0.5, math.sqrt(3) / 2))

    def test_shift_and_phase_commutation(self):
        # Z X = omega X Z
        d = 5
        x = mod_add_gate(d, 1).dense()
        z = np.diag([omega(d, l) for l in range(d)])
        np.testing.assert_allclose(z @ x, omega(d, 1) * (x @ z), atol=1e-12)

    def test_dft_columns(self):
        f = dft(3).dense()
        np.testing.assert_allclose(f[:, 0], np.full(3, 3 ** -0.5), atol=1e-12)
        np.testing.assert_allclose(f.conj().T @ f, np.eye(3), atol=1e-12)

    def test_xor_gate(self):
        state = basis_state(SiteSpec((3, 3)), (1, 1))
        out = apply_on_sites(state, [0, 1], xor_gate(3))
        self.assertAlmostEqual(abs(out.amplitude((1, 2))), 1.0)
        out = apply_on_sites(state, [1, 0], xor_gate(3))
        self.assertAlmostEqual(abs(out.amplitude((2, 1))), 1.0)

    def test_xor_gate_has_order_d(self):
        for d in range(2, 7):
            with self.subTest(d=d):
                xor = xor_gate(d)
                np.testing.assert_array_equal(xor.power(d).perm, np.arange(d * d))
                np.testing.assert_allclose(xor.power(d).dense(), np.eye(d * d), atol=1e-12)
                self.assertFalse(np.array_equal(xor.power(d - 1).perm, np.arange(d * d)))


class TestBellBasis(unittest.TestCase):

    def test_orthonormal(self):
        for d in (2, 3, 4, 5):
            basis = bell_basis(d)
            np.testing.assert_allclose(basis.conj().T @ basis, np.eye(d * d), atol=1e-12)

    def test_phi_plus(self):
        state = bell_state(2, BellOutcome(0, 0))
        np.testing.assert_allclose(state.amps, [2 ** -0.5, 0, 0, 2 ** -0.5], atol=1e-15)

    def test_outcome_indexing(self):
        o = BellOutcome(2, 1)
        self.assertEqual(o.index(3), 7)
        self.assertEqual(BellOutcome.from_index(3, 7), o)
        self.assertEqual(str(o), "2:1")
        with self.assertRaises(BadOutcome):
            BellOutcome(3, 0).validate(3)

    def test_measurement_against_a_pair_is_uniform(self):
        rng = np.random.default_rng(1)
        for d in (2, 3, 4):
            state = tensor(random_state(SiteSpec((d,)), rng), resource_state(d, 2))
            for index in range(d * d):
                _, probability, _ = bell_measure(state, 0, 1, outcome=BellOutcome.from_index(d, index))
                self.assertAlmostEqual(probability, 1.0 / d ** 2, places=12)

    def test_branches_match_forced_measurements(self):
        rng = np.random.default_rng(4)
        state = random_state(SiteSpec((3, 3, 2)), rng)
        branches = bell_branches(state, 0, 1)
        self.assertAlmostEqual(sum(p for _, p, _ in branches), 1.0, places=12)
        for outcome, probability, rest in branches[:3]:
            _, forced_p, post = bell_measure(state, 0, 1, outcome=outcome)
            self.assertAlmostEqual(probability, forced_p, places=12)
            expected = detach_sites(post, [0, 1], bell_state(3, outcome))
            self.assertAlmostEqual(fidelity(rest, expected), 1.0, places=12)

    def test_mismatched_pair(self):
        state = basis_state(SiteSpec((2, 3)), (0, 0))
        with self.assertRaises(DimensionMismatch):
            bell_measure(state, 0, 1, rng=np.random.default_rng(0))

    def test_single_pair_teleportation(self):
        # receiver | share | data; the sender measures (data, share)
        d = 3
        rng = np.random.default_rng(8)
        psi = random_state(SiteSpec((d,)), rng)
        state = tensor(resource_state(d, 2), psi)
        for index in range(d * d):
            outcome = BellOutcome.from_index(d, index)
            _, _, post = bell_measure(state, 2, 1, outcome=outcome)
            held = detach_sites(post, [2, 1], bell_state(d, outcome))
            corrected = apply_on_sites(held, [0], alice_correction(d, outcome))
            self.assertAlmostEqual(fidelity(corrected, psi), 1.0, places=12)


class TestSenderOperators(unittest.TestCase):

    def test_resource_state(self):
        state = resource_state(3, 3)
        nonzero = np.flatnonzero(np.abs(state.amps) > 0)
        self.assertEqual(list(nonzero), [0, 13, 26])
        with self.assertRaises(ConfigInvalid):
            resource_state(3, 1)

    def test_resource_state_is_invariant_under_common_shift(self):
        for d, parties in ((2, 2), (2, 4), (3, 3), (4, 2), (5, 3)):
            state = resource_state(d, parties)
            for m in range(d):
                shifted = state
                for site in range(parties):
                    shifted = apply_on_sites(shifted, [site], mod_add_gate(d, m))
                with self.subTest(d=d, parties=parties, m=m):
                    np.testing.assert_allclose(shifted.amps, state.amps, atol=1e-15)

    def test_embed_input(self):
        embedded = embed_input(basis_state(SiteSpec((3,)), (2,)), (2, 3), 2)
        self.assertEqual(embedded.dims, (6,))
        self.assertAlmostEqual(abs(embedded.amps[4]), 1.0)
        with self.assertRaises(BadSenderIndex):
            embed_input(basis_state(SiteSpec((3,)), (2,)), (2, 3), 3)
        with self.assertRaises(DimensionMismatch):
            embed_input(basis_state(SiteSpec((2,)), (1,)), (2, 3), 2)

    def test_folded_spread_is_shifted_spread(self):
        plain = spread_op((2, 2), 2)
        folded = spread_op((2, 2), 2, [BellOutcome(1, 0)])
        np.testing.assert_allclose(folded.dense(), mod_add_gate(4, 1).dense() @ plain.dense(), atol=1e-12)
        self.assertIs(spread_op((2, 2), 2, [BellOutcome(0, 3)]).kind, plain.kind)

    def test_spread_leaves_own_digit(self):
        # sender 2 of (2, 3): DFT on digit 1 only, identity on digit 2
        op = spread_op((2, 3), 2).dense()
        expected = np.kron(np.eye(3), dft(2).dense())
        np.testing.assert_allclose(op, expected, atol=1e-12)

    def test_corrections(self):
        d = 4
        shift = bob_correction(d, (2, 2), BellOutcome(3, 1))
        np.testing.assert_allclose(shift.dense(), mod_add_gate(d, -3).dense(), atol=1e-12)
        corr = alice_correction(d, BellOutcome(1, 1))
        state = basis_state(SiteSpec((d,)), (2,))
        out = apply_on_sites(state, [0], corr)
        self.assertAlmostEqual(out.amplitude((1,)), 1j)

    def test_realignment_without_shifts_is_identity(self):
        tau = alice_realignment((2, 3), [BellOutcome(0, 1), BellOutcome(0, 2)])
        np.testing.assert_array_equal(tau.perm, np.arange(6))
        with self.assertRaises(ConfigInvalid):
            alice_realignment((2, 3), [BellOutcome(0, 0)])

    def test_realignment_is_a_permutation(self):
        for m in range(6):
            tau = alice_realignment((2, 3), [BellOutcome(0, 0), BellOutcome(m, 0)])
            self.assertEqual(sorted(tau.perm.tolist()), list(range(6)))


class TestReceiverOperators(unittest.TestCase):

    def test_complement_digits(self):
        self.assertEqual(complement_digits((2, 3), 1, 2), {2: 2})
        self.assertEqual(complement_digits((2, 2, 2), 2, 3), {1: 1, 3: 1})
        with self.assertRaises(BadOutcome):
            complement_digits((2, 3), 2, 2)
        with self.assertRaises(BadReceiverIndex):
            complement_digits((2, 3), 0, 0)

    def test_projectors_are_complete(self):
        for factors in ((2, 2), (2, 3), (3, 2), (2, 2, 2)):
            d = int(np.prod(factors))
            for i in range(1, len(factors) + 1):
                projectors = receiver_projectors(factors, i)
                self.assertEqual(len(projectors), d // factors[i - 1])
                check_projector_family(projectors, d)

    def test_relabel(self):
        relabel = receiver_relabel((2, 3), 2, 1)
        np.testing.assert_array_equal(relabel.perm, [3, 0, 4, 1, 5, 2])

    def test_phase_only_touches_low_levels(self):
        phase = receiver_phase((2, 3), 2, {1: 1})
        expected = [omega(3, -k) for k in range(3)] + [1, 1, 1]
        np.testing.assert_allclose(phase.phases, expected, atol=1e-12)
        with self.assertRaises(BadReceiverIndex):
            receiver_phase((2, 3), 2, {2: 0})

    def test_corrections_are_relabel_then_phase(self):
        relabel, phase = receiver_corrections((2, 3), 2, 1, {1: 1})
        np.testing.assert_array_equal(relabel.perm, receiver_relabel((2, 3), 2, 1).perm)
        np.testing.assert_allclose(phase.phases, receiver_phase((2, 3), 2, {1: 1}).phases, atol=1e-15)
        # |k p_2 + 1> -> omega_3^(-k) |k>
        for k in range(3):
            state = basis_state(SiteSpec((6,)), (2 * k + 1,))
            for op in (relabel, phase):
                state = apply_on_sites(state, [0], op)
            self.assertAlmostEqual(state.amplitude((k,)), omega(3, -k), places=12)

    def test_corrections_for_every_outcome_are_unitary(self):
        for factors in ((2, 2), (2, 3), (3, 2), (2, 2, 2)):
            d = int(np.prod(factors))
            for i in range(1, len(factors) + 1):
                peers = {j: d // factors[j - 1] - 1 for j in range(1, len(factors) + 1) if j != i}
                for u in range(d // factors[i - 1]):
                    with self.subTest(factors=factors, i=i, u=u):
                        for op in receiver_corrections(factors, i, u, peers):
                            self.assertTrue(op.is_unitary())


class TestPhaseConvention(unittest.TestCase):

    def test_committed_values(self):
        self.assertEqual(COMMITTED_CONVENTION.as_dict(),
                         {"shift_sign": 1, "bell_phase_sign": 1, "receiver_phase_sign": -1})

    def test_flipped_and_fields(self):
        flipped = COMMITTED_CONVENTION.flipped()
        self.assertEqual(flipped, PhaseConvention(-1, -1, 1))
        self.assertEqual(COMMITTED_CONVENTION.with_fields(shift_sign=-1).shift_sign, -1)

    def test_signs_are_validated(self):
        with self.assertRaises(ConfigInvalid):
            PhaseConvention(shift_sign=0)


if __name__ == '__main__':
    unittest.main()
