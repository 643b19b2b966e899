"""
Tests for the mixed-radix state engine.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from tools.errors import (
    BadDimension,
    BadOutcome,
    CapacityExceeded,
    DigitOutOfRange,
    DimensionMismatch,
    IncompleteProjectorFamily,
    IndexOutOfRange,
    NonUnitary,
    NotNormalizable,
    ZeroProbabilityBranch,
)
from tools.gates import dft, mod_add_gate, phase_gate, receiver_projectors
from tools.qudit_core import (
    LocalOperator,
    SiteSpec,
    StateVector,
    apply_on_batch,
    apply_on_sites,
    basis_state,
    check_projector_family,
    decode_digits,
    detach_sites,
    dumps_states,
    encode_digits,
    enumerate_outcomes,
    fidelity,
    loads_states,
    make_state,
    measure_with_projectors,
    merge_batch,
    narrow_site,
    permute_sites,
    random_state,
    read_states,
    site_overlap,
    split_batch,
    split_sites,
    tensor,
    write_states,
)
from tools.settings import override


class TestSiteSpec(unittest.TestCase):

    def test_strides_and_total(self):
        spec = SiteSpec((2, 3, 4))
        self.assertEqual(spec.strides, (1, 2, 6))
        self.assertEqual(spec.total, 24)
        self.assertEqual(len(spec), 3)

    def test_encode_decode(self):
        spec = SiteSpec((2, 3))
        self.assertEqual(encode_digits(spec, (1, 2)), 5)
        self.assertEqual(decode_digits(spec, 5), (1, 2))
        self.assertEqual(decode_digits(spec, 0), (0, 0))

    def test_encode_decode_is_a_bijection(self):
        for dims in ((7,), (2, 3, 5, 7), (3,) * 8, (10, 10, 100), (100, 100)):
            spec = SiteSpec(dims)
            with self.subTest(dims=dims):
                decoded = [decode_digits(spec, k) for k in range(spec.total)]
                self.assertEqual(len(set(decoded)), spec.total)
                self.assertEqual([encode_digits(spec, digits) for digits in decoded], list(range(spec.total)))
                # first listed site varies fastest
                columns = np.unravel_index(np.arange(spec.total), dims, order="F")
                np.testing.assert_array_equal(np.array(decoded), np.stack(columns, axis=1))

    def test_rejects_single_level_site(self):
        with self.assertRaises(BadDimension):
            SiteSpec((2, 1))

    def test_digit_and_index_ranges(self):
        spec = SiteSpec((2, 3))
        with self.assertRaises(DigitOutOfRange):
            encode_digits(spec, (2, 0))
        with self.assertRaises(DigitOutOfRange):
            encode_digits(spec, (0,))
        with self.assertRaises(IndexOutOfRange):
            decode_digits(spec, 6)

    def test_capacity_limit(self):
        with override(max_dim=16):
            SiteSpec((4, 4))
            with self.assertRaises(CapacityExceeded):
                SiteSpec((4, 5))

    def test_without_and_replace(self):
        spec = SiteSpec((2, 3, 5))
        self.assertEqual(spec.without([1]).dims, (2, 5))
        self.assertIsNone(spec.without([0, 1, 2]))
        self.assertEqual(spec.replace(2, 2).dims, (2, 3, 2))


class TestStates(unittest.TestCase):

    def test_make_state_renormalizes_inside_window(self):
        state = make_state(SiteSpec((2,)), [1.0 + 1e-7, 0.0])
        self.assertAlmostEqual(state.norm(), 1.0, places=15)

    def test_make_state_rejects_bad_norms(self):
        with self.assertRaises(NotNormalizable):
            make_state(SiteSpec((2,)), [0.0, 0.0])
        with self.assertRaises(NotNormalizable):
            make_state(SiteSpec((2,)), [1.0, 1.0])
        with self.assertRaises(NotNormalizable):
            make_state(SiteSpec((2,)), [np.nan, 1.0])
        with self.assertRaises(DimensionMismatch):
            make_state(SiteSpec((2,)), [1.0, 0.0, 0.0])

    def test_amplitudes_are_read_only(self):
        state = basis_state(SiteSpec((3,)), (1,))
        with self.assertRaises(ValueError):
            state.amps[0] = 1.0

    def test_tensor_puts_first_operand_on_low_strides(self):
        a = basis_state(SiteSpec((2,)), (1,))
        b = basis_state(SiteSpec((3,)), (2,))
        joint = tensor(a, b)
        self.assertEqual(joint.dims, (2, 3))
        self.assertAlmostEqual(abs(joint.amplitude((1, 2))), 1.0)
        self.assertAlmostEqual(abs(joint.amps[5]), 1.0)

    def test_tensor_is_associative(self):
        rng = np.random.default_rng(21)
        for dims in (((2,), (3,), (2,)), ((3, 2), (2,), (4,)), ((2,), (2, 2), (5,))):
            a, b, c = (random_state(SiteSpec(d), rng) for d in dims)
            left, right = tensor(tensor(a, b), c), tensor(a, tensor(b, c))
            self.assertEqual(left.dims, right.dims)
            np.testing.assert_allclose(left.amps, right.amps, atol=1e-15)

    def test_fidelity_ignores_global_phase(self):
        rng = np.random.default_rng(3)
        state = random_state(SiteSpec((3, 2)), rng)
        rotated = StateVector(state.spec, state.amps * np.exp(0.7j))
        self.assertAlmostEqual(fidelity(state, rotated), 1.0, places=12)

    def test_permute_sites(self):
        state = basis_state(SiteSpec((2, 3)), (1, 2))
        swapped = permute_sites(state, [1, 0])
        self.assertEqual(swapped.dims, (3, 2))
        self.assertAlmostEqual(abs(swapped.amplitude((2, 1))), 1.0)
        with self.assertRaises(DimensionMismatch):
            permute_sites(state, [0, 0])

    def test_narrow_site(self):
        state = basis_state(SiteSpec((4, 2)), (1, 1))
        narrowed = narrow_site(state, 0, 2)
        self.assertEqual(narrowed.dims, (2, 2))
        self.assertAlmostEqual(abs(narrowed.amplitude((1, 1))), 1.0)
        with self.assertRaises(NotNormalizable):
            narrow_site(basis_state(SiteSpec((4,)), (3,)), 0, 2)

    def test_detach_and_overlap(self):
        rng = np.random.default_rng(5)
        a = random_state(SiteSpec((3,)), rng)
        b = random_state(SiteSpec((2,)), rng)
        joint = tensor(a, b)
        rest = detach_sites(joint, [0], a)
        self.assertAlmostEqual(fidelity(rest, b), 1.0, places=12)
        self.assertAlmostEqual(site_overlap(joint, [1], b), 1.0, places=12)
        other = basis_state(SiteSpec((3,)), (0,))
        if fidelity(a, other) < 0.99:
            with self.assertRaises(NotNormalizable):
                detach_sites(joint, [0], other)


class TestLocalOperators(unittest.TestCase):

    def test_apply_shift_on_one_site(self):
        state = basis_state(SiteSpec((2, 3)), (1, 0))
        shifted = apply_on_sites(state, [1], mod_add_gate(3, 1))
        self.assertAlmostEqual(abs(shifted.amplitude((1, 1))), 1.0)

    def test_monomial_algebra(self):
        x = mod_add_gate(5, 2)
        z = phase_gate(5, 3)
        np.testing.assert_allclose(x.compose(x.adjoint()).dense(), np.eye(5), atol=1e-12)
        np.testing.assert_allclose(x.power(5).dense(), np.eye(5), atol=1e-12)
        np.testing.assert_allclose(z.compose(x).dense(), z.dense() @ x.dense(), atol=1e-12)
        self.assertTrue(z.compose(x).is_monomial)

    def test_monomial_and_dense_application_agree(self):
        rng = np.random.default_rng(11)
        state = random_state(SiteSpec((2, 3, 2)), rng)
        op = phase_gate(6, 1).compose(mod_add_gate(6, 4))
        fast = apply_on_sites(state, [2, 1], op)
        slow = apply_on_sites(state, [2, 1], op, dense=True)
        np.testing.assert_allclose(fast.amps, slow.amps, atol=1e-12)

    def test_operator_dimension_must_match_sites(self):
        state = basis_state(SiteSpec((2, 3)), (0, 0))
        with self.assertRaises(DimensionMismatch):
            apply_on_sites(state, [0], dft(3))

    def test_non_unitary(self):
        op = LocalOperator.from_matrix(np.array([[1, 1], [0, 1]]))
        self.assertFalse(op.is_unitary())
        with self.assertRaises(NonUnitary):
            op.check_unitary()
        state = basis_state(SiteSpec((2,)), (0,))
        with override(verify=True):
            with self.assertRaises(NonUnitary):
                apply_on_sites(state, [0], op)

    def test_dft_is_unitary(self):
        for d in (2, 3, 4, 6):
            self.assertLess(dft(d).unitarity_error(), 1e-12)

    def test_application_preserves_norm(self):
        rng = np.random.default_rng(17)
        layouts = ((2, 3), (3, 2, 2), (4, 2, 3), (2, 2, 2, 2))
        for trial in range(40):
            dims = layouts[trial % len(layouts)]
            state = random_state(SiteSpec(dims), rng)
            count = int(rng.integers(1, len(dims) + 1))
            sites = [int(s) for s in rng.permutation(len(dims))[:count]]
            n = int(np.prod([dims[s] for s in sites]))
            q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
            for op in (LocalOperator.from_matrix(q), phase_gate(n, 1).compose(mod_add_gate(n, trial))):
                with self.subTest(trial=trial, sites=sites, op=op.kind):
                    self.assertAlmostEqual(apply_on_sites(state, sites, op).norm(), 1.0, places=12)

    def test_batch_application_matches_single_states(self):
        rng = np.random.default_rng(19)
        spec = SiteSpec((2, 3, 2))
        states = [random_state(spec, rng) for _ in range(4)]
        batch = np.stack([s.amps for s in states])
        n = 4
        q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        for op in (LocalOperator.from_matrix(q), mod_add_gate(4, 3),
                   LocalOperator.support_projector(4, [1, 2]), LocalOperator.rank_one(q[:, 0])):
            out = apply_on_batch(batch, spec, [2, 0], op)
            for row, state in zip(out, states):
                with self.subTest(op=op.kind):
                    np.testing.assert_allclose(row, apply_on_sites(state, [2, 0], op).amps, atol=1e-12)

    def test_split_batch_matches_split_sites(self):
        rng = np.random.default_rng(23)
        spec = SiteSpec((3, 2, 2))
        states = [random_state(spec, rng) for _ in range(3)]
        blocks = split_batch(np.stack([s.amps for s in states]), spec, [1, 2])
        for block, state in zip(blocks, states):
            matrix, _ = split_sites(state, [1, 2])
            np.testing.assert_array_equal(block, matrix)
        np.testing.assert_array_equal(merge_batch(blocks, spec, [1, 2]), np.stack([s.amps for s in states]))


class TestMeasurement(unittest.TestCase):

    def setUp(self):
        self.uniform = make_state(SiteSpec((4,)), np.full(4, 0.5))
        self.halves = [
            LocalOperator.support_projector(4, [0, 1]),
            LocalOperator.support_projector(4, [2, 3]),
        ]

    def test_forced_outcome(self):
        outcome, probability, post = measure_with_projectors(self.uniform, [0], self.halves, outcome=1)
        self.assertEqual(outcome, 1)
        self.assertAlmostEqual(probability, 0.5)
        np.testing.assert_allclose(post.amps, [0, 0, 2 ** -0.5, 2 ** -0.5], atol=1e-12)

    def test_sampled_outcome_is_reproducible(self):
        first = measure_with_projectors(self.uniform, [0], self.halves, rng=np.random.default_rng(9))
        second = measure_with_projectors(self.uniform, [0], self.halves, rng=np.random.default_rng(9))
        self.assertEqual(first[0], second[0])

    def test_zero_probability_and_bad_outcome(self):
        state = basis_state(SiteSpec((4,)), (0,))
        with self.assertRaises(ZeroProbabilityBranch):
            measure_with_projectors(state, [0], self.halves, outcome=1)
        with self.assertRaises(BadOutcome):
            measure_with_projectors(state, [0], self.halves, outcome=2)

    def test_enumerate_skips_empty_outcomes(self):
        state = basis_state(SiteSpec((4,)), (3,))
        outcomes = enumerate_outcomes(state, [0], self.halves)
        self.assertEqual([o for o, _, _ in outcomes], [1])
        self.assertAlmostEqual(outcomes[0][1], 1.0)

    def test_incomplete_families(self):
        with self.assertRaises(IncompleteProjectorFamily):
            check_projector_family([LocalOperator.support_projector(4, [0]),
                                    LocalOperator.support_projector(4, [1, 2])], 4)
        with self.assertRaises(IncompleteProjectorFamily):
            check_projector_family([LocalOperator.rank_one([1, 0]),
                                    LocalOperator.rank_one([2 ** -0.5, 2 ** -0.5])], 2)
        with self.assertRaises(IncompleteProjectorFamily):
            check_projector_family([LocalOperator.from_matrix(np.eye(2) * 0.5)], 2)

    def test_projector_weights_sum_to_one(self):
        rng = np.random.default_rng(29)
        families = [
            receiver_projectors((2, 3), 1),
            receiver_projectors((2, 3), 2),
            [LocalOperator.support_projector(6, [0, 5]), LocalOperator.support_projector(6, [1, 2, 3, 4])],
        ]
        for _ in range(100):
            state = random_state(SiteSpec((6, 2)), rng)
            for projectors in families:
                outcomes = enumerate_outcomes(state, [0], projectors)
                self.assertAlmostEqual(sum(p for _, p, _ in outcomes), 1.0, places=12)
                for _, _, post in outcomes:
                    self.assertAlmostEqual(post.norm(), 1.0, places=12)


class TestStateFiles(unittest.TestCase):

    def test_file_round_trip(self):
        rng = np.random.default_rng(2)
        states = [random_state(SiteSpec((2,)), rng), random_state(SiteSpec((3, 2)), rng)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "inputs.txt"
            write_states(path, states, labels=["first", "second"])
            loaded = read_states(path)
        self.assertEqual([s.dims for s in loaded], [(2,), (3, 2)])
        for before, after in zip(states, loaded):
            np.testing.assert_allclose(after.amps, before.amps, atol=1e-15)

    def test_header_format(self):
        text = dumps_states([basis_state(SiteSpec((2,)), (1,))], labels=["one"])
        self.assertEqual(text.splitlines()[:2], ["# one", "dims: 2"])

    def test_malformed_files(self):
        with self.assertRaises(DimensionMismatch):
            loads_states("1 0\n")
        with self.assertRaises(DimensionMismatch):
            loads_states("dims: 2\n1 0 0\n0 0\n")
        with self.assertRaises(DimensionMismatch):
            loads_states("dims: 2\none 0\n0 0\n")
        with self.assertRaises(DimensionMismatch):
            loads_states("dims: 2\n1 0\n")


if __name__ == '__main__':
    unittest.main()
