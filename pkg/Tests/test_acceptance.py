"""
Seeded sweeps over the dimension matrix every release has to pass.
"""

import io
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from CLI.cli import main
from tools.config import ProtocolConfig, ProtocolKind
from tools.protocols import FIDELITY_TOL, PROBABILITY_TOL, run_protocol

FAST_DIMS = ((2, 2), (2, 3), (3, 2), (2, 4), (3, 3))


class SweepAssertions(unittest.TestCase):

    def assertSweep(self, kind, dims_set, seeds, **kwargs):
        for dims in dims_set:
            for seed in seeds:
                with self.subTest(dims=dims, seed=seed):
                    report = run_protocol(ProtocolConfig(kind, dims, seed=seed, **kwargs))
                    self.assertGreaterEqual(report.min_fidelity, 1 - FIDELITY_TOL)
                    self.assertAlmostEqual(report.probability_sum, 1.0, delta=PROBABILITY_TOL)


class TestSweeps(SweepAssertions):

    def test_many_to_one(self):
        self.assertSweep(ProtocolKind.MANY_TO_ONE, FAST_DIMS, range(3))

    def test_one_to_many(self):
        self.assertSweep(ProtocolKind.ONE_TO_MANY, FAST_DIMS + ((2, 2, 2),), range(3))

    def test_many_to_many(self):
        self.assertSweep(ProtocolKind.MANY_TO_MANY, ((2, 3),), range(3))
        report = run_protocol(ProtocolConfig(ProtocolKind.MANY_TO_MANY, (2, 3)))
        self.assertEqual(report.resources["shared_qudits"], 4)

    def test_two_way(self):
        self.assertSweep(ProtocolKind.TWO_WAY, ((2, 3),), range(3))

    @pytest.mark.slow
    def test_many_to_one_full_matrix(self):
        self.assertSweep(ProtocolKind.MANY_TO_ONE, FAST_DIMS + ((2, 2, 2),), range(20))

    @pytest.mark.slow
    def test_one_to_many_full_matrix(self):
        self.assertSweep(ProtocolKind.ONE_TO_MANY, FAST_DIMS + ((2, 2, 2),), range(20))

    @pytest.mark.slow
    def test_pairs_over_ten_seeds(self):
        self.assertSweep(ProtocolKind.MANY_TO_MANY, ((2, 3),), range(10))
        self.assertSweep(ProtocolKind.TWO_WAY, ((2, 3),), range(10))
        self.assertSweep(ProtocolKind.TWO_WAY, ((2, 4), (3, 3)), range(2))


class TestReproducibility(unittest.TestCase):

    def test_identical_invocations_write_identical_reports(self):
        with tempfile.TemporaryDirectory() as tmp:
            outputs = []
            for name in ("a.json", "b.json"):
                path = Path(tmp) / name
                with redirect_stdout(io.StringIO()):
                    code = main(["run", "--protocol", "two-way", "--dims", "2,3", "--seed", "1",
                                 "--json", str(path)])
                self.assertEqual(code, 0)
                outputs.append(path.read_bytes())
        self.assertEqual(outputs[0], outputs[1])


if __name__ == '__main__':
    unittest.main()
