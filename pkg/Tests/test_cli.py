"""
Tests for the qunet command line.
"""

import io
import json
import shutil
import sys
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest import mock

sys.path.insert(0, str(Path(__file__).parent.parent))

from CLI.cli import build_parser, main
from tools.qudit_core import SiteSpec, basis_state, read_states, write_states


class TestCLI(unittest.TestCase):

    def setUp(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_help_without_command(self):
        code, out, _ = self.run_cli()
        self.assertEqual(code, 0)
        self.assertIn("run", out)

    def test_parser_subcommands(self):
        args = build_parser().parse_args(["run", "--protocol", "two-way", "--dims", "2,3"])
        self.assertEqual(args.mode, "enumerate")
        self.assertEqual(args.format, "json")

    def test_run_writes_json_report(self):
        path = self.test_dir / "out.json"
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2", "--seed", "7",
                                  "--json", str(path))
        self.assertEqual(code, 0)
        report = json.loads(path.read_text())
        self.assertEqual(report["branch_count"], 256)
        self.assertAlmostEqual(report["probability_sum"], 1.0, places=9)
        self.assertGreaterEqual(report["min_fidelity"], 1 - 1e-9)

    def test_run_json_to_stdout(self):
        code, out, _ = self.run_cli("run", "--protocol", "one-to-many", "--dims", "2,2", "--mode", "sample")
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertEqual(report["branch_count"], 1)
        self.assertEqual(report["final_state"]["dims"], [2, 2])

    def test_run_text_format(self):
        code, out, _ = self.run_cli("run", "--protocol", "two-way", "--dims", "2,2", "--format", "text")
        self.assertEqual(code, 0)
        self.assertIn("xor ancillas", out)
        self.assertIn("min fidelity", out)

    def test_run_with_input_file(self):
        path = self.test_dir / "inputs.txt"
        write_states(path, [basis_state(SiteSpec((2,)), (1,)), basis_state(SiteSpec((3,)), (0,))])
        code, out, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,3",
                                    "--input", str(path), "--mode", "sample")
        self.assertEqual(code, 0)
        amplitudes = json.loads(out)["final_state"]["amplitudes"]
        self.assertAlmostEqual(amplitudes[1][0] ** 2 + amplitudes[1][1] ** 2, 1.0, places=12)

    def test_branch_mode(self):
        code, out, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2",
                                    "--mode", "branch=1:0,2:3", "--verify-ops")
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(out)["branches"][0]["outcome"], ["1:0", "2:3"])

    def test_branch_mode_with_wrong_length(self):
        code, _, err = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2", "--mode", "branch=1:0")
        self.assertEqual(code, 2)
        self.assertIn("measures 2 times", err)

    def test_invalid_input_exit_codes(self):
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,1")
        self.assertEqual(code, 2)
        code, _, _ = self.run_cli("run", "--protocol", "two-way", "--dims", "2,2,2")
        self.assertEqual(code, 2)
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2",
                                  "--input", str(self.test_dir / "missing.txt"))
        self.assertEqual(code, 2)

    def test_branch_limit_exit_code(self):
        code, _, err = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2,2,2")
        self.assertEqual(code, 3)
        self.assertIn("exceed", err)

    def test_bell_table(self):
        path = self.test_dir / "bell3.txt"
        code, _, _ = self.run_cli("bell-table", "--d", "3", "--output", str(path))
        self.assertEqual(code, 0)
        states = read_states(path)
        self.assertEqual(len(states), 9)
        self.assertIn("# psi m=0 n=0", path.read_text())
        for d in ("1", "17"):
            code, _, _ = self.run_cli("bell-table", "--d", d, "--output", str(path))
            self.assertEqual(code, 2)

    def test_verify_passes(self):
        summary_path = self.test_dir / "summary.json"
        code, _, _ = self.run_cli("verify", "--matrix", "2,2", "--json", str(summary_path))
        self.assertEqual(code, 0)
        summary = json.loads(summary_path.read_text())
        self.assertTrue(summary["passed"])
        self.assertIsNone(summary["first_failure"])

    def test_verify_detects_injected_fault(self):
        summary_path = self.test_dir / "summary.json"
        code, _, err = self.run_cli("verify", "--matrix", "2,3", "--inject-fault", "--json", str(summary_path))
        self.assertEqual(code, 1)
        self.assertIn("fidelity:", err)
        self.assertFalse(json.loads(summary_path.read_text())["passed"])

    def test_transcript_replay(self):
        transcript = self.test_dir / "t.jsonl"
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,2", "--seed", "7",
                                  "--mode", "sample", "--transcript", str(transcript))
        self.assertEqual(code, 0)
        self.assertEqual(len(transcript.read_text().splitlines()), 2)
        code, out, _ = self.run_cli("verify", "--replay", str(transcript), "--protocol", "many-to-one",
                                    "--dims", "2,2", "--seed", "7")
        self.assertEqual(code, 0)
        self.assertIn("replay reproduces the final state", out)

    def sampled_run(self, *extra):
        report, transcript = self.test_dir / "out.json", self.test_dir / "t.jsonl"
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,3", "--seed", "3",
                                  "--mode", "sample", "--json", str(report), "--transcript", str(transcript),
                                  *extra)
        self.assertEqual(code, 0)
        return report, transcript

    def test_replay_matches_report_final_state(self):
        report, transcript = self.sampled_run()
        code, out, _ = self.run_cli("verify", "--replay", str(transcript), "--report", str(report))
        self.assertEqual(code, 0)
        self.assertIn("report deviation", out)

    def test_replay_detects_altered_report(self):
        report, transcript = self.sampled_run()
        data = json.loads(report.read_text())
        amplitudes = data["final_state"]["amplitudes"]
        amplitudes[0], amplitudes[1] = amplitudes[1], [amplitudes[0][0] + 0.5, amplitudes[0][1]]
        report.write_text(json.dumps(data))
        code, _, err = self.run_cli("verify", "--replay", str(transcript), "--report", str(report))
        self.assertEqual(code, 1)
        self.assertIn("deviates from the report", err)

    def test_replay_with_other_seed_deviates_from_report(self):
        report, transcript = self.sampled_run()
        code, _, err = self.run_cli("verify", "--replay", str(transcript), "--report", str(report),
                                    "--seed", "4")
        self.assertEqual(code, 1)
        self.assertIn("deviates from the report", err)

    def test_replay_fails_on_low_fidelity(self):
        _, transcript = self.sampled_run()
        wrong = basis_state(SiteSpec((6,)), (5,))
        with mock.patch("CLI.cli.expected_output", return_value=wrong):
            code, _, err = self.run_cli("verify", "--replay", str(transcript), "--protocol", "many-to-one",
                                        "--dims", "2,3", "--seed", "3")
        self.assertEqual(code, 1)
        self.assertIn("replayed branch has fidelity", err)

    def test_replay_rejects_enumerate_report(self):
        report = self.test_dir / "enum.json"
        _, transcript = self.sampled_run()
        code, _, _ = self.run_cli("run", "--protocol", "many-to-one", "--dims", "2,3", "--seed", "3",
                                  "--json", str(report))
        self.assertEqual(code, 0)
        code, _, err = self.run_cli("verify", "--replay", str(transcript), "--report", str(report))
        self.assertEqual(code, 2)
        self.assertIn("no final_state", err)

    def test_replay_needs_a_protocol(self):
        transcript = self.test_dir / "t.jsonl"
        transcript.write_text("")
        code, _, _ = self.run_cli("verify", "--replay", str(transcript))
        self.assertEqual(code, 2)


if __name__ == '__main__':
    unittest.main()
