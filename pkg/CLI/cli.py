"""qunet command line.

Usage:
	python qunet.py run --protocol many-to-one --dims 2,2 --seed 7 --json out.json
	python qunet.py run --protocol two-way --dims 2,3 --seed 1 --format text
	python qunet.py verify [--matrix 2,2 2,3] [--inject-fault] [--json summary.json]
	python qunet.py verify --replay t.jsonl --protocol many-to-one --dims 2,2 --seed 7
	python qunet.py verify --replay t.jsonl --report out.json
	python qunet.py bell-table --d 3 --output bell3.txt

Exit status: 0 success, 1 a fidelity or property check failed, 2 invalid
input, 3 capacity or branch limit exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Tuple

import numpy as np

from tools.config import ExecutionMode, ModeKind, ProtocolConfig, ProtocolKind, parse_dims
from tools.console import UI, format_duration, render_report, render_verification
from tools.errors import BadDimension, BranchExplosion, CapacityExceeded, ConfigInvalid, QunetError
from tools.gates import BellOutcome, bell_state
from tools.network import measurement_count, read_transcript, replay, schedule, write_transcript
from tools.oracle import DEFAULT_MATRIX, run_verification, verification_summary
from tools.protocols import (
	FIDELITY_TOL,
	expected_output,
	report_to_json,
	resolve_inputs,
	run_protocol,
	seed_streams,
)
from tools.qudit_core import fidelity, read_states, write_states
from tools.settings import override, setup_logging

logger = logging.getLogger(__name__)

BELL_TABLE_MAX_D = 16
REPLAY_TOL = 1e-12
EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_CAPACITY = 0, 1, 2, 3


class CommandContext:
	"""Times a command and logs its outcome"""

	def __init__(self, command_name: str):
		self.command_name = command_name
		self.start_time = time.time()
		self.success = False

	def __enter__(self):
		logger.info("%s started", self.command_name)
		return self

	def __exit__(self, exc_type, exc_val, exc_tb):
		duration = format_duration(time.time() - self.start_time)
		if exc_type is not None:
			logger.info("%s failed after %s", self.command_name, duration)
		elif self.success:
			logger.info("%s completed in %s", self.command_name, duration)
		else:
			logger.info("%s finished with failures in %s", self.command_name, duration)
		return False

	def set_success(self, success: bool = True):
		self.success = success


@dataclass
class RunOptions:
	kind: ProtocolKind
	dims: Tuple[int, ...]
	recv_dims: Optional[Tuple[int, ...]] = None
	seed: int = 0
	mode: ExecutionMode = ExecutionMode()
	input_path: Optional[Path] = None
	json_path: Optional[Path] = None
	fmt: str = "json"
	fold_corrections: bool = False
	verify_ops: bool = False
	transcript_path: Optional[Path] = None

	@classmethod
	def from_args(cls, args: argparse.Namespace) -> "RunOptions":
		return cls(
			kind=ProtocolKind.parse(args.protocol),
			dims=parse_dims(args.dims),
			recv_dims=parse_dims(args.recv_dims) if args.recv_dims else None,
			seed=args.seed,
			mode=ExecutionMode.parse(args.mode),
			input_path=Path(args.input) if args.input else None,
			json_path=Path(args.json) if args.json else None,
			fmt=args.format,
			fold_corrections=args.fold_corrections,
			verify_ops=args.verify_ops,
			transcript_path=Path(args.transcript) if args.transcript else None,
		)

	def to_config(self) -> ProtocolConfig:
		inputs = joint = None
		if self.input_path is not None:
			try:
				states = read_states(self.input_path)
			except OSError as exc:
				raise ConfigInvalid(f"cannot read {self.input_path}: {exc}") from None
			if self.kind is ProtocolKind.ONE_TO_MANY and len(states) == 1 and len(self.dims) > 1:
				joint = states[0]
			else:
				inputs = tuple(states)
		config = ProtocolConfig(
			kind=self.kind,
			dims=self.dims,
			recv_dims=self.recv_dims,
			inputs=inputs,
			joint_input=joint,
			seed=self.seed,
			mode=self.mode,
			fold_corrections=self.fold_corrections,
		)
		if self.mode.kind is ModeKind.BRANCH:
			expected = measurement_count(schedule(config))
			if len(self.mode.outcomes) != expected:
				raise ConfigInvalid(f"branch spec has {len(self.mode.outcomes)} entries, {self.kind.cli_name} "
									f"on dims {','.join(map(str, self.dims))} measures {expected} times")
		return config


def cmd_run(options: RunOptions, out: Optional[TextIO] = None) -> int:
	out = out or sys.stdout
	config = options.to_config()
	with CommandContext(f"run {options.kind.cli_name}") as ctx:
		with override(verify=True) if options.verify_ops else nullcontext():
			report = run_protocol(config)
		text = report_to_json(report)
		if options.json_path is not None:
			options.json_path.write_text(text, encoding="utf-8")
		elif options.fmt == "json":
			out.write(text)
		if options.fmt == "text":
			render_report(report, file=out)
		if options.transcript_path is not None:
			write_transcript(options.transcript_path, report.transcript)

		ok = report.succeeded or options.mode.kind is not ModeKind.ENUMERATE
		ctx.set_success(ok)
	return EXIT_OK if ok else EXIT_FAILED


def _parse_matrix(entries: Optional[Sequence[str]]) -> Tuple[Tuple[int, ...], ...]:
	if not entries:
		return DEFAULT_MATRIX
	return tuple(parse_dims(entry) for entry in entries)


def cmd_verify(args: argparse.Namespace, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
	out, err = out or sys.stdout, err or sys.stderr
	if args.replay:
		return _verify_replay(args, out, err)
	matrix = _parse_matrix(args.matrix)
	with CommandContext("verify") as ctx:
		results = run_verification(matrix, seed=args.seed or 0, inject_fault=args.inject_fault)
		summary = verification_summary(results)
		if args.json:
			Path(args.json).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
		render_verification(results, file=out)
		ctx.set_success(summary["passed"])
	if not summary["passed"]:
		print(f"verify: property {summary['first_failure']} failed", file=err)
		return EXIT_FAILED
	return EXIT_OK


def _replay_config(args: argparse.Namespace, recorded: Optional[dict]) -> ProtocolConfig:
	recorded = recorded or {}
	protocol = args.protocol or recorded.get("protocol")
	dims = parse_dims(args.dims) if args.dims else tuple(recorded.get("dims") or ())
	if not (protocol and dims):
		raise ConfigInvalid("--replay needs --protocol and --dims (and the run's --seed), or a --report")
	kind = ProtocolKind.parse(protocol)
	recv_dims: Optional[Tuple[int, ...]] = None
	if args.recv_dims:
		recv_dims = parse_dims(args.recv_dims)
	elif kind is ProtocolKind.MANY_TO_MANY and recorded.get("recv_dims"):
		recv_dims = tuple(recorded["recv_dims"])
	return ProtocolConfig(
		kind=kind,
		dims=dims,
		recv_dims=recv_dims,
		seed=args.seed if args.seed is not None else int(recorded.get("seed", 0)),
		fold_corrections=bool(recorded.get("fold_corrections", False)),
	)


def _recorded_final_state(recorded: dict) -> np.ndarray:
	state = recorded.get("final_state")
	if state is None:
		raise ConfigInvalid("the report has no final_state (enumerate-mode reports keep none)")
	try:
		return np.array([complex(re, im) for re, im in state["amplitudes"]])
	except (KeyError, TypeError, ValueError) as exc:
		raise ConfigInvalid(f"malformed final_state in report: {exc}") from None


def _verify_replay(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
	recorded = None
	if args.report:
		try:
			recorded = json.loads(Path(args.report).read_text(encoding="utf-8"))
		except OSError as exc:
			raise ConfigInvalid(f"cannot read {args.report}: {exc}") from None
		except json.JSONDecodeError as exc:
			raise ConfigInvalid(f"{args.report} is not JSON: {exc}") from None
	config = _replay_config(args, recorded)
	try:
		transcript = read_transcript(Path(args.replay))
	except OSError as exc:
		raise ConfigInvalid(f"cannot read {args.replay}: {exc}") from None
	final = replay(transcript, config)
	expected = expected_output(config, resolve_inputs(config, seed_streams(config.seed)[0]))
	value = fidelity(final, expected)

	UI.header("qunet verify --replay", file=out)
	UI.detail("messages", str(len(transcript)), file=out)
	UI.detail("fidelity", f"{value:.12f}", file=out)
	failed = value < 1.0 - FIDELITY_TOL
	if failed:
		print(f"verify: replayed branch has fidelity {value:.12f}", file=err)
	if recorded is not None:
		amps = _recorded_final_state(recorded)
		if amps.shape != final.amps.shape:
			print(f"verify: report final_state has {amps.size} amplitudes, replay has {final.amps.size}", file=err)
			return EXIT_FAILED
		deviation = float(np.max(np.abs(amps - final.amps)))
		UI.detail("report deviation", f"{deviation:.3e}", file=out)
		if deviation > REPLAY_TOL:
			print(f"verify: replay deviates from the report's final_state by {deviation:.3e}", file=err)
			failed = True
	if failed:
		return EXIT_FAILED
	UI.success("replay reproduces the final state", file=out)
	return EXIT_OK


def cmd_bell_table(d: int, output: Path) -> int:
	if not 2 <= d <= BELL_TABLE_MAX_D:
		raise BadDimension(f"bell-table supports 2 <= d <= {BELL_TABLE_MAX_D}, got {d}")
	outcomes = [BellOutcome(m, n) for m in range(d) for n in range(d)]
	write_states(output, [bell_state(d, o) for o in outcomes], labels=[f"psi m={o.m} n={o.n}" for o in outcomes])
	logger.info("wrote %d Bell states to %s", len(outcomes), output)
	return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
	parser = argparse.ArgumentParser(
		prog="qunet",
		description="Qudit teleportation network simulator",
		formatter_class=argparse.RawDescriptionHelpFormatter,
		epilog="Examples:\n"
			   "  qunet run --protocol many-to-one --dims 2,2 --seed 7 --json out.json\n"
			   "  qunet run --protocol two-way --dims 2,3 --seed 1\n"
			   "  qunet verify --matrix 2,2 2,3\n"
			   "  qunet bell-table --d 3 --output bell3.txt",
	)
	subparsers = parser.add_subparsers(dest="command", help="Available commands")

	run_parser = subparsers.add_parser("run", help="Run a teleportation protocol")
	run_parser.add_argument("--protocol", required=True,
							choices=[k.cli_name for k in ProtocolKind], help="Protocol to run")
	run_parser.add_argument("--dims", required=True, help="Comma-separated digit dims, e.g. 2,3")
	run_parser.add_argument("--recv-dims", default=None, help="Receiver dims for many-to-many")
	run_parser.add_argument("--seed", type=int, default=0, help="Seed for random inputs and sampling")
	run_parser.add_argument("--mode", default="enumerate", help="sample | enumerate | branch=m:n,...,u")
	run_parser.add_argument("--input", default=None, help="State file with the input states")
	run_parser.add_argument("--json", default=None, help="Write the JSON report here")
	run_parser.add_argument("--format", default="json", choices=["json", "text"], help="Output format")
	run_parser.add_argument("--fold-corrections", action="store_true",
							help="Fold earlier senders' shift corrections into the spread")
	run_parser.add_argument("--verify-ops", action="store_true", help="Check unitarity on every application")
	run_parser.add_argument("--transcript", default=None, help="Write the message transcript (JSON lines)")
	run_parser.add_argument("--verbose", action="store_true", help="Enable verbose output")

	verify_parser = subparsers.add_parser("verify", help="Run the property suite or check a replay")
	verify_parser.add_argument("--matrix", nargs="+", default=None, help="Dim sets, e.g. 2,2 2,3")
	verify_parser.add_argument("--seed", type=int, default=None, help="Seed for random inputs (default 0)")
	verify_parser.add_argument("--inject-fault", action="store_true", help="Flip every correction sign")
	verify_parser.add_argument("--replay", default=None, help="Transcript (JSON lines) to replay")
	verify_parser.add_argument("--report", default=None,
							   help="Run report whose final_state the replay must reproduce")
	verify_parser.add_argument("--protocol", default=None, choices=[k.cli_name for k in ProtocolKind])
	verify_parser.add_argument("--dims", default=None)
	verify_parser.add_argument("--recv-dims", default=None)
	verify_parser.add_argument("--json", default=None, help="Write the verification summary here")
	verify_parser.add_argument("--verbose", action="store_true", help="Enable verbose output")

	bell_parser = subparsers.add_parser("bell-table", help="Write the generalized Bell basis as a state file")
	bell_parser.add_argument("--d", type=int, required=True, help="Qudit dimension (2..16)")
	bell_parser.add_argument("--output", required=True, help="Output state file")
	bell_parser.add_argument("--verbose", action="store_true", help="Enable verbose output")
	return parser


def main(argv: Optional[List[str]] = None) -> int:
	parser = build_parser()
	args = parser.parse_args(argv)
	if not args.command:
		parser.print_help()
		return EXIT_OK
	setup_logging("INFO" if args.verbose else None)

	try:
		if args.command == "run":
			return cmd_run(RunOptions.from_args(args))
		elif args.command == "verify":
			return cmd_verify(args)
		elif args.command == "bell-table":
			return cmd_bell_table(args.d, Path(args.output))
	except (CapacityExceeded, BranchExplosion) as exc:
		print(f"qunet: {exc}", file=sys.stderr)
		return EXIT_CAPACITY
	except QunetError as exc:
		print(f"qunet: {type(exc).__name__}: {exc}", file=sys.stderr)
		return EXIT_INVALID
	except OSError as exc:
		print(f"qunet: {exc}", file=sys.stderr)
		return EXIT_INVALID
	parser.print_help()
	return EXIT_INVALID


if __name__ == '__main__':  # pragma: no cover
	sys.exit(main())
