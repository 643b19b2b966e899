"""
Terminal output helpers for the text report format.
"""

import os
import sys
from typing import List, Optional, TextIO


class Color:
    """ANSI color codes for terminal output"""
    RED = '\033[31m'
    GREEN = '\033[32m'
    CYAN = '\033[36m'

    BOLD = '\033[1m'
    DIM = '\033[2m'
    RESET = '\033[0m'

    @staticmethod
    def enabled(stream: TextIO = sys.stdout) -> bool:
        """Colors only on a terminal, and never when QUNET_NO_COLOR=1"""
        if os.getenv('QUNET_NO_COLOR') == '1':
            return False
        return hasattr(stream, 'isatty') and stream.isatty()

    @staticmethod
    def disable():
        """Disable all colors (for CI/CD or when unsupported)"""
        for attr in dir(Color):
            if not attr.startswith('_') and attr.isupper():
                setattr(Color, attr, '')


if not Color.enabled():
    Color.disable()


class Icon:
    SUCCESS = "✓"
    ERROR = "✗"
    BULLET = "•"


class UI:
    """Colored line printers; every method takes an optional output stream"""

    @staticmethod
    def success(message: str, file: Optional[TextIO] = None):
        print(f"{Color.GREEN}{Icon.SUCCESS} {message}{Color.RESET}", file=file or sys.stdout)

    @staticmethod
    def error(message: str, file: Optional[TextIO] = None):
        print(f"{Color.RED}{Icon.ERROR} {message}{Color.RESET}", file=file or sys.stderr)

    @staticmethod
    def header(message: str, file: Optional[TextIO] = None):
        out = file or sys.stdout
        print(f"\n{Color.BOLD}{Color.CYAN}{message}{Color.RESET}", file=out)
        print(f"{Color.DIM}{'=' * min(len(message), 60)}{Color.RESET}", file=out)

    @staticmethod
    def detail(key: str, value: str, indent: int = 0, file: Optional[TextIO] = None):
        print(f"{'  ' * indent}{Color.DIM}{key}:{Color.RESET} {Color.BOLD}{value}{Color.RESET}",
              file=file or sys.stdout)

    @staticmethod
    def bullet(message: str, indent: int = 0, file: Optional[TextIO] = None):
        print(f"{'  ' * indent}{Icon.BULLET} {message}", file=file or sys.stdout)


class Table:
    """Plain aligned table"""

    def __init__(self, headers: List[str]):
        self.headers = headers
        self.rows: List[List[str]] = []

    def add_row(self, row: List[str]):
        self.rows.append([str(cell) for cell in row])

    def render(self, file: Optional[TextIO] = None):
        out = file or sys.stdout
        widths = [len(h) for h in self.headers]
        for row in self.rows:
            for i, cell in enumerate(row):
                widths[i] = max(widths[i], len(cell))

        print(" | ".join(f"{h:<{widths[i]}}" for i, h in enumerate(self.headers)), file=out)
        print("-+-".join("-" * w for w in widths), file=out)
        for row in self.rows:
            print(" | ".join(f"{cell:<{widths[i]}}" for i, cell in enumerate(row)), file=out)


def format_duration(seconds: float) -> str:
    """Format seconds to human-readable duration"""
    if seconds < 1:
        return f"{int(seconds * 1000)}ms"
    elif seconds < 60:
        return f"{seconds:.1f}s"
    minutes = int(seconds / 60)
    secs = int(seconds % 60)
    return f"{minutes}m {secs}s"


def render_report(report, file: Optional[TextIO] = None, max_rows: int = 16):
    """Human-readable summary of a ProtocolReport"""
    out = file or sys.stdout
    config = report.config
    UI.header(f"{config.kind.cli_name} dims={','.join(map(str, config.dims))}", file=out)
    UI.detail("receivers", ",".join(map(str, config.receiver_dims)), file=out)
    UI.detail("mode", str(config.mode), file=out)
    UI.detail("seed", str(config.seed), file=out)
    for key, value in report.resources.items():
        UI.detail(key.replace("_", " "), str(value), file=out)
    UI.detail("branches", str(report.branch_count), file=out)
    UI.detail("probability sum", f"{report.probability_sum:.12f}", file=out)
    UI.detail("min fidelity", f"{report.min_fidelity:.12f}", file=out)

    table = Table(["outcome", "probability", "fidelity"])
    for branch in report.branches[:max_rows]:
        table.add_row([" ".join(str(o) for o in branch.outcome), f"{branch.probability:.6g}",
                       f"{branch.fidelity:.12f}"])
    print(file=out)
    table.render(file=out)
    if report.branch_count > max_rows:
        UI.bullet(f"... {report.branch_count - max_rows} more branches", file=out)

    if report.succeeded:
        UI.success("every branch delivered the inputs", file=out)
    else:
        UI.error(f"fidelity below tolerance (min {report.min_fidelity:.12f})", file=out)


def render_verification(results, file: Optional[TextIO] = None):
    out = file or sys.stdout
    UI.header("qunet verify", file=out)
    for r in results:
        mark = f"{Color.GREEN}{Icon.SUCCESS}" if r.passed else f"{Color.RED}{Icon.ERROR}"
        print(f"{mark} {r.name}{Color.RESET} {Color.DIM}{r.detail}{Color.RESET}", file=out)
    failed = [r for r in results if not r.passed]
    if failed:
        UI.error(f"{len(failed)} of {len(results)} properties failed; first: {failed[0].name}", file=out)
    else:
        UI.success(f"all {len(results)} properties hold", file=out)
