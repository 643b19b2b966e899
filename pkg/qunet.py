#!/usr/bin/env python3
"""
qunet entrypoint

Simulates qudit teleportation networks (many-to-one, one-to-many,
many-to-many and the two-way channel) on explicit state vectors.

Usage:
    python qunet.py run --protocol many-to-one --dims 2,2 --seed 7
    python qunet.py verify
    python qunet.py bell-table --d 3 --output bell3.txt
"""

import sys
from pathlib import Path

from tools.settings import load_dotenv, reset_settings

_dotenv = Path(__file__).parent / ".env"
if _dotenv.exists():
    load_dotenv(_dotenv)
    reset_settings()

from CLI.cli import main  # noqa: E402


if __name__ == '__main__':
    sys.exit(main() or 0)
