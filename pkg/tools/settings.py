"""Runtime settings for qunet.

Values come from the process environment, optionally seeded from a ``.env``
file next to the entry script (see ``load_dotenv``):

    QUNET_MAX_DIM     largest register dimension a SiteSpec may describe
    QUNET_VERIFY      check unitarity / projector families on every application
    QUNET_LOG_LEVEL   default logging level
"""

from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Mapping, Optional

from tools.errors import ConfigInvalid

DEFAULT_MAX_DIM = 1_048_576
_TRUTHY = {"1", "true", "yes", "on"}


@dataclass(frozen=True)
class Settings:
    """Resolved configuration values."""

    max_dim: int = DEFAULT_MAX_DIM
    verify: bool = False
    log_level: str = "WARNING"


def load_dotenv(dotenv_path: Path) -> None:
    """Load KEY=VALUE pairs from ``dotenv_path`` without overriding the environment."""
    from dotenv import load_dotenv as _load

    _load(dotenv_path, override=False)


def load_settings(env: Optional[Mapping[str, str]] = None) -> Settings:
    env = os.environ if env is None else env
    raw_max = env.get("QUNET_MAX_DIM", str(DEFAULT_MAX_DIM)).strip()
    try:
        max_dim = int(raw_max)
    except ValueError:
        raise ConfigInvalid(f"QUNET_MAX_DIM must be an integer, got {raw_max!r}") from None
    if max_dim < 4:
        raise ConfigInvalid(f"QUNET_MAX_DIM must be at least 4, got {max_dim}")
    verify = env.get("QUNET_VERIFY", "").strip().lower() in _TRUTHY
    log_level = env.get("QUNET_LOG_LEVEL", "WARNING").strip().upper() or "WARNING"
    return Settings(max_dim=max_dim, verify=verify, log_level=log_level)


_current: Optional[Settings] = None


def get_settings() -> Settings:
    global _current
    if _current is None:
        _current = load_settings()
    return _current


def reset_settings() -> None:
    """Drop the cached settings so the next lookup re-reads the environment."""
    global _current
    _current = None


@contextmanager
def override(**changes) -> Iterator[Settings]:
    """Temporarily replace individual settings (tests, CLI flags)."""
    global _current
    previous = get_settings()
    _current = replace(previous, **changes)
    try:
        yield _current
    finally:
        _current = previous


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, (level or get_settings().log_level).upper(), logging.WARNING),
        format='[%(asctime)s] %(levelname)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
