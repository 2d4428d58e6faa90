"""
═══════════════════════════════════════════════════════════
ROTOR ENGINE — CONFIG
═══════════════════════════════════════════════════════════
Environment-driven defaults. Read once at import; scenario files and CLI
flags override them per run.

    ROTOR_HBAR=1.0        reduced Planck constant used by all builders
    ROTOR_WORKERS=1       default sweep worker count
    ROTOR_LOG_LEVEL=INFO  root log level for the CLI
    ROTOR_METHOD=rk4      default integrator (rk4 | rk4_ip | rk45)
    ROTOR_CSV_DIGITS=17   significant digits of CSV floats
═══════════════════════════════════════════════════════════
"""

import os
import logging

_logger = logging.getLogger(__name__)

_METHODS = ("rk4", "rk4_ip", "rk45")


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name, "")
    if not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        _logger.warning(f"[CONFIG] {name}={raw!r} is not a number, using {default}")
        return default


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name, "")
    if not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        _logger.warning(f"[CONFIG] {name}={raw!r} is not an integer, using {default}")
        return default


HBAR = _env_float("ROTOR_HBAR", 1.0)
WORKERS = max(1, _env_int("ROTOR_WORKERS", 1))
LOG_LEVEL = os.environ.get("ROTOR_LOG_LEVEL", "INFO").upper().strip()
DEFAULT_METHOD = os.environ.get("ROTOR_METHOD", "rk4").lower().strip()
CSV_DIGITS = _env_int("ROTOR_CSV_DIGITS", 17)

if DEFAULT_METHOD not in _METHODS:
    _logger.warning(f"[CONFIG] ROTOR_METHOD={DEFAULT_METHOD!r} unknown, using rk4")
    DEFAULT_METHOD = "rk4"


def get_hbar() -> float:
    return HBAR


def get_workers() -> int:
    return WORKERS


def get_log_level() -> int:
    """Numeric log level for logging.basicConfig."""
    return getattr(logging, LOG_LEVEL, logging.INFO)


def get_default_method() -> str:
    return DEFAULT_METHOD


def csv_float_format() -> str:
    """Format spec for lossless float columns, e.g. '.17g'."""
    return f".{CSV_DIGITS}g"
