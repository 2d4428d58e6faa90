"""Tests for shared_constants consistency."""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))


def test_constants_exist():
    """All required constants should be defined."""
    from shared_constants import (
        STEADY_CHECK_INTERVAL,
        STEADY_CONSECUTIVE,
        TV_MAX_ITER,
        TV_MIN_SAMPLES,
        TV_DENSE_LIMIT,
        OSCILLATOR_CUTOFF,
        MIN_SAMPLES_PER_CYCLE,
        MIN_ROTOR_SPAN,
    )
    assert all(isinstance(v, int) for v in [
        STEADY_CHECK_INTERVAL, STEADY_CONSECUTIVE, TV_MAX_ITER, TV_MIN_SAMPLES,
        TV_DENSE_LIMIT, OSCILLATOR_CUTOFF, MIN_SAMPLES_PER_CYCLE, MIN_ROTOR_SPAN,
    ])


def test_tolerances_ordered():
    """Validation passes before a run is failed; edge warning precedes abort."""
    from shared_constants import (
        NEGATIVITY_TOL, NEGATIVITY_FAIL, EDGE_WARN, EDGE_ABORT, TRACE_TOL, HERMITICITY_TOL,
    )
    assert 0 < NEGATIVITY_TOL < NEGATIVITY_FAIL
    assert 0 < EDGE_WARN < EDGE_ABORT < 1
    assert TRACE_TOL > 0 and HERMITICITY_TOL > 0


def test_default_rotor_window():
    from shared_constants import DEFAULT_ROTOR, MIN_ROTOR_SPAN
    l_min, l_max = DEFAULT_ROTOR
    assert l_min <= 0 <= l_max
    assert l_max - l_min >= MIN_ROTOR_SPAN


def test_constants_match_canonical_values():
    from shared_constants import EDGE_WARN, EDGE_ABORT, OSCILLATOR_CUTOFF, MIN_SAMPLES_PER_CYCLE
    assert EDGE_WARN == 1e-4
    assert EDGE_ABORT == 1e-2
    assert OSCILLATOR_CUTOFF == 7
    assert MIN_SAMPLES_PER_CYCLE == 200


def test_header_lists_existing_readers():
    """The 'Read by' line names modules that exist in the repo root."""
    import shared_constants
    line = next(l for l in shared_constants.__doc__.splitlines() if l.startswith("Read by:"))
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    readers = [name.strip() for name in line.split(":", 1)[1].split(",")]
    assert readers
    for name in readers:
        assert os.path.isfile(os.path.join(root, name)), name
    assert shared_constants.__doc__.isascii()


if __name__ == "__main__":
    import pytest
    pytest.main([__file__, "-v"])
