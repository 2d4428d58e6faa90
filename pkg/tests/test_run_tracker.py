"""Tests for the integrator effort tracker."""

import logging
import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from run_tracker import IntegrationTracker


def test_record_and_summary():
    """Recording integrations should produce correct summaries."""
    tracker = IntegrationTracker()
    tracker.record("run1", "rk4", 1000, 10.0, 0.5, stage="integrate")
    tracker.record("run1", "rk4", 4000, 40.0, 1.5, stage="steady")

    summary = tracker.get_run_summary("run1")
    assert summary is not None
    assert summary["record_count"] == 2
    assert summary["total_steps"] == 5000
    assert summary["total_sim_time"] == 50.0
    assert summary["total_wall_time_s"] == 2.0


def test_record_returns_rate():
    tracker = IntegrationTracker()
    rec = tracker.record("run2", "rk4_ip", 2000, 1.0, 4.0)
    assert rec.stage == "integrate"
    assert rec.steps_per_second == 500.0


def test_zero_wall_time_does_not_crash():
    tracker = IntegrationTracker()
    rec = tracker.record("run3", "rk45", 10, 1.0, 0.0)
    assert rec.steps_per_second == float("inf")


def test_run_removal():
    tracker = IntegrationTracker()
    tracker.record("run4", "rk4", 100, 1.0, 0.1)
    assert tracker.get_run_summary("run4") is not None
    tracker.remove_run("run4")
    assert tracker.get_run_summary("run4") is None
    tracker.remove_run("never-seen")


def test_breakdown_by_stage():
    """Effort breakdown should group by stage and list the methods used."""
    tracker = IntegrationTracker()
    tracker.record("run5", "rk4", 100, 1.0, 0.1, stage="integrate")
    tracker.record("run5", "rk4_ip", 200, 2.0, 0.2, stage="integrate")
    tracker.record("run5", "rk4", 300, 3.0, 0.3, stage="steady")

    breakdown = tracker.get_run_summary("run5")["breakdown"]
    assert breakdown["integrate"]["calls"] == 2
    assert breakdown["integrate"]["steps"] == 300
    assert breakdown["integrate"]["methods"] == ["rk4", "rk4_ip"]
    assert breakdown["steady"]["calls"] == 1


def test_least_recently_touched_run_is_evicted():
    tracker = IntegrationTracker(max_runs=4)
    for i in range(4):
        tracker.record(f"sweep-{i}", "rk4", 1, 0.1, 0.01)
    tracker.record("sweep-0", "rk4", 1, 0.1, 0.01)
    tracker.record("sweep-4", "rk4", 1, 0.1, 0.01)
    assert tracker.get_run_summary("sweep-1") is None
    for i in (0, 2, 3, 4):
        assert tracker.get_run_summary(f"sweep-{i}") is not None
    assert tracker.get_run_summary("sweep-0")["record_count"] == 2


def test_finish_logs_and_forgets(caplog):
    tracker = IntegrationTracker()
    tracker.record("steady", "rk4", 700, 7.0, 0.7, stage="steady")
    with caplog.at_level(logging.INFO, logger="run_tracker"):
        summary = tracker.finish("steady")
    assert summary["total_steps"] == 700
    assert any("[RUN_SUMMARY] run=steady steps=700" in r.getMessage() for r in caplog.records)
    assert tracker.get_run_summary("steady") is None
    assert tracker.finish("steady") is None


if __name__ == "__main__":
    import pytest
    pytest.main([__file__, "-v"])
