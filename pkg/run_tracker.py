"""
Run Tracker — integrator effort per simulation run.

dynamics.integrate and dynamics.steady_state call record() once per invocation;
rotorctl copies get_run_summary() into summary.json and calls finish() when a
command or sweep point is done, which logs a [RUN_SUMMARY] line and drops the run.
Sweeps spawn one run id per point ("sweep-<index>"), so the tracker keeps only
the most recently touched runs.
"""

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegrationRecord:
    """One integrator invocation: an integrate() call or a steady-state relaxation."""
    method: str
    steps: int
    sim_time: float
    wall_time: float
    stage: str
    timestamp: float

    @property
    def steps_per_second(self) -> float:
        return self.steps / self.wall_time if self.wall_time > 0 else float("inf")


@dataclass
class RunEffort:
    run_id: str
    records: List[IntegrationRecord] = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        return sum(r.steps for r in self.records)

    @property
    def total_sim_time(self) -> float:
        return sum(r.sim_time for r in self.records)

    @property
    def total_wall_time(self) -> float:
        return sum(r.wall_time for r in self.records)

    def by_stage(self) -> Dict[str, dict]:
        stages: Dict[str, dict] = {}
        for r in self.records:
            s = stages.setdefault(r.stage, {"calls": 0, "steps": 0, "sim_time": 0.0,
                                            "wall_time_s": 0.0, "methods": []})
            s["calls"] += 1
            s["steps"] += r.steps
            s["sim_time"] += r.sim_time
            s["wall_time_s"] = round(s["wall_time_s"] + r.wall_time, 4)
            if r.method not in s["methods"]:
                s["methods"].append(r.method)
        return stages

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "total_sim_time": self.total_sim_time,
            "total_wall_time_s": round(self.total_wall_time, 4),
            "record_count": len(self.records),
            "breakdown": self.by_stage(),
        }


class IntegrationTracker:
    """Keeps the effort of the `max_runs` most recently touched runs."""

    def __init__(self, max_runs: int = 100):
        self._runs: "OrderedDict[str, RunEffort]" = OrderedDict()
        self._max_runs = max(1, max_runs)

    def record(self, run_id: str, method: str, steps: int, sim_time: float,
               wall_time: float, stage: str = "integrate") -> IntegrationRecord:
        run = self._runs.get(run_id)
        if run is None:
            run = self._runs[run_id] = RunEffort(run_id)
            self._evict()
        else:
            self._runs.move_to_end(run_id)

        rec = IntegrationRecord(method, int(steps), float(sim_time), float(wall_time),
                                stage, time.time())
        run.records.append(rec)
        logger.info(
            f"[RUN] run={run_id} stage={stage} method={method} "
            f"steps={rec.steps} t_sim={rec.sim_time:.4g} wall={rec.wall_time:.2f}s "
            f"rate={rec.steps_per_second:.0f}/s"
        )
        return rec

    def get_run_summary(self, run_id: str) -> Optional[dict]:
        run = self._runs.get(run_id)
        return run.to_dict() if run else None

    def log_summary(self, run_id: str) -> Optional[dict]:
        """Log totals and one line per stage; returns the summary (None for unknown runs)."""
        summary = self.get_run_summary(run_id)
        if summary is None:
            return None
        logger.info(
            f"[RUN_SUMMARY] run={run_id} steps={summary['total_steps']} "
            f"t_sim={summary['total_sim_time']:.4g} wall={summary['total_wall_time_s']:.2f}s "
            f"records={summary['record_count']}"
        )
        for stage, s in summary["breakdown"].items():
            logger.debug(f"[RUN_SUMMARY]   {stage}: calls={s['calls']} steps={s['steps']} "
                         f"methods={','.join(s['methods'])}")
        return summary

    def finish(self, run_id: str) -> Optional[dict]:
        """log_summary() then forget the run."""
        summary = self.log_summary(run_id)
        self.remove_run(run_id)
        return summary

    def remove_run(self, run_id: str):
        self._runs.pop(run_id, None)

    def _evict(self):
        while len(self._runs) > self._max_runs:
            oldest, _ = self._runs.popitem(last=False)
            logger.debug(f"[RUN] evicted effort record for run={oldest}")


run_tracker = IntegrationTracker()
