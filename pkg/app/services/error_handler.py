import logging
from typing import Dict, List, Any
from datetime import datetime
import traceback

logger = logging.getLogger(__name__)


class RunErrorHandler:
    """
    Error and progress tracker for simulation batches

    What this does: Tracks failed runs and pipeline counters across a matrix or service lifetime
    Why: One bad cell must not stop a sweep, but it has to be visible afterwards
    How: Records each failure with its context and keeps per-stage counters for the summary
    """

    def __init__(self):
        self.error_counts = {}
        self.last_errors = {}
        self.failed_runs: List[Dict[str, Any]] = []
        self.pipeline_stats = {
            "runs_started": 0,
            "runs_succeeded": 0,
            "rows_written": 0,
            "verdicts_evaluated": 0,
            "analytic_sweeps": 0,
        }

    def log_error(self, source: str, error: Exception, context: Dict = None):
        """Record a failure under ``source`` (``run`` or ``analytic``)"""
        error_msg = str(error)
        self.error_counts[source] = self.error_counts.get(source, 0) + 1
        self.last_errors[source] = {
            "error": error_msg,
            "type": type(error).__name__,
            "timestamp": datetime.now().isoformat(),
            "context": context or {},
            "traceback": traceback.format_exc() if logger.isEnabledFor(logging.DEBUG) else None,
        }

        logger.error(f"❌ {source} error: {error_msg}")
        if context:
            logger.debug(f"Context: {context}")

    def log_run_failure(self, scenario_id: str, error: Exception):
        """A run failed; a surrounding batch carries on"""
        self.failed_runs.append({"scenario_id": scenario_id, "error": str(error)})
        self.log_error("run", error, {"scenario_id": scenario_id})
        logger.warning(f"⚠️ Skipping failed run {scenario_id}")

    def log_pipeline_stage(self, stage: str, success: bool, count: int = 1):
        """Log pipeline stage completion"""
        if stage == "run":
            self.pipeline_stats["runs_started"] += 1
            if success:
                self.pipeline_stats["runs_succeeded"] += 1
        elif not success:
            logger.error(f"❌ {stage}: Failed")
            return
        elif stage == "rows":
            self.pipeline_stats["rows_written"] += count
        elif stage == "verdict":
            self.pipeline_stats["verdicts_evaluated"] += count
        elif stage == "analytic":
            self.pipeline_stats["analytic_sweeps"] += 1
        logger.debug(f"{stage}: {count} processed")

    def get_error_summary(self) -> Dict[str, Any]:
        """Get summary of all errors encountered"""
        return {
            "total_sources_with_errors": len(self.error_counts),
            "error_counts": self.error_counts,
            "last_errors": self.last_errors,
            "failed_runs": self.failed_runs,
            "pipeline_stats": self.pipeline_stats,
            "success_rate": self._calculate_success_rate(),
        }

    def _calculate_success_rate(self) -> Dict[str, float]:
        started = self.pipeline_stats["runs_started"]
        succeeded = self.pipeline_stats["runs_succeeded"]
        return {
            "run_success_rate": (succeeded / max(started, 1)) * 100,
            "runs_started": started,
            "runs_succeeded": succeeded,
        }
