"""Constraint evaluation over event traces and statistics over run batches.

Trace evaluation pairs the first occurrence of a constraint's from-event with
the first occurrence of its to-event at the same time or later. The AEB chain
latches its events (each fires at most once per run), so multi-activation
pairing is out of scope: several from-occurrences for an interval constraint
are rejected outright. A constraint whose events never occur in a trace is
NotObservable, which is a distinct verdict rather than a violation: a run
that never brakes cannot violate a warning-lead requirement.

Batch summaries, histograms, and the analytic best/worst-case path bounds
live here as well. Histogram output and the violation fractions are
permutation-invariant over the batch.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .chain import (
    ConstraintKind,
    Direction,
    EventChainModel,
    TimingConstraint,
    constraint_slack,
)
from .errors import SchemaError
from .traceability import RefinementMap
from .dynamics import stopping_time

if TYPE_CHECKING:
    from .sim import RunRecord, SimScenario


@dataclass(frozen=True)
class EventTrace:
    """Time-ordered (time, event-name) pairs for one run."""

    run_id: int
    events: tuple[tuple[float, str], ...]

    def __post_init__(self):
        last = -math.inf
        for t, name in self.events:
            if not name:
                raise ValueError("event names must be nonempty")
            if t < last:
                raise ValueError("event times must be nondecreasing")
            last = t

    def occurrences(self, name: str) -> list[float]:
        return [t for t, n in self.events if n == name]


class EvaluationStatus(enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    NOT_OBSERVABLE = "not_observable"


@dataclass(frozen=True)
class EvaluationResult:
    constraint_id: str
    run_id: int
    status: EvaluationStatus
    slack_s: float | None = None
    measured_s: float | None = None


def _interval_result(constraint: TimingConstraint, run_id: int,
                     t_from: float | None, t_to: float | None) -> EvaluationResult:
    if t_from is None or t_to is None:
        return EvaluationResult(constraint.id, run_id, EvaluationStatus.NOT_OBSERVABLE)
    slack = constraint_slack(constraint, t_from, t_to)
    status = EvaluationStatus.SATISFIED if slack >= 0 else EvaluationStatus.VIOLATED
    return EvaluationResult(constraint.id, run_id, status, slack, t_to - t_from)


def evaluate_trace(model: EventChainModel, trace: EventTrace,
                   binding: Mapping[str, str]) -> list[EvaluationResult]:
    """Evaluate every interval constraint of the model against one trace.

    `binding` maps step ids to trace event names and must cover every step
    referenced by the model's latency/synchronization/data-age constraints.
    Periodicity constraints are skipped here (see evaluate_periodicity).
    """
    known = set(model.step_ids())
    for step_id in binding:
        if step_id not in known:
            raise ValueError(f"binding references unknown step {step_id!r}")

    results = []
    for constraint in model.constraints:
        if constraint.kind is ConstraintKind.PERIODICITY:
            continue
        for ref in (constraint.from_step, constraint.to_step):
            if ref not in binding:
                raise ValueError(
                    f"binding does not cover step {ref!r} required by constraint "
                    f"{constraint.id!r}")
        from_times = trace.occurrences(binding[constraint.from_step])
        if len(from_times) > 1:
            raise ValueError(
                f"constraint {constraint.id!r}: event {binding[constraint.from_step]!r} "
                f"occurs {len(from_times)} times; multi-activation pairing is not supported")
        to_times = trace.occurrences(binding[constraint.to_step])
        t_from = from_times[0] if from_times else None
        t_to = None
        if t_from is not None:
            t_to = next((t for t in to_times if t >= t_from), None)
        results.append(_interval_result(constraint, trace.run_id, t_from, t_to))
    return results


def evaluate_periodicity(constraint: TimingConstraint, trace: EventTrace,
                         binding: Mapping[str, str],
                         jitter_tolerance_fraction: float = 0.01) -> EvaluationResult:
    """Check successive inter-occurrence gaps against the constraint's period.

    Satisfied iff the largest absolute deviation from the period stays within
    the jitter tolerance (default 1% of the period). Needs at least three
    occurrences to see two gaps.
    """
    if constraint.kind is not ConstraintKind.PERIODICITY:
        raise ValueError(f"constraint {constraint.id!r} is not a periodicity constraint")
    if constraint.from_step != constraint.to_step:
        raise ValueError(
            f"periodicity constraint {constraint.id!r} must reference a single step")
    if constraint.from_step not in binding:
        raise ValueError(f"binding does not cover step {constraint.from_step!r}")
    times = trace.occurrences(binding[constraint.from_step])
    if len(times) < 3:
        return EvaluationResult(constraint.id, trace.run_id, EvaluationStatus.NOT_OBSERVABLE)
    gaps = [b - a for a, b in zip(times, times[1:])]
    deviation = max(abs(g - constraint.bound_s) for g in gaps)
    tolerance = jitter_tolerance_fraction * constraint.bound_s
    status = (EvaluationStatus.SATISFIED if deviation <= tolerance
              else EvaluationStatus.VIOLATED)
    return EvaluationResult(constraint.id, trace.run_id, status,
                            tolerance - deviation, deviation)


@dataclass(frozen=True)
class PathBounds:
    worst_case_s: float
    best_case_s: float


def analytic_end_to_end(rmap: RefinementMap,
                        latencies: Mapping[str, "object"]) -> PathBounds:
    """Best/worst-case path latency by summing the per-function bounds.

    Walks the map's budget segments and sums the extreme values of every
    function latency they cover. Functions without a latency model are
    rejected.
    """
    worst: list[float] = []
    best: list[float] = []
    for segment in rmap.budgets:
        for fn in segment.functions:
            spec = latencies.get(fn)
            if spec is None:
                raise ValueError(f"no latency model for function {fn!r} "
                                 f"(budget segment {segment.name!r})")
            worst.append(spec.worst_s)
            best.append(spec.best_s)
    return PathBounds(worst_case_s=math.fsum(worst), best_case_s=math.fsum(best))


# ---------------------------------------------------------------------------
# Batch metrics and histograms
# ---------------------------------------------------------------------------

METRIC_NAMES = ("warning_lead", "t_acq", "t_det", "t_trj", "t_col",
                "stop_margin", "t2_minus_t0")


def _metric_value(record: "RunRecord", metric: str) -> float | None:
    if metric == "warning_lead":
        if record.t1 is None or record.t2 is None:
            return None
        return record.t2 - record.t1
    if metric == "t2_minus_t0":
        if record.t2 is None:
            return None
        return record.t2 - record.t0
    if metric == "stop_margin":
        return record.min_distance_m
    if metric in ("t_acq", "t_det", "t_trj", "t_col"):
        return getattr(record, metric)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRIC_NAMES}")


@dataclass(frozen=True)
class HistogramSummary:
    metric: str
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    violation_fraction: float
    quantiles: Mapping[str, float]
    mean_s: float
    observable_runs: int
    missing_runs: int


def summarize(batch: Sequence["RunRecord"], metric: str,
              constraint: TimingConstraint, bins: int = 40) -> HistogramSummary:
    """Histogram one run metric and score it against a constraint.

    Bins are equal-width over the observed range. Runs lacking the metric are
    excluded from the violation denominator and reported separately.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = []
    missing = 0
    for record in batch:
        value = _metric_value(record, metric)
        if value is None:
            missing += 1
        else:
            values.append(value)
    if not values:
        raise ValueError(f"no run in the batch observes metric {metric!r}")

    arr = np.sort(np.asarray(values, dtype=float))
    lo, hi = float(arr[0]), float(arr[-1])
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(arr, bins=edges)

    violations = sum(1 for v in values if constraint_slack(constraint, 0.0, v) < 0)
    q = np.percentile(arr, [1, 50, 99])
    return HistogramSummary(
        metric=metric,
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        violation_fraction=violations / len(values),
        quantiles={"p1": float(q[0]), "p50": float(q[1]), "p99": float(q[2])},
        mean_s=float(arr.mean()),
        observable_runs=len(values),
        missing_runs=missing)


# In-line requirement checks over RunRecords. The first three mirror the
# white-model trace constraints (same ids, same slack arithmetic), which is
# what makes trace evaluation an independent oracle for them.
TRACE_CHECKED_IDS = ("ECREQ-2", "ACQ-BUDGET", "WRN-BUDGET")


def _inline_constraints(config) -> list[tuple[TimingConstraint, str, str]]:
    """(constraint, from-timestamp-attr, to-timestamp-attr) triples."""
    return [
        (TimingConstraint("ECREQ-2", ConstraintKind.LATENCY, "w5", "w4",
                          config.warning_lead_min_s, Direction.MIN), "t1", "t2"),
        (TimingConstraint("ACQ-BUDGET", ConstraintKind.LATENCY, "w0", "w2",
                          config.acq_budget_s, Direction.MAX), "t0", "t_detect"),
        (TimingConstraint("WRN-BUDGET", ConstraintKind.LATENCY, "w0", "w5",
                          config.wrn_budget_s, Direction.MAX), "t0", "t1"),
    ]


def _segment_checks(config) -> list[tuple[str, str, float]]:
    """(requirement id, RunRecord duration attr, budget bound) triples."""
    return [
        ("DET-BUDGET", "t_det", config.det_budget_s),
        ("TRJ-BUDGET", "t_trj", config.trj_budget_s),
        ("COL-BUDGET", "t_col", config.col_budget_s),
    ]


def inline_run_results(record: "RunRecord", config) -> list[EvaluationResult]:
    """Per-run verdicts for the trace-checkable constraints, from timestamps."""
    results = []
    for constraint, from_attr, to_attr in _inline_constraints(config):
        results.append(_interval_result(constraint, record.run_index,
                                        getattr(record, from_attr),
                                        getattr(record, to_attr)))
    return results


def _stop_consistency(record: "RunRecord", scenario: "SimScenario") -> tuple[bool | None, bool | None]:
    """(average-deceleration ok, stop-time ok); None when the run never stopped."""
    if record.t2 is None or record.t4 is None or record.v_at_brake is None:
        return None, None
    config = scenario.requirements
    duration = record.t4 - record.t2
    avg_decel = record.v_at_brake / duration  # v(t4) = 0
    if config.avg_decel_mode == "literal":
        # Printed form compares the signed speed slope to +a_const; it can
        # never hold for a decelerating vehicle and is kept only for audit.
        avg_ok = (0.0 - record.v_at_brake) / duration >= scenario.brake.a_const
    else:
        avg_ok = avg_decel >= scenario.brake.a_const * (1.0 - config.avg_decel_tolerance)
    if config.stop_time_mode == "literal":
        # Reaction-time reading: the braking episode must last at least the
        # time-to-react left at brake onset.
        time_ok = duration >= record.min_distance_m / record.v_at_brake
    else:
        time_ok = duration <= stopping_time(record.v_at_brake, scenario.brake) + config.stop_time_margin_s
    return avg_ok, time_ok


def summarize_batch(records: Sequence["RunRecord"], scenario: "SimScenario") -> dict:
    """Aggregate requirement table and headline metrics for one batch.

    Every aggregation is a count or a sorted-percentile, so the result does
    not depend on record order.
    """
    config = scenario.requirements
    total = len(records)
    rows: dict[str, dict] = {}

    def add_row(req_id: str, bound: float, direction: str, observable: int, violations: int):
        admissible = float(config.admissible.get(req_id, 0.0))
        fraction = violations / observable if observable else 0.0
        rows[req_id] = {
            "bound_s": bound,
            "direction": direction,
            "observable_runs": observable,
            "violations": violations,
            "violation_fraction": fraction,
            "admissible_fraction": admissible,
            "pass": fraction <= admissible,
        }

    inline = [inline_run_results(r, config) for r in records]
    for idx, (constraint, _, _) in enumerate(_inline_constraints(config)):
        per_run = [run_results[idx] for run_results in inline]
        observable = sum(1 for r in per_run if r.status is not EvaluationStatus.NOT_OBSERVABLE)
        violations = sum(1 for r in per_run if r.status is EvaluationStatus.VIOLATED)
        add_row(constraint.id, constraint.bound_s,
                constraint.direction.value, observable, violations)

    for req_id, attr, bound in _segment_checks(config):
        values = [getattr(r, attr) for r in records]
        observable = sum(1 for v in values if v is not None)
        violations = sum(1 for v in values if v is not None and v > bound)
        add_row(req_id, bound, "max", observable, violations)

    collisions = sum(1 for r in records if r.collided)
    add_row("TREQ-1-COLLISION", 0.0, "max", total, collisions)

    avg_viol = time_viol = stop_observable = 0
    for record in records:
        avg_ok, time_ok = _stop_consistency(record, scenario)
        if avg_ok is None:
            continue
        stop_observable += 1
        avg_viol += 0 if avg_ok else 1
        time_viol += 0 if time_ok else 1
    add_row("ECREQ-1.1", scenario.brake.a_const, "min", stop_observable, avg_viol)
    add_row("ECREQ-1.2", 0.0, "max", stop_observable, time_viol)

    budget_ids = ("ACQ-BUDGET", "DET-BUDGET", "TRJ-BUDGET", "COL-BUDGET", "WRN-BUDGET")
    dominant = max(budget_ids, key=lambda rid: (rows[rid]["violation_fraction"], rid))
    if rows[dominant]["violations"] == 0:
        dominant = None

    def metric_stats(metric: str) -> dict | None:
        values = [v for r in records if (v := _metric_value(r, metric)) is not None]
        if not values:
            return None
        arr = np.sort(np.asarray(values, dtype=float))
        q = np.percentile(arr, [1, 50, 99])
        return {"observable_runs": len(values), "mean": float(arr.mean()),
                "min": float(arr[0]), "max": float(arr[-1]),
                "p1": float(q[0]), "p50": float(q[1]), "p99": float(q[2])}

    acq_row = rows["ACQ-BUDGET"]
    return {
        "scenario_id": scenario.id,
        "runs": total,
        "collisions": collisions,
        "collision_fraction": collisions / total if total else 0.0,
        "requirements": rows,
        "dominant_violated_budget": dominant,
        "det_error_rate": acq_row["violation_fraction"],
        "det_error_rate_max": config.det_error_rate_max,
        "det_error_rate_pass": acq_row["violation_fraction"] <= config.det_error_rate_max,
        "all_requirements_pass": all(row["pass"] for row in rows.values()),
        "metrics": {name: metric_stats(name) for name in METRIC_NAMES},
    }


# ---------------------------------------------------------------------------
# Trace CSV, results JSON, histogram CSV/SVG
#
# Trace files carry `run,time_s,event` rows. Times are written with repr so
# they round-trip bit-exactly; that is what lets trace-based evaluation
# reproduce in-line slacks to within 1e-12 (in fact exactly).
# ---------------------------------------------------------------------------


def write_trace_csv(records: Sequence["RunRecord"], path: str | Path) -> None:
    lines = ["run,time_s,event"]
    for record in records:
        for t, name in record.events:
            lines.append(f"{record.run_index},{t!r},{name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path: str | Path) -> list[EventTrace]:
    by_run: dict[int, list[tuple[float, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["run", "time_s", "event"]:
            raise SchemaError(f"trace file must start with 'run,time_s,event', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(f"trace line {lineno}: expected 3 columns, got {len(row)}")
            try:
                run = int(row[0])
                t = float(row[1])
            except ValueError as exc:
                raise SchemaError(f"trace line {lineno}: {exc}") from None
            by_run.setdefault(run, []).append((t, row[2]))
    return [EventTrace(run_id=run, events=tuple(events))
            for run, events in sorted(by_run.items())]


def _record_dict(record: "RunRecord") -> dict:
    return {
        "run_index": record.run_index,
        "t0": record.t0, "t_detect": record.t_detect,
        "t1": record.t1, "t2": record.t2, "t3": record.t3, "t4": record.t4,
        "t_sample_success": record.t_sample_success,
        "d_detect_m": record.d_detect_m,
        "t_acq": record.t_acq, "t_det": record.t_det, "t_trj": record.t_trj,
        "t_col": record.t_col, "t_wrn": record.t_wrn,
        "pipeline_latency_s": record.pipeline_latency_s,
        "v_at_brake": record.v_at_brake,
        "min_distance_m": record.min_distance_m,
        "collided": record.collided,
    }


def results_document(records: Sequence["RunRecord"], scenario: "SimScenario") -> dict:
    from .sim import scenario_to_dict

    per_run = []
    for record in records:
        evaluations = {
            r.constraint_id: {"status": r.status.value, "slack_s": r.slack_s,
                              "measured_s": r.measured_s}
            for r in inline_run_results(record, scenario.requirements)
        }
        entry = _record_dict(record)
        entry["constraints"] = evaluations
        per_run.append(entry)
    return {
        "scenario": scenario_to_dict(scenario),
        "summary": summarize_batch(records, scenario),
        "runs": per_run,
    }


def dump_json(document: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_histogram_csv(summary: HistogramSummary, path: str | Path) -> None:
    lines = ["bin_low,bin_high,count"]
    for lo, hi, count in zip(summary.bin_edges, summary.bin_edges[1:], summary.counts):
        lines.append(f"{lo!r},{hi!r},{count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return format(x, ".6g")


def write_histogram_svg(summary: HistogramSummary, path: str | Path,
                        bound_s: float | None = None, title: str | None = None) -> None:
    """Self-contained bar rendering of one histogram, with an optional bound marker."""
    width, height = 640, 400
    left, right, top, bottom = 60, 20, 40, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    max_count = max(summary.counts) or 1
    lo, hi = summary.bin_edges[0], summary.bin_edges[-1]
    span = hi - lo or 1.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{title or summary.metric}</text>',
    ]
    for b_lo, b_hi, count in zip(summary.bin_edges, summary.bin_edges[1:], summary.counts):
        x = left + (b_lo - lo) / span * plot_w
        w = max((b_hi - b_lo) / span * plot_w - 1.0, 0.5)
        h = count / max_count * plot_h
        y = top + plot_h - h
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                     f'height="{_fmt(h)}" fill="#4878a8"/>')
    if bound_s is not None and lo <= bound_s <= hi:
        x = left + (bound_s - lo) / span * plot_w
        parts.append(f'<line x1="{_fmt(x)}" y1="{top}" x2="{_fmt(x)}" '
                     f'y2="{top + plot_h}" stroke="#c03030" stroke-width="2" '
                     f'stroke-dasharray="6,3"/>')
        parts.append(f'<text x="{_fmt(x + 4)}" y="{top + 14}" font-family="sans-serif" '
                     f'font-size="12" fill="#c03030">bound {_fmt(bound_s)} s</text>')
    axis_y = top + plot_h
    parts.append(f'<line x1="{left}" y1="{axis_y}" x2="{left + plot_w}" y2="{axis_y}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{axis_y}" stroke="black"/>')
    parts.append(f'<text x="{left}" y="{axis_y + 20}" font-family="sans-serif" '
                 f'font-size="12" text-anchor="middle">{_fmt(lo)}</text>')
    parts.append(f'<text x="{left + plot_w}" y="{axis_y + 20}" font-family="sans-serif" '
                 f'font-size="12" text-anchor="middle">{_fmt(hi)}</text>')
    parts.append(f'<text x="{left - 8}" y="{top + 4}" font-family="sans-serif" '
                 f'font-size="12" text-anchor="end">{max_count}</text>')
    parts.append(f'<text x="{left - 8}" y="{axis_y}" font-family="sans-serif" '
                 f'font-size="12" text-anchor="end">0</text>')
    parts.append(f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{summary.metric} [s], '
                 f'n={summary.observable_runs}, violations='
                 f'{_fmt(summary.violation_fraction)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
