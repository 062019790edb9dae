"""Event-driven Monte Carlo simulation of the AEB white-box event chain.

Each run walks one approach of the ego vehicle toward a stationary obstacle:

  enter_range -> sensor sampling (probabilistic, truncated sensor model)
  -> detected (+ acquisition and detection latencies)
  -> periodic trajectory-prediction ticks evaluating warn/brake triggers
  -> warning / brake_demand (+ per-function latencies)
  -> full_decel -> stopped (closed-form braking kinematics)

Kinematics between events are closed-form; there is no fixed-step
integration, so physics assertions hold to float precision.

The trajectory-prediction stage evaluates the trigger predicates on the
state predicted one reaction horizon ahead (by default: one tick period plus
the worst-case trajectory/collision/brake-control latencies). Evaluating on
the instantaneous state instead would make every brake demand land strictly
after the last reaction point and guarantee a collision; the horizon is what
lets the demand arrive in time. Set prediction_horizon_s to 0.0 to get the
instantaneous behavior.

Reproducibility: run i draws from numpy's PCG64 generator seeded with
SeedSequence([seed, i]), so each run has an independent stream derived only
from (seed, run_index); results do not depend on execution order or worker
count. Within a run the draw order is fixed: sensor phase, trajectory phase,
the six function latencies in FUNCTION_KEYS order, then one uniform per
sensor sample.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dynamics import (
    BrakeParams,
    SensorParams,
    detection_probability,
    stopping_distance,
    stopping_time,
)
from .errors import SchemaError

# Canonical trace event vocabulary, in tie-break order.
EVENT_NAMES = ("enter_range", "sensor_sample", "detected", "warning",
               "brake_demand", "full_decel", "stopped", "collision")
_EVENT_RANK = {name: i for i, name in enumerate(EVENT_NAMES)}

# Pipeline functions, in draw order: data acquisition, object detection,
# trajectory prediction, warning assessment, collision assessment, brake control.
FUNCTION_KEYS = ("f_DA", "f_OD", "f_TP", "f_WA", "f_CA", "f_BC")

_SWEEP_SALT = 0x5357

SWEEPABLE_PARAMETERS = ("f_sensor", "f_trj", "f_brake", "r_g", "r_max",
                        "v_initial", "a_const", "t_response")


@dataclass(frozen=True)
class LatencySpec:
    """Execution-time model of one pipeline function: constant or uniform."""

    distribution: str  # "constant" | "uniform"
    value_s: float = 0.0
    min_s: float = 0.0
    max_s: float = 0.0

    def __post_init__(self):
        if self.distribution == "constant":
            if self.value_s < 0:
                raise ValueError(f"constant latency must be >= 0, got {self.value_s}")
        elif self.distribution == "uniform":
            if not 0 <= self.min_s <= self.max_s:
                raise ValueError(f"need 0 <= min <= max, got [{self.min_s}, {self.max_s}]")
        else:
            raise ValueError(f"unknown latency distribution {self.distribution!r}")

    @classmethod
    def constant(cls, value_s: float) -> "LatencySpec":
        return cls("constant", value_s=value_s)

    @classmethod
    def uniform(cls, min_s: float, max_s: float) -> "LatencySpec":
        return cls("uniform", min_s=min_s, max_s=max_s)

    @property
    def worst_s(self) -> float:
        return self.value_s if self.distribution == "constant" else self.max_s

    @property
    def best_s(self) -> float:
        return self.value_s if self.distribution == "constant" else self.min_s

    def sample(self, rng: np.random.Generator) -> float:
        if self.distribution == "constant":
            return self.value_s
        return float(rng.uniform(self.min_s, self.max_s))


def default_latencies() -> dict[str, LatencySpec]:
    """Default execution-time models, scaled to the white-box budgets."""
    return {
        "f_DA": LatencySpec.constant(0.0),
        "f_OD": LatencySpec.uniform(0.005, 0.010),
        "f_TP": LatencySpec.uniform(0.015, 0.030),
        "f_WA": LatencySpec.constant(0.0),
        "f_CA": LatencySpec.uniform(0.005, 0.010),
        "f_BC": LatencySpec.constant(0.0),
    }


@dataclass(frozen=True)
class RequirementConfig:
    """Per-requirement bounds and admissible Monte Carlo violation fractions."""

    warning_lead_min_s: float = 0.8
    acq_budget_s: float = 0.45
    det_budget_s: float = 0.01
    trj_budget_s: float = 0.03
    col_budget_s: float = 0.01
    wrn_budget_s: float = 0.8
    det_error_rate_max: float = 0.01
    admissible: Mapping[str, float] = field(default_factory=dict)
    # Stop-consistency checks. The printed regulatory forms are not directly
    # computable (average deceleration never reaches a_const during the ramp;
    # the one-argument reaction-time form is undefined), so the defaults use
    # the documented reinterpretations; "literal" selects the printed forms.
    avg_decel_mode: str = "tolerance"   # "tolerance" | "literal"
    avg_decel_tolerance: float = 0.15
    stop_time_mode: str = "margin"      # "margin" | "literal"
    stop_time_margin_s: float = 0.05


@dataclass(frozen=True)
class SimScenario:
    """Physical and system parameters of one AEB approach scenario."""

    id: str
    v_initial: float
    d_initial: float
    brake: BrakeParams
    sensor: SensorParams
    f_trj: float
    f_brake: float
    latencies: Mapping[str, LatencySpec]
    warning_lead: float = 0.8
    seed: int = 0
    runs: int = 1
    prediction_horizon_s: float | None = None  # None = derive worst-case horizon
    p_detect_const: float | None = None        # diagnostic: constant in-range success prob
    requirements: RequirementConfig = field(default_factory=RequirementConfig)

    def __post_init__(self):
        if self.d_initial <= self.sensor.r_max:
            raise ValueError(
                f"d_initial must exceed r_max, got {self.d_initial} <= {self.sensor.r_max}")
        if self.v_initial <= 0:
            raise ValueError(f"v_initial must be > 0, got {self.v_initial}")
        if self.f_trj <= 0 or self.f_brake <= 0:
            raise ValueError("f_trj and f_brake must be > 0")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if self.warning_lead < 0:
            raise ValueError("warning_lead must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        missing = [k for k in FUNCTION_KEYS if k not in self.latencies]
        if missing:
            raise ValueError(f"missing latency specs for {missing}")
        if self.p_detect_const is not None and not 0 <= self.p_detect_const <= 1:
            raise ValueError("p_detect_const must be in [0, 1]")
        if self.prediction_horizon_s is not None and self.prediction_horizon_s < 0:
            raise ValueError("prediction_horizon_s must be >= 0")

    def effective_horizon(self) -> float:
        """Reaction horizon the trigger evaluation looks ahead by."""
        if self.prediction_horizon_s is not None:
            return self.prediction_horizon_s
        return (1.0 / self.f_trj
                + self.latencies["f_TP"].worst_s
                + self.latencies["f_CA"].worst_s
                + self.latencies["f_BC"].worst_s)


@dataclass
class RunRecord:
    """Per-run event timestamps, segment durations, and outcome."""

    run_index: int
    t0: float                       # obstacle enters sensor range
    t_detect: float | None = None   # detection event (pipeline output)
    t1: float | None = None         # warning issued
    t2: float | None = None         # brake demand / deceleration onset
    t3: float | None = None         # full deceleration reached
    t4: float | None = None         # standstill
    t_sample_success: float | None = None  # the sensor sample that detected
    d_detect_m: float | None = None        # obstacle distance at that sample
    t_acq: float | None = None      # t_detect - t0
    t_det: float | None = None      # object-detection latency
    t_trj: float | None = None      # trajectory-prediction latency (brake path)
    t_col: float | None = None      # collision-assessment + brake-control latency
    t_wrn: float | None = None      # t1 - t0
    pipeline_latency_s: float | None = None  # sum of drawn function latencies, brake path
    v_at_brake: float | None = None
    min_distance_m: float = 0.0
    collided: bool = False
    events: tuple[tuple[float, str], ...] = ()


def _sorted_events(events: list[tuple[float, str]]) -> tuple[tuple[float, str], ...]:
    return tuple(sorted(events, key=lambda e: (e[0], _EVENT_RANK[e[1]])))


def _first_tick_at_or_after(phase: float, period: float, t: float) -> int:
    return max(0, math.ceil((t - phase) / period))


def _first_tick_strictly_after(phase: float, period: float, t: float) -> int:
    return max(0, math.floor((t - phase) / period) + 1)


def simulate_run(scenario: SimScenario, run_index: int) -> RunRecord:
    """Simulate one approach; the RNG stream depends only on (seed, run_index)."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, run_index]))

    v = scenario.v_initial
    d0 = scenario.d_initial
    sensor = scenario.sensor
    brake = scenario.brake
    t_sensor = 1.0 / sensor.f_sensor
    t_trj = 1.0 / scenario.f_trj
    horizon = scenario.effective_horizon()

    phase_sensor = float(rng.uniform(0.0, t_sensor))
    phase_trj = float(rng.uniform(0.0, t_trj))
    lat = {key: scenario.latencies[key].sample(rng) for key in FUNCTION_KEYS}

    record = RunRecord(run_index=run_index, t0=(d0 - sensor.r_max) / v)
    events: list[tuple[float, str]] = [(record.t0, "enter_range")]

    # Sensor sampling until the first successful return. Samples beyond the
    # cutoff range cannot succeed; inside it each sample succeeds with the
    # truncated-model probability (or the constant diagnostic override).
    t_success = None
    k = 0
    while True:
        t_k = phase_sensor + k * t_sensor
        d_k = d0 - v * t_k
        if d_k <= 0:
            break
        events.append((t_k, "sensor_sample"))
        if d_k <= sensor.r_max:
            p = (scenario.p_detect_const if scenario.p_detect_const is not None
                 else detection_probability(d_k, sensor))
            if rng.uniform() < p:
                t_success = t_k
                record.d_detect_m = d_k
                break
        k += 1

    if t_success is None:
        # The vehicle reaches the obstacle without ever detecting it.
        record.collided = True
        record.min_distance_m = 0.0
        events.append((d0 / v, "collision"))
        record.events = _sorted_events(events)
        return record

    record.t_sample_success = t_success
    record.t_detect = t_success + lat["f_DA"] + lat["f_OD"]
    record.t_acq = record.t_detect - record.t0
    record.t_det = lat["f_OD"]
    events.append((record.t_detect, "detected"))

    s_stop = stopping_distance(v, brake)
    # Times at which the predicted state first crosses the trigger thresholds.
    cross_warn = (d0 - (s_stop + v * (scenario.warning_lead + horizon))) / v
    cross_brake = (d0 - (s_stop + v * horizon)) / v

    def trigger_tick(cross: float) -> float:
        m = max(_first_tick_at_or_after(phase_trj, t_trj, record.t_detect),
                _first_tick_strictly_after(phase_trj, t_trj, cross))
        return phase_trj + m * t_trj

    tick_warn = trigger_tick(cross_warn)
    tick_brake = trigger_tick(cross_brake)

    record.t1 = tick_warn + lat["f_TP"] + lat["f_WA"]
    record.t_wrn = record.t1 - record.t0
    events.append((record.t1, "warning"))

    t2 = tick_brake + lat["f_TP"] + lat["f_CA"] + lat["f_BC"]
    d_at_brake = d0 - v * t2
    record.t_trj = lat["f_TP"]
    record.t_col = lat["f_CA"] + lat["f_BC"]
    record.pipeline_latency_s = (lat["f_DA"] + lat["f_OD"] + lat["f_TP"]
                                 + lat["f_CA"] + lat["f_BC"])

    if d_at_brake <= 0:
        # Demand would land past the obstacle: collision without braking.
        record.collided = True
        record.min_distance_m = 0.0
        events.append((d0 / v, "collision"))
        record.events = _sorted_events(events)
        return record

    record.t2 = t2
    record.v_at_brake = v
    events.append((t2, "brake_demand"))
    record.t3 = t2 + brake.t_response
    events.append((record.t3, "full_decel"))
    record.t4 = t2 + stopping_time(v, brake)
    events.append((record.t4, "stopped"))

    record.min_distance_m = d_at_brake - s_stop
    if record.min_distance_m <= 0:
        record.collided = True
        events.append((t2 + _crossing_time(v, brake, d_at_brake), "collision"))

    record.events = _sorted_events(events)
    return record


def _crossing_time(v_at_brake: float, brake: BrakeParams, distance: float) -> float:
    """Time after brake onset at which the traveled distance reaches `distance`."""
    from .dynamics import deceleration_profile

    lo, hi = 0.0, stopping_time(v_at_brake, brake)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if deceleration_profile(mid, brake, v_at_brake).distance_traveled < distance:
            lo = mid
        else:
            hi = mid
    return hi


def run_monte_carlo(scenario: SimScenario) -> list[RunRecord]:
    """All runs of the scenario. Aggregation never depends on completion order."""
    return [simulate_run(scenario, i) for i in range(scenario.runs)]


def _sweep_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, _SWEEP_SALT, index])
               .generate_state(1, np.uint64)[0])


def apply_parameter(scenario: SimScenario, parameter: str, value: float) -> SimScenario:
    if parameter not in SWEEPABLE_PARAMETERS:
        raise ValueError(
            f"unknown sweep parameter {parameter!r}; expected one of {SWEEPABLE_PARAMETERS}")
    if parameter in ("f_sensor", "r_g", "r_max"):
        sensor = dataclasses.replace(scenario.sensor, **{parameter: value})
        return dataclasses.replace(scenario, sensor=sensor)
    if parameter in ("a_const", "t_response"):
        return dataclasses.replace(scenario, brake=dataclasses.replace(
            scenario.brake, **{parameter: value}))
    return dataclasses.replace(scenario, **{parameter: value})


@dataclass(frozen=True)
class SweepPoint:
    parameter: str
    value: float
    summary: dict


def sweep(scenario: SimScenario, parameter: str, values: Sequence[float]) -> list[SweepPoint]:
    """One Monte Carlo batch per parameter value, each with a derived seed."""
    from .analysis import summarize_batch

    points = []
    for i, value in enumerate(values):
        variant = apply_parameter(scenario, parameter, value)
        variant = dataclasses.replace(variant, seed=_sweep_seed(scenario.seed, i))
        records = run_monte_carlo(variant)
        points.append(SweepPoint(parameter, value, summarize_batch(records, variant)))
    return points


# ---------------------------------------------------------------------------
# Scenario files (JSON, SI units). Field names mirror SimScenario.
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {"id", "v_initial_mps", "d_initial_m", "brake", "sensor",
                  "f_trj_hz", "f_brake_hz", "latencies", "warning_lead_s",
                  "seed", "runs", "prediction_horizon_s", "p_detect_const",
                  "requirements"}
_BRAKE_KEYS = {"a_const_mps2", "t_response_s"}
_SENSOR_KEYS = {"r_g_m", "r_max_m", "f_sensor_hz"}
_LATENCY_KEYS = {"distribution", "value_s", "min_s", "max_s"}
_REQ_CFG_KEYS = {"warning_lead_min_s", "budgets", "det_error_rate_max",
                 "admissible_violation_fractions", "avg_decel_mode",
                 "avg_decel_tolerance", "stop_time_mode", "stop_time_margin_s"}
_BUDGET_CFG_KEYS = {"acq_s", "det_s", "trj_s", "col_s", "wrn_s"}


def _reject_unknown(data: Mapping, allowed: set[str], where: str) -> None:
    unknown = sorted(k for k in data if k not in allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {unknown}")


def _number(data: Mapping, key: str, where: str, default=None) -> float:
    if key not in data:
        if default is None:
            raise SchemaError(f"{where}: missing required key {key!r}")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: {key!r} must be a number")
    return float(value)


def parse_latency_spec(raw: Mapping, where: str) -> LatencySpec:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{where}: must be an object")
    _reject_unknown(raw, _LATENCY_KEYS, where)
    dist = raw.get("distribution")
    try:
        if dist == "constant":
            return LatencySpec.constant(_number(raw, "value_s", where))
        if dist == "uniform":
            return LatencySpec.uniform(_number(raw, "min_s", where), _number(raw, "max_s", where))
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    raise SchemaError(f"{where}: distribution must be 'constant' or 'uniform', got {dist!r}")


def parse_scenario(data: Mapping) -> SimScenario:
    if not isinstance(data, Mapping):
        raise SchemaError("scenario document must be a JSON object")
    _reject_unknown(data, _SCENARIO_KEYS, "scenario")

    brake_raw = data.get("brake", {})
    _reject_unknown(brake_raw, _BRAKE_KEYS, "scenario.brake")
    sensor_raw = data.get("sensor", {})
    _reject_unknown(sensor_raw, _SENSOR_KEYS, "scenario.sensor")

    latencies = default_latencies()
    lat_raw = data.get("latencies", {})
    if not isinstance(lat_raw, Mapping):
        raise SchemaError("scenario.latencies must be an object")
    for key, raw in lat_raw.items():
        if key not in FUNCTION_KEYS:
            raise SchemaError(f"scenario.latencies: unknown function {key!r}")
        latencies[key] = parse_latency_spec(raw, f"scenario.latencies.{key}")

    req_raw = data.get("requirements", {})
    _reject_unknown(req_raw, _REQ_CFG_KEYS, "scenario.requirements")
    budgets_raw = req_raw.get("budgets", {})
    _reject_unknown(budgets_raw, _BUDGET_CFG_KEYS, "scenario.requirements.budgets")
    admissible = req_raw.get("admissible_violation_fractions", {})
    if not isinstance(admissible, Mapping):
        raise SchemaError("admissible_violation_fractions must be an object")
    requirements = RequirementConfig(
        warning_lead_min_s=_number(req_raw, "warning_lead_min_s", "requirements", 0.8),
        acq_budget_s=_number(budgets_raw, "acq_s", "budgets", 0.45),
        det_budget_s=_number(budgets_raw, "det_s", "budgets", 0.01),
        trj_budget_s=_number(budgets_raw, "trj_s", "budgets", 0.03),
        col_budget_s=_number(budgets_raw, "col_s", "budgets", 0.01),
        wrn_budget_s=_number(budgets_raw, "wrn_s", "budgets", 0.8),
        det_error_rate_max=_number(req_raw, "det_error_rate_max", "requirements", 0.01),
        admissible=dict(admissible),
        avg_decel_mode=req_raw.get("avg_decel_mode", "tolerance"),
        avg_decel_tolerance=_number(req_raw, "avg_decel_tolerance", "requirements", 0.15),
        stop_time_mode=req_raw.get("stop_time_mode", "margin"),
        stop_time_margin_s=_number(req_raw, "stop_time_margin_s", "requirements", 0.05),
    )

    runs = data.get("runs", 1)
    seed = data.get("seed", 0)
    if isinstance(runs, bool) or not isinstance(runs, int):
        raise SchemaError("scenario.runs must be an integer")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("scenario.seed must be an integer")

    horizon = data.get("prediction_horizon_s")
    if horizon is not None:
        horizon = _number(data, "prediction_horizon_s", "scenario")
    p_const = data.get("p_detect_const")
    if p_const is not None:
        p_const = _number(data, "p_detect_const", "scenario")

    try:
        return SimScenario(
            id=data.get("id", "scenario"),
            v_initial=_number(data, "v_initial_mps", "scenario"),
            d_initial=_number(data, "d_initial_m", "scenario"),
            brake=BrakeParams(a_const=_number(brake_raw, "a_const_mps2", "brake"),
                              t_response=_number(brake_raw, "t_response_s", "brake")),
            sensor=SensorParams(r_g=_number(sensor_raw, "r_g_m", "sensor"),
                                r_max=_number(sensor_raw, "r_max_m", "sensor"),
                                f_sensor=_number(sensor_raw, "f_sensor_hz", "sensor")),
            f_trj=_number(data, "f_trj_hz", "scenario"),
            f_brake=_number(data, "f_brake_hz", "scenario"),
            latencies=latencies,
            warning_lead=_number(data, "warning_lead_s", "scenario", 0.8),
            seed=seed,
            runs=runs,
            prediction_horizon_s=horizon,
            p_detect_const=p_const,
            requirements=requirements,
        )
    except ValueError as exc:
        raise SchemaError(f"invalid scenario: {exc}") from None


def load_scenario_file(path: str | Path) -> SimScenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(json.load(fh))


def scenario_to_dict(scenario: SimScenario) -> dict:
    def lat_dict(spec: LatencySpec) -> dict:
        if spec.distribution == "constant":
            return {"distribution": "constant", "value_s": spec.value_s}
        return {"distribution": "uniform", "min_s": spec.min_s, "max_s": spec.max_s}

    return {
        "id": scenario.id,
        "v_initial_mps": scenario.v_initial,
        "d_initial_m": scenario.d_initial,
        "brake": {"a_const_mps2": scenario.brake.a_const,
                  "t_response_s": scenario.brake.t_response},
        "sensor": {"r_g_m": scenario.sensor.r_g, "r_max_m": scenario.sensor.r_max,
                   "f_sensor_hz": scenario.sensor.f_sensor},
        "f_trj_hz": scenario.f_trj,
        "f_brake_hz": scenario.f_brake,
        "latencies": {key: lat_dict(scenario.latencies[key]) for key in FUNCTION_KEYS},
        "warning_lead_s": scenario.warning_lead,
        "seed": scenario.seed,
        "runs": scenario.runs,
        "prediction_horizon_s": scenario.prediction_horizon_s,
        "p_detect_const": scenario.p_detect_const,
    }
