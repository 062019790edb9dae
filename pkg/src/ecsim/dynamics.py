"""Closed-form AEB braking kinematics, trigger predicates, and sensor model.

Braking is modeled in two phases: a response phase where deceleration ramps
linearly from 0 to a_const over t_response (position follows a cubic), then a
constant phase at a_const until standstill (position quadratic). All
quantities here are exact closed forms; there is no numeric integration.

The time-to-react TTR(d, v) = (d - s_stop(v)) / v is the time remaining, at
constant speed, before the distance to the obstacle shrinks to the stopping
distance. Braking must start at TTR = 0 at the latest; the warning threshold
adds a fixed lead (0.8 s per the AEBS regulation).

Trigger predicates use strict inequalities (ttr < 0, ttr < lead); budget and
slack comparisons elsewhere are boundary-inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BrakeParams:
    """Deceleration magnitude (m/s^2) and linear ramp duration (s)."""

    a_const: float
    t_response: float

    def __post_init__(self):
        if self.a_const <= 0:
            raise ValueError(f"a_const must be > 0, got {self.a_const}")
        if self.t_response < 0:
            raise ValueError(f"t_response must be >= 0, got {self.t_response}")


@dataclass(frozen=True)
class SensorParams:
    """Truncated sensor model parameters.

    Detection is certain inside the guaranteed range r_g, decays
    exponentially out to the cutoff r_max, and is impossible beyond it.
    """

    r_g: float
    r_max: float
    f_sensor: float

    def __post_init__(self):
        if not 0 < self.r_g < self.r_max:
            raise ValueError(f"need 0 < r_g < r_max, got r_g={self.r_g}, r_max={self.r_max}")
        if self.f_sensor <= 0:
            raise ValueError(f"f_sensor must be > 0, got {self.f_sensor}")


@dataclass(frozen=True)
class EgoState:
    """Current distance to the obstacle (m) and ego speed (m/s)."""

    d_o: float
    v_ego: float

    def __post_init__(self):
        if self.v_ego < 0:
            raise ValueError(f"v_ego must be >= 0, got {self.v_ego}")


def _check_ramp_speed(v_initial: float, p: BrakeParams) -> float:
    """Speed left when the ramp ends; negative means the scenario is outside the model."""
    if v_initial < 0:
        raise ValueError(f"v_initial must be >= 0, got {v_initial}")
    v_remaining = v_initial - 0.5 * p.a_const * p.t_response
    if v_remaining < 0:
        raise ValueError(
            f"ramp alone would overshoot standstill (v_initial={v_initial}, "
            f"a_const={p.a_const}, t_response={p.t_response})")
    return v_remaining


def stopping_distance(v_initial: float, p: BrakeParams) -> float:
    """Total distance to standstill: cubic ramp segment plus quadratic constant segment."""
    v_remaining = _check_ramp_speed(v_initial, p)
    if p.t_response == 0:
        return v_initial * v_initial / (2.0 * p.a_const)
    s_response = v_initial * p.t_response - p.a_const * p.t_response ** 2 / 6.0
    t_const = v_remaining / p.a_const
    s_const = v_remaining * t_const - p.a_const * t_const ** 2 / 2.0
    return s_response + s_const


def stopping_time(v_initial: float, p: BrakeParams) -> float:
    """Time to standstill: ramp duration plus constant-deceleration duration."""
    v_remaining = _check_ramp_speed(v_initial, p)
    return p.t_response + v_remaining / p.a_const


def ttr(state: EgoState, p: BrakeParams) -> float:
    """Signed time-to-react under the constant-speed approximation.

    Zero exactly when the obstacle distance equals the stopping distance;
    negative once the last possible reaction point has passed. Undefined at
    standstill.
    """
    if state.v_ego <= 0:
        raise ValueError("ttr is undefined for v_ego = 0")
    return (state.d_o - stopping_distance(state.v_ego, p)) / state.v_ego


def should_brake(state: EgoState, p: BrakeParams) -> bool:
    """Emergency braking trigger: strictly past the last reaction point."""
    return ttr(state, p) < 0.0


def should_warn(state: EgoState, p: BrakeParams, lead: float = 0.8) -> bool:
    """Forward-collision warning trigger: within `lead` seconds of the braking point."""
    return ttr(state, p) < lead


def detection_probability(d_o: float, s: SensorParams) -> float:
    """Per-sample detection probability of the truncated sensor model."""
    if d_o < 0:
        raise ValueError(f"d_o must be >= 0, got {d_o}")
    if d_o <= s.r_g:
        return 1.0
    if d_o <= s.r_max:
        return math.exp(-(d_o - s.r_g) / (s.r_max - s.r_g))
    return 0.0


@dataclass(frozen=True)
class MotionSample:
    """Instantaneous braking state: deceleration (m/s^2), speed (m/s), distance traveled (m)."""

    decel: float
    v: float
    distance_traveled: float


def deceleration_profile(t_since_brake: float, p: BrakeParams, v_at_brake: float) -> MotionSample:
    """Exact braking kinematics at time t after brake initiation.

    Ramp phase: decel = a*t/t_r, distance = v0*t - a*t^3/(6*t_r).
    Constant phase: standard quadratic. Clamps to the stopped state at and
    after the stopping time.
    """
    if t_since_brake < 0:
        raise ValueError(f"t_since_brake must be >= 0, got {t_since_brake}")
    v_remaining = _check_ramp_speed(v_at_brake, p)
    t_stop = stopping_time(v_at_brake, p)
    if t_since_brake >= t_stop:
        return MotionSample(0.0, 0.0, stopping_distance(v_at_brake, p))
    if p.t_response > 0 and t_since_brake <= p.t_response:
        t = t_since_brake
        return MotionSample(
            decel=p.a_const * t / p.t_response,
            v=v_at_brake - p.a_const * t * t / (2.0 * p.t_response),
            distance_traveled=v_at_brake * t - p.a_const * t ** 3 / (6.0 * p.t_response))
    tau = t_since_brake - p.t_response
    s_response = (v_at_brake * p.t_response - p.a_const * p.t_response ** 2 / 6.0
                  if p.t_response > 0 else 0.0)
    return MotionSample(
        decel=p.a_const,
        v=v_remaining - p.a_const * tau,
        distance_traveled=s_response + v_remaining * tau - p.a_const * tau ** 2 / 2.0)
