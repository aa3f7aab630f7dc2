"""Sampled reference traces of a dynamic trajectory under scripted edits."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dynamic import DynamicTrajectory, OutcomeKind, WaypointPassedError
from .sim import VehicleState, step_vehicle
from .timing import ComputationTimeEstimator

_AXES = ("x", "y", "z")
REFERENCE_COLUMNS = (
    ("t",)
    + tuple(f"pos_{a}" for a in _AXES)
    + tuple(f"vel_{a}" for a in _AXES)
    + tuple(f"acc_{a}" for a in _AXES)
)
VEHICLE_COLUMNS = tuple(f"veh_pos_{a}" for a in _AXES) + tuple(f"veh_vel_{a}" for a in _AXES)
TAIL_COLUMNS = ("epoch", "modifiers")


class TraceRecord(NamedTuple):
    t: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    epoch: int
    modifiers: int
    vehicle_position: np.ndarray | None = None
    vehicle_velocity: np.ndarray | None = None

    def row(self):
        out = [self.t, *self.position, *self.velocity, *self.acceleration]
        if self.vehicle_position is not None:
            out += [*self.vehicle_position, *self.vehicle_velocity]
        return [float(v) for v in out] + [int(self.epoch), int(self.modifiers)]


def columns(with_vehicle=False):
    return REFERENCE_COLUMNS + (VEHICLE_COLUMNS if with_vehicle else ()) + TAIL_COLUMNS


class TraceRun(NamedTuple):
    records: list
    trajectory: DynamicTrajectory
    outcomes: list
    # (publish time, TrajectoryState) for every state the sampler could see
    history: list

    def state_at(self, t):
        """The state that was live at time ``t``."""
        live = self.history[0][1]
        for t_pub, s in self.history:
            if t_pub > t:
                break
            live = s
        return live


class ModificationError(ValueError):
    """A scripted edit targets a waypoint the trajectory has already passed."""


def run_trace(scenario, executor=None):
    """Sample the composite reference at ``scenario.rate`` from start to end.

    Scripted modifications are applied at their own time stamps, between
    samples, and pending regenerations are swapped in as they become ready.
    """
    traj = DynamicTrajectory.build(
        scenario.waypoints,
        scenario.limits,
        ComputationTimeEstimator(inflation=scenario.inflation),
        scenario.security,
        timing=scenario.timing,
        use_lgm=scenario.use_lgm,
        executor=executor,
    )
    dt = 1.0 / scenario.rate
    t0 = traj.state.base.start
    veh = scenario.vehicle
    vstate = None
    if veh is not None:
        vstate = VehicleState(np.array(traj(t0)), np.zeros(3), t0)
    mods = list(scenario.modifications)
    records, outcomes = [], []
    history = [(t0, traj.state)]

    def publish(t):
        if traj.state is not history[-1][1]:
            history.append((t, traj.state))
    j = 0
    k = 0
    while True:
        t = t0 + k * dt
        while j < len(mods) and mods[j].t <= t:
            m = mods[j]
            _collect(outcomes, traj.advance(m.t), publish)
            try:
                outcomes.append(traj.modify_waypoint(m.waypoint, m.position, m.t))
            except WaypointPassedError as exc:
                raise ModificationError(f"modifications[{j}]: {exc}") from exc
            publish(m.t)
            j += 1
        _collect(outcomes, traj.advance(t), publish)
        if t > traj.end + 1e-9:
            break
        s = traj.sample(t)
        rec = TraceRecord(s.t, s.position, s.velocity, s.acceleration, s.epoch, s.modifier_count)
        if vstate is not None:
            rec = rec._replace(vehicle_position=vstate.position, vehicle_velocity=vstate.velocity)
            vstate = step_vehicle(
                vstate, s.position, s.velocity, dt,
                veh.get("tracker_lag", 0.05), veh.get("accel_limit"),
            )
        records.append(rec)
        k += 1
    return TraceRun(records, traj, outcomes, history)


def _collect(outcomes, outcome, publish):
    if outcome is not None:
        outcomes.append(outcome)
        # swaps happen at the solve's ready time, not at the caller's tick
        t_swap = outcome.regeneration.ready_at if outcome.regeneration is not None else None
        if t_swap is not None:
            publish(t_swap)


def lgm_outcomes(outcomes):
    out = []
    for o in outcomes:
        if o.kind is OutcomeKind.LGM_APPLIED:
            out.append(o)
        out.extend(lgm_outcomes(o.followups))
    return out
