"""Point-mass race through moving gates.

The vehicle is a first-order reference tracker, so misses come from the
reference itself: a gate that moved after its last honoured update is
crossed off-centre.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from typing import Hashable

import numpy as np

from .dynamic import DynamicTrajectory, OutcomeKind, SecurityConfig, WaypointPassedError
from .poly import DynamicsLimits, SolverError, WaypointConstraint, as_vec3
from .timing import ComputationTimeEstimator

PASS = "pass"
MISS = "miss"
NO_CROSSING = "no-crossing"
SPEED_FLAG_FACTOR = 1.25
# plane crossings farther than this from the gate centre are not attempts at the gate
CROSSING_RADIUS = 2.5
# a gate is written off as missed this long after its scheduled time
_MISS_TIMEOUT = 2.0
# hard stop, as a multiple of the initial plan's duration
_MAX_TIME_FACTOR = 5.0


@dataclass(frozen=True)
class Gate:
    """Square gate moving side to side at constant speed (triangle wave)."""

    id: Hashable
    center: np.ndarray
    normal: np.ndarray
    axis: np.ndarray
    half_width: float = 0.75
    amplitude: float = 1.0
    speed: float = 0.1
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center, "center"))
        for name in ("normal", "axis"):
            v = np.array(as_vec3(getattr(self, name), name))
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ValueError(f"{name} must be non-zero")
            v = v / norm
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if self.amplitude < 0 or self.speed < 0:
            raise ValueError("amplitude and speed must be non-negative")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def period(self):
        if self.amplitude == 0 or self.speed == 0:
            return math.inf
        return 4.0 * self.amplitude / self.speed


def triangle_offset(t, amplitude, speed):
    """Side-to-side offset: starts at 0, reaches +amplitude at ``amplitude / speed``."""
    if amplitude == 0 or speed == 0:
        return 0.0
    u = (speed * t) % (4.0 * amplitude)
    if u <= amplitude:
        return u
    if u <= 3.0 * amplitude:
        return 2.0 * amplitude - u
    return u - 4.0 * amplitude


def gate_position(g, t):
    return g.center + g.axis * triangle_offset(t + g.phase, g.amplitude, g.speed)


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    t: float = 0.0


def step_vehicle(state, reference_pos, reference_vel, dt, tracker_lag, accel_limit=None):
    """Advance a first-order tracker by ``dt``.

    The commanded velocity is ``reference_vel + (reference_pos - position) / tracker_lag``.
    The step is the exact solution for a reference moving at constant
    velocity over ``dt``, so it is stable for any ``dt`` and reduces to exact
    tracking as ``tracker_lag`` goes to zero.

    With ``accel_limit`` the velocity change over the step is clipped to
    ``accel_limit * dt`` and the position advances with the mean velocity,
    so references the vehicle cannot physically follow open a tracking error.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    ref_p = np.asarray(reference_pos, dtype=float)
    ref_v = np.asarray(reference_vel, dtype=float)
    error = state.position - ref_p
    if tracker_lag > 0:
        decay = math.exp(-dt / tracker_lag)
        residual = error * decay
        velocity = ref_v - residual / tracker_lag
    else:
        residual = np.zeros(3)
        velocity = ref_v.copy()
    position = ref_p + ref_v * dt + residual
    if accel_limit is not None:
        dv = velocity - state.velocity
        norm = float(np.linalg.norm(dv))
        cap = accel_limit * dt
        if norm > cap:
            velocity = state.velocity + dv * (cap / norm)
            position = state.position + 0.5 * (state.velocity + velocity) * dt
    return VehicleState(position, velocity, state.t + dt)


def crossing_point(prev, nxt, g):
    """Where the segment ``prev -> nxt`` crosses the (moving) gate plane.

    Returns ``(time, point, gate_center)`` or ``None``.
    """
    c0 = gate_position(g, prev.t)
    c1 = gate_position(g, nxt.t)
    s0 = float(np.dot(prev.position - c0, g.normal))
    s1 = float(np.dot(nxt.position - c1, g.normal))
    if not ((s0 < 0.0 <= s1) or (s1 < 0.0 <= s0)) or s0 == s1:
        return None
    lam = s0 / (s0 - s1)
    t_c = prev.t + lam * (nxt.t - prev.t)
    point = prev.position + lam * (nxt.position - prev.position)
    return t_c, point, gate_position(g, t_c)


def check_gate_pass(prev, nxt, g, pass_tolerance=0.25, crossing_radius=CROSSING_RADIUS):
    hit = crossing_point(prev, nxt, g)
    if hit is None:
        return NO_CROSSING
    _, point, center = hit
    offset = point - center
    lateral = float(np.linalg.norm(offset - np.dot(offset, g.normal) * g.normal))
    if lateral > crossing_radius:
        return NO_CROSSING
    return PASS if lateral <= g.half_width + pass_tolerance else MISS


def default_circuit(half_width=0.75, amplitude=1.0, speed=0.1, altitude=1.5):
    """Four gates on the side midpoints of a 20 m x 10 m rectangle, flown counter-clockwise."""
    z = altitude
    spec = [
        ((10.0, 0.0, z), (1, 0, 0), (0, 1, 0)),
        ((20.0, 5.0, z), (0, 1, 0), (1, 0, 0)),
        ((10.0, 10.0, z), (-1, 0, 0), (0, 1, 0)),
        ((0.0, 5.0, z), (0, -1, 0), (1, 0, 0)),
    ]
    return tuple(
        Gate(i, c, n, a, half_width=half_width, amplitude=amplitude, speed=speed)
        for i, (c, n, a) in enumerate(spec)
    )


@dataclass(frozen=True)
class RaceConfig:
    gates: tuple = field(default_factory=default_circuit)
    laps: int = 5
    speed_limit: float = 10.0
    a_max: float = 20.0
    inflation: float = 0.0
    gate_update_period: float = 0.1
    pass_tolerance: float = 0.25
    sampler_rate: float = 100.0
    tracker_lag: float = 0.05
    # vehicle acceleration capability; None tracks any reference
    accel_limit: float | None = None
    security: SecurityConfig = field(default_factory=SecurityConfig)
    timing: str = "virtual"
    use_lgm: bool = True
    start: tuple = (0.0, 0.0, 1.5)
    finish_distance: float = 5.0
    randomize_phase: bool = True

    def __post_init__(self):
        if self.laps < 1 or not self.gates:
            raise ValueError("need at least one lap and one gate")
        for name in ("speed_limit", "a_max", "gate_update_period", "sampler_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.inflation < 0 or self.pass_tolerance < 0 or self.tracker_lag < 0:
            raise ValueError("inflation, pass_tolerance and tracker_lag must be non-negative")
        if self.accel_limit is not None and not self.accel_limit > 0:
            raise ValueError("accel_limit must be positive")


@dataclass(frozen=True)
class RaceResult:
    speed_limit: float
    inflation: float
    ref_max_speed: float
    ref_mean_speed: float
    max_speed: float
    mean_speed: float
    elapsed_time: float
    success_rate: float
    gate_log: tuple
    speed_flagged: bool
    regenerations: int
    lgm_count: int
    dropped: int
    solver_failures: int


def _phased_gates(config, seed):
    if not config.randomize_phase:
        return config.gates
    rng = np.random.default_rng(seed)
    out = []
    for g in config.gates:
        phase = float(rng.uniform(0.0, g.period)) if math.isfinite(g.period) else 0.0
        out.append(replace(g, phase=phase))
    return tuple(out)


def run_race(config, seed=0):
    """Fly ``config.laps`` laps and score every gate crossing.

    In wall mode regeneration solves run on a worker thread while the loop
    keeps stepping; the loop only blocks when simulation time reaches a
    regeneration's last stitching sample before the solve has finished.
    """
    if config.timing == "wall":
        with ThreadPoolExecutor(max_workers=1) as executor:
            return _run_race(config, seed, executor)
    return _run_race(config, seed, None)


def _run_race(config, seed, executor):
    gates = _phased_gates(config, seed)
    start = np.asarray(config.start, dtype=float)
    occurrences = [(lap, j) for lap in range(config.laps) for j in range(len(gates))]
    last = gates[-1]
    finish = gate_position(last, 0.0) + config.finish_distance * last.normal
    points = [start] + [gate_position(gates[j], 0.0) for _, j in occurrences] + [finish]
    ids = ["start"] + occurrences + ["finish"]

    estimator = ComputationTimeEstimator(inflation=config.inflation)
    traj = DynamicTrajectory.build(
        [WaypointConstraint(p) for p in points],
        DynamicsLimits(config.speed_limit, config.a_max),
        estimator,
        config.security,
        ids=ids,
        timing=config.timing,
        use_lgm=config.use_lgm,
        executor=executor,
    )

    dt = 1.0 / config.sampler_rate
    update_every = max(1, round(config.gate_update_period / dt))
    state = VehicleState(start.copy(), np.zeros(3), 0.0)
    results = {}
    gate_log = []
    idx = 0
    ref_speeds = []
    veh_speeds = []
    counts = {"regen": 0, "lgm": 0, "dropped": 0, "fail": 0}

    def tally(outcome, completed=False):
        if outcome.kind is OutcomeKind.REGENERATED and completed:
            counts["regen"] += 1
        elif outcome.kind is OutcomeKind.LGM_APPLIED:
            counts["lgm"] += 1
        elif outcome.kind is OutcomeKind.DROPPED:
            counts["dropped"] += 1
        for f in outcome.followups:
            tally(f)

    def fail_lap(t):
        nonlocal idx
        counts["fail"] += 1
        lap = occurrences[idx][0]
        while idx < len(occurrences) and occurrences[idx][0] == lap:
            gate_log.append((*occurrences[idx], MISS, t))
            results[occurrences[idx]] = MISS
            idx += 1

    k = 0
    t = 0.0
    elapsed = 0.0
    t_stop = _MAX_TIME_FACTOR * traj.end
    while idx < len(occurrences):
        t = k * dt
        if t > min(traj.end + 2 * _MISS_TIMEOUT, t_stop):
            break
        regen = traj.pending
        if regen is not None and regen.future is not None and t >= regen.deadline:
            wait([regen.future])
        try:
            outcome = traj.advance(t)
            if outcome is not None:
                tally(outcome, completed=True)
            if k % update_every == 0 and k > 0:
                for occ in occurrences[idx : idx + len(gates)]:
                    w = traj.state.waypoint(occ)
                    if w.t_w <= t:
                        continue
                    try:
                        tally(traj.modify_waypoint(occ, gate_position(gates[occ[1]], t), t))
                    except WaypointPassedError:
                        continue
        except SolverError:
            fail_lap(t)
            if idx >= len(occurrences):
                break

        ref = traj.sample(t)
        nxt = step_vehicle(
            state, ref.position, ref.velocity, dt, config.tracker_lag, config.accel_limit
        )
        ref_speeds.append(float(np.linalg.norm(ref.velocity)))
        veh_speeds.append(float(np.linalg.norm(nxt.velocity)))

        occ = occurrences[idx]
        verdict = check_gate_pass(state, nxt, gates[occ[1]], config.pass_tolerance)
        if verdict == NO_CROSSING and nxt.t > traj.state.waypoint(occ).t_w + _MISS_TIMEOUT:
            verdict = MISS
        if verdict != NO_CROSSING:
            gate_log.append((*occ, verdict, nxt.t))
            results[occ] = verdict
            idx += 1
            elapsed = nxt.t
        state = nxt
        k += 1

    for occ in occurrences[idx:]:
        gate_log.append((*occ, MISS, t))
        results[occ] = MISS
    passes = sum(1 for v in results.values() if v == PASS)
    max_speed = max(veh_speeds, default=0.0)
    return RaceResult(
        speed_limit=config.speed_limit,
        inflation=config.inflation,
        ref_max_speed=max(ref_speeds, default=0.0),
        ref_mean_speed=float(np.mean(ref_speeds)) if ref_speeds else 0.0,
        max_speed=max_speed,
        mean_speed=float(np.mean(veh_speeds)) if veh_speeds else 0.0,
        elapsed_time=elapsed,
        success_rate=passes / len(occurrences),
        gate_log=tuple(gate_log),
        speed_flagged=max_speed > SPEED_FLAG_FACTOR * config.speed_limit,
        regenerations=counts["regen"],
        lgm_count=counts["lgm"],
        dropped=counts["dropped"],
        solver_failures=counts["fail"],
    )
