"""Composite dynamic trajectory: base polynomial plus stacked Gaussian modifiers.

Modifications are dispatched by how much time is left before the next
waypoint. With enough time the base is re-solved from stitching samples of
the live trajectory and swapped in when the solve finishes; inside the
security zone the waypoint is moved with a Gaussian modifier instead.

Readers (samplers) never take a lock: every published ``TrajectoryState`` is
immutable and replaced by a single attribute assignment, so a sample is
always served from one consistent state. Writers are serialised by an
internal lock.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Hashable, NamedTuple

import numpy as np

from .lgm import WIDTH_DIVISOR, GaussianModifier, ModifierBank, TooLateError, make_lgm
from .poly import (
    DynamicsLimits,
    PiecewisePolynomial,
    WaypointConstraint,
    as_vec3,
    plan_trajectory,
)
from .timing import REFERENCE_SOLVE_TIMES, ComputationTimeEstimator

log = logging.getLogger(__name__)

TIMING_MODES = ("wall", "virtual")
# minimum spacing between a carried waypoint and a stitching sample, in units of t_offset
_CARRY_GAP = 0.1
_TARGET_TOL = 1e-6


class UnknownWaypointError(KeyError):
    pass


class WaypointPassedError(ValueError):
    pass


class SwapAbortedError(RuntimeError):
    """The new base arrived after the last stitching waypoint had been flown."""


@dataclass(frozen=True)
class SecurityConfig:
    """Security-zone and stitching parameters.

    ``min_time`` floors the zone length: a regeneration pinned to the live
    state cannot move a waypoint that is only a few tens of milliseconds
    ahead without a violent correction, however fast the solver is.
    ``lead_ratio`` extends it for the first waypoint after the hand-over:
    unless the lead time to it is at least ``lead_ratio`` times the segment
    that follows, moving it swings that segment widely.
    """

    c_security: float = 5.0
    n_smooth: int = 1
    alpha: float = 1.5
    min_time: float = 0.2
    lead_ratio: float = 0.25

    def __post_init__(self):
        if self.c_security < 1:
            raise ValueError("c_security must be >= 1")
        if self.min_time < 0 or self.lead_ratio < 0:
            raise ValueError("min_time and lead_ratio must be non-negative")
        if int(self.n_smooth) != self.n_smooth or self.n_smooth < 1:
            raise ValueError("n_smooth must be a positive integer")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")


@dataclass(frozen=True)
class DynamicWaypoint:
    id: Hashable
    constraint: WaypointConstraint
    t_w: float

    @property
    def position(self):
        return self.constraint.position


class OutcomeKind(str, enum.Enum):
    REGENERATED = "regenerated"
    LGM_APPLIED = "lgm_applied"
    REJECTED_TOO_LATE = "rejected_too_late"
    DROPPED = "dropped"
    ABORTED = "aborted"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class ModificationOutcome:
    kind: OutcomeKind
    modifier: GaussianModifier | None = None
    regeneration: Regeneration | None = None
    epoch: int | None = None
    deferred: bool = False
    followups: tuple = ()


class Sample(NamedTuple):
    t: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    epoch: int
    modifier_count: int


class Event(NamedTuple):
    t: float
    kind: str
    waypoint_id: Any
    epoch: int


@dataclass(frozen=True)
class TrajectoryState:
    """One published generation of the composite trajectory."""

    base: PiecewisePolynomial
    waypoints: tuple
    modifiers: MappingProxyType
    bank: ModifierBank
    epoch: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {w.id: i for i, w in enumerate(self.waypoints)})

    def waypoint(self, waypoint_id):
        try:
            return self.waypoints[self._index[waypoint_id]]
        except KeyError:
            raise UnknownWaypointError(waypoint_id) from None

    def evaluate_all(self, t):
        """Position, velocity and acceleration at scalar ``t``, shape (3, 3)."""
        return self.base.evaluate_all(t, 2) + self.bank.evaluate_all(t)

    def __call__(self, t, order=0):
        if order not in (0, 1, 2, 3):
            raise ValueError(f"composite derivative order must be 0 to 3, got {order}")
        return self.base(t, order) + self.bank(t, order)

    def next_waypoint(self, t):
        for w in self.waypoints:
            if w.t_w > t:
                return w
        return None

    def pending_waypoints(self, t):
        return [w for w in self.waypoints if w.t_w > t]


def _state(base, waypoints, modifiers, epoch):
    mods = {k: tuple(v) for k, v in modifiers.items() if v}
    bank = ModifierBank.from_modifiers(m for ms in mods.values() for m in ms)
    return TrajectoryState(base, tuple(waypoints), MappingProxyType(mods), bank, epoch)


@dataclass
class Regeneration:
    """A base re-solve started at ``t_gen`` and not yet swapped in."""

    t_gen: float
    swap_times: np.ndarray
    n_waypoints: int
    expected_duration: float
    inflation: float
    timing: str
    clamped: bool = False
    base: PiecewisePolynomial | None = None
    waypoints: tuple | None = None
    solve_seconds: float | None = None
    feasible: bool | None = None
    future: Any = None
    error: BaseException | None = None

    @property
    def deadline(self):
        return float(self.swap_times[-1])

    def done(self):
        if self.future is not None and not self.future.done():
            return False
        self._collect()
        return True

    def _collect(self):
        if self.future is not None and self.base is None and self.error is None:
            try:
                self.base, self.waypoints, self.solve_seconds, self.feasible = self.future.result()
            except Exception as exc:  # surfaced on completion
                self.error = exc

    @property
    def ready_at(self):
        """Earliest trajectory time at which the result may be swapped in."""
        if self.timing == "virtual":
            return self.t_gen + self.expected_duration
        if not self.done():
            return float("inf")
        return self.t_gen + (self.solve_seconds or 0.0) + self.inflation


def security_time(estimator, n, config):
    return max(config.c_security * estimator.estimate(n), config.min_time)


class DynamicTrajectory:
    """Composite trajectory with online waypoint modification.

    Build with :meth:`build` (or :func:`build_initial`). ``timing="virtual"``
    replaces measured solve durations with the estimator's model plus
    inflation so runs are reproducible; ``timing="wall"`` measures solves with
    the monotonic clock and feeds them back into the estimator.
    """

    def __init__(
        self,
        state,
        limits,
        estimator,
        config=None,
        *,
        timing="wall",
        use_lgm=True,
        executor=None,
    ):
        if timing not in TIMING_MODES:
            raise ValueError(f"timing must be one of {TIMING_MODES}, got {timing!r}")
        self._state = state
        self.limits = limits
        self.estimator = estimator
        self.config = config or SecurityConfig()
        self.timing = timing
        self.use_lgm = use_lgm
        self.executor = executor
        self._lock = threading.RLock()
        self._targets = {w.id: w.position for w in state.waypoints}
        self._pending = None
        # a regeneration was requested while the stitching window was busy
        self._stale = False
        self.events = []

    @classmethod
    def build(
        cls,
        waypoints,
        limits,
        estimator=None,
        config=None,
        *,
        ids=None,
        start_time=0.0,
        timing="wall",
        use_lgm=True,
        executor=None,
    ):
        waypoints = list(waypoints)
        if len(waypoints) < 2:
            raise ValueError("at least two waypoints are required")
        ids = list(range(len(waypoints))) if ids is None else list(ids)
        if len(ids) != len(waypoints) or len(set(ids)) != len(ids):
            raise ValueError("waypoint ids must be unique and match the waypoints")
        if estimator is None:
            estimator = ComputationTimeEstimator()
        if estimator.empty:
            if timing == "virtual":
                estimator.record(6, REFERENCE_SOLVE_TIMES[6])
            else:
                estimator.seed()
        t0 = time.perf_counter()
        plan = plan_trajectory(waypoints, limits, start_time=start_time)
        elapsed = time.perf_counter() - t0
        n = len(waypoints)
        estimator.record(n, estimator.model(n) if timing == "virtual" else max(elapsed, 1e-9))
        dyn = [
            DynamicWaypoint(i, w, float(t))
            for i, w, t in zip(ids, waypoints, plan.trajectory.knots)
        ]
        state = _state(plan.trajectory, dyn, {}, 0)
        return cls(
            state,
            limits,
            estimator,
            config,
            timing=timing,
            use_lgm=use_lgm,
            executor=executor,
        )

    # ---- read side (lock-free) ----

    @property
    def state(self):
        return self._state

    @property
    def base(self):
        return self._state.base

    @property
    def waypoints(self):
        return self._state.waypoints

    @property
    def modifiers(self):
        return self._state.modifiers

    @property
    def epoch(self):
        return self._state.epoch

    @property
    def pending(self):
        return self._pending

    @property
    def end(self):
        return self._state.base.end

    def __call__(self, t, order=0):
        return self._state(t, order)

    def sample(self, t):
        s = self._state
        v = s.evaluate_all(t)
        return Sample(float(t), v[0], v[1], v[2], s.epoch, len(s.bank))

    def target(self, waypoint_id):
        return self._targets[waypoint_id]

    def interference(self):
        """Displacement at each waypoint caused by modifiers owned by other waypoints."""
        s = self._state
        out = {}
        for w in s.waypoints:
            others = [m for k, ms in s.modifiers.items() if k != w.id for m in ms]
            if others:
                out[w.id] = float(np.linalg.norm(ModifierBank.from_modifiers(others)(w.t_w)))
            else:
                out[w.id] = 0.0
        return out

    # ---- dispatch helpers ----

    def regeneration_size(self, t):
        return self.config.n_smooth + 1 + len(self._state.pending_waypoints(t))

    def security_time(self, n, estimator=None, config=None):
        return security_time(estimator or self.estimator, n, config or self.config)

    def in_security_zone(self, t_now, estimator=None, config=None):
        s = self._state
        nxt = s.next_waypoint(t_now)
        if nxt is None:
            return False
        config = config or self.config
        n = config.n_smooth + 1 + len(s.pending_waypoints(t_now))
        return (nxt.t_w - t_now) < self.security_time(n, estimator, config)

    def hold_until(self, t_gen, state=None):
        """Latest waypoint time a regeneration started at ``t_gen`` leaves in place.

        Covers waypoints inside the stitching window, an in-zone next
        waypoint, and the first one after the hand-over when it is too close
        to be moved gently. Those are edited by modifiers only.
        """
        s = state or self._state
        pending = s.pending_waypoints(t_gen)
        n = self.config.n_smooth + 1 + len(pending)
        deadline = t_gen + self.swap_offsets(n)[-1]
        hold = deadline
        if pending and pending[0].t_w - t_gen < self.security_time(n):
            hold = max(hold, pending[0].t_w)
        for i, w in enumerate(pending):
            if w.t_w > hold:
                follow = pending[i + 1].t_w - w.t_w if i + 1 < len(pending) else 0.0
                lead = w.t_w - deadline
                if lead < max(self.config.min_time, self.config.lead_ratio * follow):
                    hold = w.t_w
                break
        return hold

    def swap_offsets(self, n, estimator=None, config=None):
        estimator = estimator or self.estimator
        config = config or self.config
        t_offset = config.alpha * estimator.estimate(n) / config.n_smooth
        return t_offset * np.arange(config.n_smooth + 1)

    def swap_waypoints(self, t_gen, n=None, estimator=None, config=None, state=None):
        """Stitching constraints sampled from the live composite trajectory.

        Returns ``(constraints, times, clamped)``; ``clamped`` is true when
        the last sample lies past the end of the trajectory.
        """
        s = state or self._state
        if n is None:
            n = self.regeneration_size(t_gen)
        times = t_gen + self.swap_offsets(n, estimator, config)
        clamped = bool(times[-1] > s.base.end)
        if clamped:
            log.warning("stitching samples past trajectory end at t=%.6g", times[-1])
        constraints = []
        for t in times:
            p, v, a = s.evaluate_all(t)
            constraints.append(WaypointConstraint(p, v, a))
        # jerk at the hand-over point decouples the new tail from the short
        # stitching segments, which would otherwise dictate it
        constraints[-1] = replace(constraints[-1], jerk=s(times[-1], 3))
        return constraints, times, clamped

    # ---- write side ----

    def modify_waypoint(self, waypoint_id, new_position, t_now):
        new_position = as_vec3(new_position, "new_position")
        with self._lock:
            s = self._state
            w = s.waypoint(waypoint_id)
            if t_now == w.t_w:
                self._event(t_now, OutcomeKind.REJECTED_TOO_LATE, waypoint_id)
                return ModificationOutcome(OutcomeKind.REJECTED_TOO_LATE)
            if w.t_w < t_now:
                raise WaypointPassedError(
                    f"waypoint {waypoint_id!r} was passed at t={w.t_w:.6g} (now {t_now:.6g})"
                )
            if (
                np.max(np.abs(new_position - self._targets[waypoint_id])) <= _TARGET_TOL
                and np.max(np.abs(s.evaluate_all(w.t_w)[0] - new_position)) <= _TARGET_TOL
            ):
                # already there; a static gate reporting in must not force a solve
                return ModificationOutcome(OutcomeKind.UNCHANGED)
            if w.t_w <= self.hold_until(t_now, s):
                return self._apply_lgm(s, w, new_position, t_now)
            self._targets[waypoint_id] = new_position
            if self._pending is not None:
                return ModificationOutcome(
                    OutcomeKind.REGENERATED, regeneration=self._pending, deferred=True
                )
            if self.window_busy(t_now):
                self._stale = True
                return ModificationOutcome(OutcomeKind.REGENERATED, deferred=True)
            regen = self._start_regeneration(t_now)
            self._event(t_now, OutcomeKind.REGENERATED, waypoint_id)
            return ModificationOutcome(OutcomeKind.REGENERATED, regeneration=regen)

    def window_busy(self, t_gen):
        """True when a live modifier reaches into the stitching window starting at ``t_gen``.

        Stitching samples taken inside a modifier inherit its derivatives, and
        once the modifier is discarded at swap the new base has to recreate
        its bend from position constraints alone. Regeneration waits until
        the window is clear.
        """
        params = self._state.bank.params
        if not len(params):
            return False
        t_end = t_gen + self.swap_offsets(self.regeneration_size(t_gen))[-1]
        reach = WIDTH_DIVISOR * params[:, 4]
        mu = params[:, 3]
        return bool(np.any((mu + reach >= t_gen) & (mu - reach <= t_end)))

    def _apply_lgm(self, s, w, new_position, t_now):
        if not self.use_lgm:
            self._event(t_now, OutcomeKind.DROPPED, w.id)
            return ModificationOutcome(OutcomeKind.DROPPED)
        current = s.evaluate_all(w.t_w)[0]
        try:
            m = make_lgm(current, new_position, w.t_w, t_now, w.id)
        except TooLateError:
            return ModificationOutcome(OutcomeKind.REJECTED_TOO_LATE)
        mods = dict(s.modifiers)
        mods[w.id] = mods.get(w.id, ()) + (m,)
        state = TrajectoryState(
            s.base, s.waypoints, MappingProxyType(mods), s.bank.appended(m), s.epoch
        )
        self._state = state
        self._targets[w.id] = new_position
        self._event(t_now, OutcomeKind.LGM_APPLIED, w.id)
        return ModificationOutcome(OutcomeKind.LGM_APPLIED, modifier=m, epoch=s.epoch)

    def regenerate(self, t_gen):
        """Start a base re-solve from the live state at ``t_gen`` with the current targets.

        Returns the pending :class:`Regeneration`; an already pending one is
        returned unchanged.
        """
        with self._lock:
            if self._pending is not None:
                return self._pending
            if not self._state.pending_waypoints(t_gen):
                raise ValueError(f"no waypoint left after t={t_gen:.6g}")
            regen = self._start_regeneration(t_gen)
            self._event(t_gen, OutcomeKind.REGENERATED, None)
            return regen

    def _start_regeneration(self, t_gen):
        self._stale = False
        s = self._state
        pending = s.pending_waypoints(t_gen)
        n = self.config.n_smooth + 1 + len(pending)
        swap, times, clamped = self.swap_waypoints(t_gen, n, state=s)
        gap = _CARRY_GAP * (times[1] - times[0])

        fixed = list(zip(times, swap))
        carried = []
        free = []
        hold = self.hold_until(t_gen, s)
        for w in pending:
            if w.t_w <= hold:
                pos = s.evaluate_all(w.t_w)[0]
                c = WaypointConstraint(pos, w.constraint.velocity, w.constraint.acceleration)
                carried.append(DynamicWaypoint(w.id, c, w.t_w))
                if np.min(np.abs(times - w.t_w)) > gap:
                    fixed.append((w.t_w, WaypointConstraint(pos)))
            else:
                free.append(w)
        fixed.sort(key=lambda item: item[0])
        fixed_times = np.array([t for t, _ in fixed])
        solver_points = [c for _, c in fixed] + [
            WaypointConstraint(self._targets[w.id], w.constraint.velocity, w.constraint.acceleration)
            for w in free
        ]
        limits = self.limits
        timing = self.timing
        m = len(fixed)
        # keep the live schedule for free waypoints and never stretch it:
        # re-allocating from rest every update makes the vehicle creep toward
        # the next waypoint, and stretching only the tail distorts a plan
        # whose head is pinned to the live state
        durations = np.diff([fixed_times[-1]] + [w.t_w for w in free])

        def solve():
            t0 = time.perf_counter()
            plan = plan_trajectory(
                solver_points, limits, fixed_times=fixed_times, durations=durations, max_rescale=0
            )
            elapsed = max(time.perf_counter() - t0, 1e-9)
            knots = plan.trajectory.knots
            moved = [
                DynamicWaypoint(w.id, solver_points[m + i], float(knots[m + i]))
                for i, w in enumerate(free)
            ]
            return plan.trajectory, tuple(carried + moved), elapsed, plan.feasible

        regen = Regeneration(
            t_gen=float(t_gen),
            swap_times=times,
            n_waypoints=n,
            expected_duration=self.estimator.estimate(n),
            inflation=self.estimator.inflation,
            timing=timing,
            clamped=clamped,
        )
        if self.executor is not None:
            regen.future = self.executor.submit(solve)
        else:
            try:
                regen.base, regen.waypoints, regen.solve_seconds, regen.feasible = solve()
            except Exception as exc:
                regen.error = exc
        self._pending = regen
        return regen

    def advance(self, t_now):
        """Swap in a pending regeneration once it is ready at time ``t_now``.

        Returns the completion outcome, or ``None`` when nothing was due.
        """
        regen = self._pending
        if regen is None:
            with self._lock:
                if self._stale and self._pending is None and not self.window_busy(t_now):
                    self._stale = False
                    if self._state.pending_waypoints(t_now):
                        self._start_regeneration(t_now)
                        self._event(t_now, OutcomeKind.REGENERATED, None)
            return None
        if not regen.done() or t_now < regen.ready_at:
            return None
        # the solve finished at ready_at in trajectory time; swapping there
        # rather than at the (coarser) caller tick keeps it inside the window
        return self.complete_regeneration(regen, regen.ready_at)

    def complete_regeneration(self, regen, t_swap):
        with self._lock:
            if self._pending is regen:
                self._pending = None
            regen.done()
            if regen.error is not None:
                raise regen.error
            if self.timing == "wall":
                self.estimator.record(regen.n_waypoints, regen.solve_seconds)
            try:
                self.swap_in(regen.base, regen.waypoints, t_swap, deadline=regen.deadline)
            except SwapAbortedError:
                self._event(t_swap, OutcomeKind.ABORTED, None)
                kind = OutcomeKind.ABORTED
            else:
                kind = OutcomeKind.REGENERATED
            followups = self._redispatch(t_swap)
            return ModificationOutcome(
                kind, regeneration=regen, epoch=self._state.epoch, followups=tuple(followups)
            )

    def _redispatch(self, t_now):
        out = []
        for w in self._state.pending_waypoints(t_now):
            target = self._targets[w.id]
            current = self._state.evaluate_all(w.t_w)[0]
            if np.max(np.abs(current - target)) > _TARGET_TOL:
                out.append(self.modify_waypoint(w.id, target, t_now))
        return out

    def swap_in(self, new_base, new_waypoints, t_swap, deadline=None):
        """Publish ``new_base`` as the next epoch; old modifiers are discarded."""
        with self._lock:
            if deadline is not None and t_swap > deadline:
                raise SwapAbortedError(
                    f"swap at t={t_swap:.6g} is past the last stitching sample {deadline:.6g}"
                )
            s = self._state
            new_waypoints = tuple(new_waypoints)
            replaced = {w.id for w in new_waypoints}
            kept = [w for w in s.waypoints if w.id not in replaced and w.t_w <= new_base.start]
            state = _state(new_base, kept + list(new_waypoints), {}, s.epoch + 1)
            self._state = state
            for w in new_waypoints:
                self._targets.setdefault(w.id, w.position)
            self._event(t_swap, "swap", None)
            return self

    def _event(self, t, kind, waypoint_id):
        self.events.append(Event(float(t), str(getattr(kind, "value", kind)), waypoint_id, self._state.epoch))


def build_initial(waypoints, limits, estimator=None, config=None, **kwargs):
    return DynamicTrajectory.build(waypoints, limits, estimator, config, **kwargs)


def eval_dyn(traj, t, order=0):
    return traj(t, order)


def in_security_zone(traj, t_now, estimator=None, config=None):
    return traj.in_security_zone(t_now, estimator, config)


def make_swap_waypoints(traj, t_gen, n=None, estimator=None, config=None):
    constraints, _, _ = traj.swap_waypoints(t_gen, n, estimator, config)
    return constraints


def modify_waypoint(traj, waypoint_id, new_position, t_now):
    return traj.modify_waypoint(waypoint_id, new_position, t_now)


def swap_in(traj, new_base, new_waypoints, t_swap, deadline=None):
    return traj.swap_in(new_base, new_waypoints, t_swap, deadline)
