"""Online estimate of how long a base-trajectory solve takes for n waypoints."""

from __future__ import annotations

import threading
import time

import numpy as np

# measured base-trajectory solve times on a laptop-class CPU (seconds)
REFERENCE_SOLVE_TIMES = {6: 13.71e-3, 14: 88.93e-3, 26: 309.08e-3}


def fit_power_law(samples):
    """Least-squares exponent ``p`` of ``T(n) = c * n**p`` on log-log axes."""
    n = np.log(np.array(list(samples.keys()), dtype=float))
    t = np.log(np.array(list(samples.values()), dtype=float))
    p, _ = np.polyfit(n, t, 1)
    return float(p)


SCALING_EXPONENT = fit_power_law(REFERENCE_SOLVE_TIMES)


class ComputationTimeEstimator:
    """Running mean of observed solve durations per waypoint count.

    Counts with no observations are extrapolated from the nearest observed
    count with ``T(n) = T(n0) * (n / n0) ** exponent``. ``inflation`` is a
    fixed number of seconds added to every reported estimate; it never
    touches the recorded samples.

    Safe to use from several threads.
    """

    def __init__(self, inflation=0.0, exponent=SCALING_EXPONENT, samples=None):
        if inflation < 0:
            raise ValueError("inflation must be non-negative")
        self.inflation = float(inflation)
        self.exponent = float(exponent)
        self._stats = {}
        self._lock = threading.Lock()
        for n, duration in (samples or {}).items():
            self.record(n, duration)

    def record(self, n, duration):
        if not duration > 0:
            raise ValueError(f"solve duration must be positive, got {duration!r}")
        n = int(n)
        with self._lock:
            count, mean = self._stats.get(n, (0, 0.0))
            count += 1
            mean += (duration - mean) / count
            self._stats[n] = (count, mean)
        return self

    def count(self, n=None):
        with self._lock:
            if n is None:
                return sum(c for c, _ in self._stats.values())
            return self._stats.get(int(n), (0, 0.0))[0]

    @property
    def empty(self):
        with self._lock:
            return not self._stats

    def model(self, n):
        """Estimated solve time for ``n`` waypoints, without inflation."""
        n = int(n)
        with self._lock:
            if n in self._stats:
                return self._stats[n][1]
            if not self._stats:
                raise LookupError("estimator has no samples; seed it first")
            n0 = min(self._stats, key=lambda k: (abs(np.log(k / n)), k))
            return self._stats[n0][1] * (n / n0) ** self.exponent

    def estimate(self, n):
        return self.model(n) + self.inflation

    def seed(self, solve=None):
        """Record one throwaway solve of a canonical 6-waypoint problem.

        ``solve`` is a zero-argument callable; by default a fixed 6-waypoint
        min-snap problem is solved and timed with the monotonic clock.
        """
        if solve is None:
            solve = _canonical_solve
        t0 = time.perf_counter()
        solve()
        self.record(6, max(time.perf_counter() - t0, 1e-9))
        return self

    def snapshot(self):
        with self._lock:
            return {n: mean for n, (_, mean) in sorted(self._stats.items())}


def _canonical_solve():
    from .poly import DynamicsLimits, WaypointConstraint, plan_trajectory

    points = [(0, 0, 1), (4, 1, 1.5), (8, -1, 2), (12, 2, 1.5), (16, 0, 1), (20, 1, 1)]
    plan_trajectory([WaypointConstraint(p) for p in points], DynamicsLimits(5.0, 5.0))


def record_solve(estimator, n, duration):
    return estimator.record(n, duration)
