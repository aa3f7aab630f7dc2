"""Micro-benchmarks: base-trajectory solves versus stacked modifier evaluation."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .lgm import PARAM_COLUMNS, make_and_evaluate, pack_requests
from .poly import DynamicsLimits, WaypointConstraint, plan_trajectory

SOLVE_COUNTS = (6, 14, 26)
LGM_COUNTS = (1, 8, 64, 512)
BENCH_LIMITS = DynamicsLimits(10.0, 20.0)


@dataclass(frozen=True)
class TimingStats:
    label: str
    size: int
    mean: float
    std: float
    repetitions: int

    def as_dict(self):
        return asdict(self)


def time_call(fn, repetitions=100, warmup=10, number=1):
    """Per-call durations in seconds, monotonic clock, warm-up calls discarded.

    Each of the ``repetitions`` samples times ``number`` back-to-back calls
    and divides, so sub-microsecond calls are not dominated by clock reads.
    """
    if repetitions < 1 or number < 1:
        raise ValueError("repetitions and number must be >= 1")
    for _ in range(warmup):
        fn()
    out = np.empty(repetitions)
    clock = time.perf_counter_ns
    for i in range(repetitions):
        t0 = clock()
        for _ in range(number):
            fn()
        out[i] = (clock() - t0) / number
    return out * 1e-9


def _stats(label, size, samples):
    return TimingStats(label, size, float(np.mean(samples)), float(np.std(samples, ddof=1) if samples.size > 1 else 0.0), int(samples.size))


def benchmark_waypoints(n, seed=0):
    """A wandering course of ``n`` waypoints, roughly 4 m apart."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(size=(n - 1, 3)) * np.array([1.0, 1.0, 0.2])
    steps[:, 0] += 3.5
    pts = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    return [WaypointConstraint(p) for p in pts]


def bench_solve(counts=SOLVE_COUNTS, repetitions=100, warmup=10, seed=0):
    out = []
    for n in counts:
        wps = benchmark_waypoints(n, seed)
        samples = time_call(lambda: plan_trajectory(wps, BENCH_LIMITS), repetitions, warmup)
        out.append(_stats("solve", n, samples))
    return out


def lgm_requests(k, seed=0):
    rng = np.random.default_rng(seed)
    current = rng.normal(size=(k, 3))
    new = current + rng.normal(scale=0.3, size=(k, 3))
    t_w = rng.uniform(1.0, 10.0, size=k)
    t_mod = t_w - rng.uniform(0.2, 2.0, size=k)
    return pack_requests(current, new, t_w, t_mod)


LGM_BATCH = 50


def bench_lgm(counts=LGM_COUNTS, repetitions=100, warmup=10, seed=0, number=LGM_BATCH):
    """Time building ``k`` modifiers from raw requests and evaluating their sum."""
    out = []
    for k in counts:
        req = lgm_requests(k, seed)
        params = np.empty((k, PARAM_COLUMNS))
        values = np.empty((3, 3))
        t = float(np.median(req[:, 6]))
        samples = time_call(
            lambda: make_and_evaluate(req, t, params, values), repetitions, warmup, number
        )
        out.append(_stats("lgm", k, samples))
    return out


@dataclass(frozen=True)
class BenchReport:
    solve: list
    lgm: list

    def _mean(self, rows, size):
        for r in rows:
            if r.size == size:
                return r.mean
        raise KeyError(size)

    def ratio(self, n_solve=6, n_lgm=64):
        """Mean solve time over mean modifier make+evaluate time."""
        return self._mean(self.solve, n_solve) / self._mean(self.lgm, n_lgm)

    def scaling(self, big=512, small=64):
        return self._mean(self.lgm, big) / self._mean(self.lgm, small)

    def rows(self):
        return [r.as_dict() for r in self.solve + self.lgm]

    def as_dict(self):
        d = {"rows": self.rows()}
        try:
            d["solve6_over_lgm64"] = self.ratio()
        except KeyError:
            pass
        try:
            d["lgm512_over_lgm64"] = self.scaling()
        except KeyError:
            pass
        return d


def run_benchmarks(repetitions=100, warmup=10, seed=0, solve_counts=SOLVE_COUNTS, lgm_counts=LGM_COUNTS):
    return BenchReport(
        bench_solve(solve_counts, repetitions, warmup, seed),
        bench_lgm(lgm_counts, repetitions, warmup, seed),
    )
