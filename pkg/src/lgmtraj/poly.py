"""Minimum-snap piecewise polynomial trajectories.

Segments are degree-7 polynomials in local time ``tau = t - t_k``. The solver
uses the unconstrained reformulation: position, velocity, acceleration and
jerk at every knot are shared between neighbouring segments, fixed values are
eliminated, and the snap cost is minimised over the remaining (free) knot
derivatives with a single symmetric linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

DEGREE = 7
N_COEFF = DEGREE + 1
MAX_ORDER = 4
MIN_SEGMENT_DURATION = 0.1
PIVOT_TOL = 1e-12

# knot derivatives shared between segments: position, velocity, acceleration, jerk
_N_SHARED = 4


class SolverError(ValueError):
    """Raised when the min-snap system is singular or ill-conditioned."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


def as_vec3(value, name="vector"):
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class WaypointConstraint:
    """A position with optional pass-through velocity, acceleration and jerk."""

    position: np.ndarray
    velocity: np.ndarray | None = None
    acceleration: np.ndarray | None = None
    jerk: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position"))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", as_vec3(self.velocity, "velocity"))
        if self.acceleration is not None:
            object.__setattr__(
                self, "acceleration", as_vec3(self.acceleration, "acceleration")
            )
        if self.jerk is not None:
            object.__setattr__(self, "jerk", as_vec3(self.jerk, "jerk"))


@dataclass(frozen=True)
class DynamicsLimits:
    v_max: float
    a_max: float

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("v_max and a_max must be strictly positive")
        if not (np.isfinite(self.v_max) and np.isfinite(self.a_max)):
            raise ValueError("v_max and a_max must be finite")


def _derivative_factors():
    # f[r, i] = i! / (i - r)!  (zero when i < r)
    f = np.zeros((MAX_ORDER + 1, N_COEFF))
    for r in range(MAX_ORDER + 1):
        for i in range(r, N_COEFF):
            f[r, i] = factorial(i) / factorial(i - r)
    return f


_DFACT = _derivative_factors()


def _unit_interval_matrices():
    # boundary map on s in [0, 1]: rows are derivatives 0..3 at s=0 then at s=1
    m = np.zeros((2 * _N_SHARED, N_COEFF))
    for r in range(_N_SHARED):
        m[r, r] = _DFACT[r, r]
        m[_N_SHARED + r, :] = _DFACT[r]
    q = np.zeros((N_COEFF, N_COEFF))
    for i in range(MAX_ORDER, N_COEFF):
        for j in range(MAX_ORDER, N_COEFF):
            p = i + j - 2 * MAX_ORDER + 1
            q[i, j] = _DFACT[MAX_ORDER, i] * _DFACT[MAX_ORDER, j] / p
    m_inv = np.linalg.inv(m)
    return m_inv, q, m_inv.T @ q @ m_inv


_M_INV, _Q_UNIT, _K_UNIT = _unit_interval_matrices()
_SHARED_POW = np.tile(np.arange(_N_SHARED), 2)


def snap_cost_matrix(duration):
    """Snap cost Hessian in monomial coefficients on ``[0, duration]``."""
    i = np.arange(N_COEFF)
    p = i[:, None] + i[None, :] - 2 * MAX_ORDER + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(p > 0, _Q_UNIT * np.power(float(duration), np.maximum(p, 1)), 0.0)
    return q


class PiecewisePolynomial:
    """Degree-7 piecewise polynomial in 3-D.

    Parameters
    ----------
    knots : array_like, shape (S + 1,)
        Strictly increasing segment boundaries in seconds.
    coeffs : array_like, shape (S, 8, 3)
        Monomial coefficients per segment, in local time ``t - knots[k]``.
    """

    def __init__(self, knots, coeffs):
        knots = np.array(knots, dtype=float)
        coeffs = np.array(coeffs, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("knots must be a 1-D array with at least two entries")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if coeffs.ndim != 3 or coeffs.shape[0] != knots.size - 1 or coeffs.shape[2] != 3:
            raise ValueError(
                f"coeffs must have shape ({knots.size - 1}, order + 1, 3), got {coeffs.shape}"
            )
        n = coeffs.shape[1]
        if n < N_COEFF:
            coeffs = np.concatenate(
                [coeffs, np.zeros((coeffs.shape[0], N_COEFF - n, 3))], axis=1
            )
        elif n > N_COEFF:
            raise ValueError(f"polynomial order above {DEGREE} is not supported")
        knots.flags.writeable = False
        coeffs.flags.writeable = False
        self.knots = knots
        self.coeffs = coeffs
        # derivative coefficient tables, index [order, segment, power, axis]
        table = np.zeros((MAX_ORDER + 1,) + coeffs.shape)
        for r in range(MAX_ORDER + 1):
            table[r, :, : N_COEFF - r, :] = coeffs[:, r:, :] * _DFACT[r, r:, None]
        table.flags.writeable = False
        self._dcoeffs = table
        self._start_position = self._eval_inside(knots[0], 0)
        self._end_position = self._eval_inside(knots[-1], 0)

    @property
    def segment_count(self):
        return self.coeffs.shape[0]

    @property
    def order(self):
        return DEGREE

    @property
    def start(self):
        return float(self.knots[0])

    @property
    def end(self):
        return float(self.knots[-1])

    @property
    def duration(self):
        return float(self.knots[-1] - self.knots[0])

    def segment_index(self, t):
        k = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(k, 0, self.segment_count - 1)

    def _eval_inside(self, t, order):
        k = int(self.segment_index(t))
        tau = t - self.knots[k]
        powers = tau ** np.arange(N_COEFF)
        return powers @ self._dcoeffs[order, k]

    def __call__(self, t, order=0):
        return eval_poly(self, t, order)

    def evaluate_all(self, t, max_order=2):
        """Stack of derivatives ``0..max_order`` at a scalar time, shape (max_order+1, 3)."""
        t = float(t)
        if t < self.knots[0] or t > self.knots[-1]:
            out = np.zeros((max_order + 1, 3))
            out[0] = self._start_position if t < self.knots[0] else self._end_position
            return out
        k = int(self.segment_index(t))
        tau = t - self.knots[k]
        powers = tau ** np.arange(N_COEFF)
        return np.einsum("i,ria->ra", powers, self._dcoeffs[: max_order + 1, k])

    def __repr__(self):
        return (
            f"PiecewisePolynomial(segments={self.segment_count}, "
            f"span=[{self.start:.6g}, {self.end:.6g}])"
        )


def eval_poly(traj, t, order=0):
    """Evaluate the ``order``-th time derivative of ``traj`` at ``t``.

    Times outside the knot span are clamped: position holds the nearest
    endpoint and every higher derivative is zero. ``t`` may be a scalar
    (returns shape (3,)) or an array (returns shape (m, 3)).
    """
    if order not in range(MAX_ORDER + 1):
        raise ValueError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")
    if np.ndim(t) == 0:
        t = float(t)
        if t < traj.knots[0]:
            return traj._start_position.copy() if order == 0 else np.zeros(3)
        if t > traj.knots[-1]:
            return traj._end_position.copy() if order == 0 else np.zeros(3)
        return traj._eval_inside(t, order)

    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    tc = np.clip(flat, traj.knots[0], traj.knots[-1])
    k = traj.segment_index(tc)
    tau = tc - traj.knots[k]
    powers = tau[:, None] ** np.arange(N_COEFF)
    out = np.einsum("mi,mia->ma", powers, traj._dcoeffs[order, k])
    if order > 0:
        out[(flat < traj.knots[0]) | (flat > traj.knots[-1])] = 0.0
    return out.reshape(t.shape + (3,))


def poly_duration(traj):
    return traj.duration


def snap_cost(traj):
    """Integral of squared snap over the whole trajectory, summed over axes."""
    total = 0.0
    for k, dt in enumerate(np.diff(traj.knots)):
        q = snap_cost_matrix(dt)
        c = traj.coeffs[k]
        total += float(np.einsum("ia,ij,ja->", c, q, c))
    return total


def allocate_segment_times(waypoints, limits, *, time_scale=1.2, start_time=0.0):
    """Initial knot times from per-segment distance.

    Each segment gets ``time_scale * max(d / v_max, sqrt(2 d / a_max))``;
    coincident consecutive waypoints get ``MIN_SEGMENT_DURATION``.
    """
    positions = _positions(waypoints)
    if positions.shape[0] < 2:
        raise ValueError("at least two waypoints are required")
    return start_time + np.concatenate(
        [[0.0], np.cumsum(_segment_durations(positions, limits, time_scale))]
    )


def _positions(waypoints):
    return np.array([np.asarray(w.position, dtype=float) for w in waypoints]).reshape(-1, 3)


def _segment_durations(positions, limits, time_scale):
    dist = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    durations = time_scale * np.maximum(
        dist / limits.v_max, np.sqrt(2.0 * dist / limits.a_max)
    )
    return np.where(dist > 1e-9, durations, MIN_SEGMENT_DURATION)


def _boundary_values(waypoints):
    """Fixed-value mask and values for every knot derivative, shape (4N,) and (4N, 3)."""
    n = len(waypoints)
    fixed = np.zeros((n, _N_SHARED), dtype=bool)
    values = np.zeros((n, _N_SHARED, 3))
    for i, w in enumerate(waypoints):
        endpoint = i == 0 or i == n - 1
        fixed[i, 0] = True
        values[i, 0] = w.position
        for r, v in ((1, w.velocity), (2, w.acceleration), (3, w.jerk)):
            if v is not None:
                fixed[i, r] = True
                values[i, r] = v
            elif endpoint:
                fixed[i, r] = True
    return fixed.reshape(-1), values.reshape(-1, 3)


def solve_min_snap(waypoints, knots):
    """Minimum-snap trajectory through ``waypoints`` at the given knot times.

    Endpoint velocity, acceleration and jerk default to zero when not
    supplied; interior jerk and any unspecified interior velocity or
    acceleration are optimised.

    Raises
    ------
    SolverError
        If a segment has non-positive duration or the reduced system has a
        pivot below ``PIVOT_TOL`` after Jacobi equilibration.
    """
    waypoints = list(waypoints)
    knots = np.asarray(knots, dtype=float)
    if len(waypoints) < 2:
        raise ValueError("at least two waypoints are required")
    if knots.shape != (len(waypoints),):
        raise ValueError(f"expected {len(waypoints)} knot times, got shape {knots.shape}")
    durations = np.diff(knots)
    bad = np.flatnonzero(~(durations > 0) | ~np.isfinite(durations))
    if bad.size:
        raise SolverError(
            f"segment {bad[0]} has non-positive duration {durations[bad[0]]!r}",
            segment=int(bad[0]),
        )

    n_seg = durations.size
    scale = durations[:, None] ** _SHARED_POW[None, :]
    blocks = _K_UNIT[None] * (scale[:, :, None] * scale[:, None, :])
    blocks *= durations[:, None, None] ** -7.0

    n_var = _N_SHARED * len(waypoints)
    hess = np.zeros((n_var, n_var))
    for k in range(n_seg):
        s = slice(_N_SHARED * k, _N_SHARED * k + 2 * _N_SHARED)
        hess[s, s] += blocks[k]

    fixed, d = _boundary_values(waypoints)
    free = ~fixed
    if free.any():
        h_ff = hess[np.ix_(free, free)]
        rhs = -hess[np.ix_(free, fixed)] @ d[fixed]
        diag = np.sqrt(np.diag(h_ff))
        if np.any(~(diag > 0)):
            idx = int(np.flatnonzero(~(diag > 0))[0])
            raise SolverError("degenerate cost matrix", segment=_segment_of(free, idx, n_seg))
        h_eq = h_ff / diag[:, None] / diag[None, :]
        lu, piv = scipy.linalg.lu_factor(h_eq, check_finite=False)
        pivots = np.abs(np.diag(lu))
        weak = np.flatnonzero(pivots < PIVOT_TOL)
        if weak.size:
            raise SolverError(
                f"ill-conditioned min-snap system (pivot {pivots[weak[0]]:.3g})",
                segment=_segment_of(free, int(weak[0]), n_seg),
            )
        sol = scipy.linalg.lu_solve((lu, piv), rhs / diag[:, None], check_finite=False)
        d[free] = sol / diag[:, None]

    coeffs = np.empty((n_seg, N_COEFF, 3))
    for k in range(n_seg):
        e = d[_N_SHARED * k : _N_SHARED * k + 2 * _N_SHARED] * scale[k][:, None]
        a = _M_INV @ e
        coeffs[k] = a / durations[k] ** np.arange(N_COEFF)[:, None]
    return PiecewisePolynomial(knots, coeffs)


def _segment_of(free_mask, free_index, n_seg):
    var = int(np.flatnonzero(free_mask)[free_index])
    return min(max(var // _N_SHARED - 1, 0), n_seg - 1)


def _sampled_derivatives(traj, first_segment, samples_per_segment):
    knots = traj.knots[first_segment:]
    frac = np.linspace(0.0, 1.0, samples_per_segment + 1)
    ts = (knots[:-1, None] + np.diff(knots)[:, None] * frac[None, :]).reshape(-1)
    shape = (knots.size - 1, samples_per_segment + 1)
    v = np.linalg.norm(eval_poly(traj, ts, 1), axis=1).reshape(shape)
    a = np.linalg.norm(eval_poly(traj, ts, 2), axis=1).reshape(shape)
    return v, a


def max_speed_and_acceleration(traj, *, first_segment=0, samples_per_segment=16):
    """Sampled maxima of speed and acceleration norm from ``first_segment`` on."""
    if traj.knots.size - first_segment < 2:
        return 0.0, 0.0
    v, a = _sampled_derivatives(traj, first_segment, samples_per_segment)
    return float(v.max()), float(a.max())


def limit_ratios(traj, limits, *, first_segment=0, samples_per_segment=16):
    """Per-segment ``max(speed / v_max, accel / a_max)`` from ``first_segment`` on."""
    if traj.knots.size - first_segment < 2:
        return np.zeros(0)
    v, a = _sampled_derivatives(traj, first_segment, samples_per_segment)
    return np.maximum(v.max(axis=1) / limits.v_max, a.max(axis=1) / limits.a_max)


@dataclass(frozen=True)
class PlanResult:
    trajectory: PiecewisePolynomial
    rescale_iterations: int
    feasible: bool


def plan_trajectory(
    waypoints,
    limits,
    *,
    start_time=0.0,
    fixed_times=None,
    time_scale=1.2,
    rescale_factor=1.1,
    max_rescale=10,
    durations=None,
):
    """Allocate segment times, solve, and stretch until the limits hold.

    ``fixed_times`` pins the knot times of the first ``len(fixed_times)``
    waypoints (used when stitching onto a live trajectory); only the
    remaining segments are checked against the limits and stretched.
    ``durations`` seeds the free segment durations instead of the
    distance rule; each is floored at ``distance / v_max``.
    If no attempt is feasible the one with the smallest violation is
    returned, flagged infeasible.
    """
    waypoints = list(waypoints)
    positions = _positions(waypoints)
    if positions.shape[0] < 2:
        raise ValueError("at least two waypoints are required")
    if fixed_times is None:
        fixed_times = np.array([start_time], dtype=float)
    fixed_times = np.asarray(fixed_times, dtype=float)
    m = fixed_times.size
    if durations is None:
        free_durations = _segment_durations(positions[m - 1 :], limits, time_scale)
    else:
        durations = np.asarray(durations, dtype=float)
        if durations.size != positions.shape[0] - m:
            raise ValueError("need one duration per free segment")
        dist = np.linalg.norm(np.diff(positions[m - 1 :], axis=0), axis=1)
        if not np.all(durations > 0):
            raise ValueError("durations must be positive")
        free_durations = np.maximum(durations, dist / limits.v_max)

    tol = 1.0 + 1e-6
    best = None
    for it in range(max_rescale + 1):
        knots = np.concatenate([fixed_times, fixed_times[-1] + np.cumsum(free_durations)])
        traj = solve_min_snap(waypoints, knots)
        if free_durations.size == 0:
            return PlanResult(traj, it, True)
        ratios = limit_ratios(traj, limits, first_segment=m - 1)
        worst = float(ratios.max())
        if worst <= tol:
            return PlanResult(traj, it, True)
        if best is None or worst < best[0]:
            best = (worst, traj)
        free_durations = free_durations * rescale_factor
    return PlanResult(best[1], max_rescale, False)


class MinSnapTrajectory(BaseEstimator):
    """Minimum-snap trajectory as an estimator over waypoint positions.

    ``fit`` takes an ``(N, 3)`` array of waypoint positions; optional
    pass-through velocities and accelerations use ``NaN`` rows for
    "unconstrained". ``predict`` evaluates the fitted trajectory.

    Parameters
    ----------
    v_max, a_max : float
        Speed and acceleration limits used for time allocation.
    time_scale : float
        Factor on the distance-based lower bound for each segment.
    rescale_factor : float
        Uniform stretch applied when sampled limits are violated.
    max_rescale : int
        Maximum number of stretch-and-resolve iterations.
    """

    def __init__(self, v_max=5.0, a_max=5.0, time_scale=1.2, rescale_factor=1.1, max_rescale=10):
        self.v_max = v_max
        self.a_max = a_max
        self.time_scale = time_scale
        self.rescale_factor = rescale_factor
        self.max_rescale = max_rescale

    def fit(self, X, y=None, velocities=None, accelerations=None, knots=None):
        X = check_array(X, ensure_min_samples=2)
        if X.shape[1] != 3:
            raise ValueError(f"waypoints must have 3 columns, got {X.shape[1]}")
        vel = self._optional_rows(velocities, X.shape[0], "velocities")
        acc = self._optional_rows(accelerations, X.shape[0], "accelerations")
        waypoints = [
            WaypointConstraint(p, v, a) for p, v, a in zip(X, vel, acc)
        ]
        limits = DynamicsLimits(self.v_max, self.a_max)
        if knots is not None:
            self.trajectory_ = solve_min_snap(waypoints, knots)
            self.n_rescale_ = 0
            self.feasible_ = None
        else:
            plan = plan_trajectory(
                waypoints,
                limits,
                time_scale=self.time_scale,
                rescale_factor=self.rescale_factor,
                max_rescale=self.max_rescale,
            )
            self.trajectory_ = plan.trajectory
            self.n_rescale_ = plan.rescale_iterations
            self.feasible_ = plan.feasible
        self.knots_ = self.trajectory_.knots
        self.n_features_in_ = 3
        return self

    @staticmethod
    def _optional_rows(values, n, name):
        if values is None:
            return [None] * n
        arr = check_array(values, ensure_all_finite="allow-nan")
        if arr.shape != (n, 3):
            raise ValueError(f"{name} must have shape ({n}, 3), got {arr.shape}")
        return [None if np.isnan(row).any() else row for row in arr]

    def predict(self, t, order=0):
        check_is_fitted(self, "trajectory_")
        return eval_poly(self.trajectory_, np.asarray(t, dtype=float), order)

    def snap_cost(self):
        check_is_fitted(self, "trajectory_")
        return snap_cost(self.trajectory_)
