"""Local Gaussian Modifiers.

A modifier is an additive displacement ``A * exp(-(t - mu)**2 / (2 sigma**2))``.
It is centred on a waypoint's time, scaled so the waypoint moves by ``A``,
and sized so that its value at the creation instant is ``exp(-6.125)`` of
the peak, i.e. 3.5 widths away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

import numba
import numpy as np

from .poly import as_vec3

WIDTH_DIVISOR = 3.5
CREATION_RATIO = math.exp(-0.5 * WIDTH_DIVISOR**2)
MAX_ORDER = 3

# packed modifier row layout
_SIGMA = 4
PARAM_COLUMNS = 5
# packed request row layout: current xyz, requested xyz, t_w, t_mod
REQUEST_COLUMNS = 8


class TooLateError(ValueError):
    """The modification arrived at the waypoint's own time; the width would be zero."""


@dataclass(frozen=True)
class GaussianModifier:
    amplitude: np.ndarray
    center: float
    width: float
    waypoint_id: Hashable = None

    def __post_init__(self):
        object.__setattr__(self, "amplitude", as_vec3(self.amplitude, "amplitude"))
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError(f"width must be positive and finite, got {self.width!r}")
        object.__setattr__(self, "center", float(self.center))
        object.__setattr__(self, "width", float(self.width))

    def __call__(self, t, order=0):
        return eval_lgm(self, t, order)

    def as_row(self):
        return np.array([*self.amplitude, self.center, self.width])


def make_lgm(current_position, new_position, t_w, t_mod, waypoint_id=None):
    """Modifier that moves the point at ``t_w`` from ``current_position`` to ``new_position``.

    ``current_position`` must be the waypoint under the live composite
    trajectory (base plus every existing modifier), so that stacked
    modifiers land the waypoint exactly on the latest request.
    """
    if t_mod == t_w:
        raise TooLateError(f"modification at t={t_mod!r} coincides with the waypoint time")
    amplitude = np.asarray(new_position, dtype=float) - np.asarray(current_position, dtype=float)
    return GaussianModifier(
        amplitude=amplitude,
        center=t_w,
        width=abs(t_mod - t_w) / WIDTH_DIVISOR,
        waypoint_id=waypoint_id,
    )


def _gaussian_factor(dt, sigma, order):
    g = np.exp(-0.5 * (dt / sigma) ** 2)
    if order == 0:
        return g
    if order == 1:
        return -dt / sigma**2 * g
    if order == 2:
        return (dt**2 / sigma**4 - 1.0 / sigma**2) * g
    return (3.0 * dt / sigma**4 - dt**3 / sigma**6) * g


def eval_lgm(m, t, order=0):
    """Value or time derivative (order 1 to 3) of a single modifier at ``t``."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"modifier derivative order must be 0 to 3, got {order}")
    if np.ndim(t) == 0:
        return m.amplitude * float(_gaussian_factor(float(t) - m.center, m.width, order))
    t = np.asarray(t, dtype=float)
    f = _gaussian_factor(t - m.center, m.width, order)
    return f[..., None] * m.amplitude


def lgm_mass_fraction(m, half_width):
    """Fraction of the modifier's time integral within ``half_width`` widths of its centre.

    The fraction depends only on ``half_width``: ``erf(half_width / sqrt(2))``.
    """
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    return math.erf(half_width / math.sqrt(2.0))


@numba.njit(cache=True)
def _sum_kernel(params, t, out):
    # out[r, :] = sum of derivative r (0..2) over all rows of params
    for r in range(3):
        for j in range(3):
            out[r, j] = 0.0
    for i in range(params.shape[0]):
        s = params[i, 4]
        dt = t - params[i, 3]
        inv = 1.0 / (s * s)
        g = math.exp(-0.5 * dt * dt * inv)
        g1 = -dt * inv * g
        g2 = (dt * dt * inv - 1.0) * inv * g
        for j in range(3):
            a = params[i, j]
            out[0, j] += a * g
            out[1, j] += a * g1
            out[2, j] += a * g2


class ModifierBank:
    """Immutable packed stack of modifiers, evaluated as one sum.

    Rows are ``[Ax, Ay, Az, mu, sigma]``.
    """

    __slots__ = ("params",)

    def __init__(self, params=None):
        if params is None:
            params = np.empty((0, PARAM_COLUMNS))
        params = np.ascontiguousarray(params, dtype=float)
        if params.ndim != 2 or params.shape[1] != PARAM_COLUMNS:
            raise ValueError(f"params must have shape (k, {PARAM_COLUMNS})")
        if params.size and not np.all(params[:, _SIGMA] > 0):
            raise ValueError("every modifier width must be positive")
        params.flags.writeable = False
        self.params = params

    @classmethod
    def from_modifiers(cls, modifiers):
        rows = [m.as_row() for m in modifiers]
        return cls(np.array(rows).reshape(-1, PARAM_COLUMNS))

    def __len__(self):
        return self.params.shape[0]

    def appended(self, modifier):
        return ModifierBank(np.vstack([self.params, modifier.as_row()]))

    def evaluate_all(self, t):
        """Derivatives 0..2 of the summed modifiers at scalar ``t``, shape (3, 3)."""
        out = np.empty((3, 3))
        if len(self):
            _sum_kernel(self.params, float(t), out)
        else:
            out[:] = 0.0
        return out

    def __call__(self, t, order=0):
        if order not in (0, 1, 2, 3):
            raise ValueError(f"modifier derivative order must be 0 to 3, got {order}")
        if np.ndim(t) == 0 and order < 3:
            return self.evaluate_all(t)[order]
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (3,))
        for a0, a1, a2, mu, s in self.params:
            f = _gaussian_factor(t - mu, s, order)
            out += f[..., None] * np.array([a0, a1, a2])
        return out


def pack_requests(current, new, t_w, t_mod):
    """Pack a batch of modification requests into the kernel layout, shape (k, 8)."""
    current = np.asarray(current, dtype=float).reshape(-1, 3)
    new = np.asarray(new, dtype=float).reshape(-1, 3)
    t_w = np.asarray(t_w, dtype=float).reshape(-1)
    t_mod = np.asarray(t_mod, dtype=float).reshape(-1)
    k = current.shape[0]
    if not (new.shape[0] == t_w.size == t_mod.size == k):
        raise ValueError("request arrays must have matching lengths")
    if np.any(t_w == t_mod):
        raise TooLateError("a modification coincides with its waypoint time")
    return np.ascontiguousarray(np.column_stack([current, new, t_w, t_mod]))


@numba.njit(cache=True)
def make_and_evaluate(requests, t, params_out, values_out):
    """Build a stack of modifiers from packed requests and evaluate their sum.

    Writes the modifier rows into ``params_out`` (shape (k, 5)) and the summed
    position, velocity and acceleration at ``t`` into ``values_out``
    (shape (3, 3)). Both buffers are preallocated and nothing is returned,
    so the call neither allocates nor boxes a result; this is the hot path
    timed by the benchmark.
    """
    for r in range(3):
        for j in range(3):
            values_out[r, j] = 0.0
    for i in range(requests.shape[0]):
        mu = requests[i, 6]
        s = abs(requests[i, 7] - mu) / WIDTH_DIVISOR
        params_out[i, 3] = mu
        params_out[i, 4] = s
        dt = t - mu
        inv = 1.0 / (s * s)
        g = math.exp(-0.5 * dt * dt * inv)
        g1 = -dt * inv * g
        g2 = (dt * dt * inv - 1.0) * inv * g
        for j in range(3):
            a = requests[i, 3 + j] - requests[i, j]
            params_out[i, j] = a
            values_out[0, j] += a * g
            values_out[1, j] += a * g1
            values_out[2, j] += a * g2
