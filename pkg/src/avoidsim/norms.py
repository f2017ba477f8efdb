"""Normative probability of other-vehicle states and the norm-conditioned
resampling step of the behavior-prediction filter.

The projected normative probability caps trust at the currently observed
compliance: a state scores min(current compliance, harmonic mean of its
short- and medium-term held-control projections).  Once observed behavior
violates norms, predictions fall back to plain kinematics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import NormConfig
from .dynamics import VehicleDims


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _half_logistic(x, scale):
    """1 at x<=0, smooth decay to 0 for x>0 (upper half of a logistic)."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return 2.0 / (1.0 + np.exp(np.minimum(x / scale, 500.0)))


@dataclass(frozen=True)
class Lane:
    """A lane segment: origin point, direction, and width."""
    x0: float
    y0: float
    direction: float
    width: float

    def lateral(self, x, y):
        return -(x - self.x0) * math.sin(self.direction) + (y - self.y0) * math.cos(self.direction)

    def progress(self, x, y):
        return (x - self.x0) * math.cos(self.direction) + (y - self.y0) * math.sin(self.direction)


class NormModel:
    """Scenario-specific normative probability over other-vehicle states.

    ``lane`` is the other vehicle's legal lane.  When ``stop_line`` is set
    (progress coordinate along the lane), yielding before it at a comfortable
    deceleration is part of compliance and any crossing floors the
    probability while the ego holds the right of way.
    """

    def __init__(self, cfg: NormConfig, lane: Lane, dims: VehicleDims,
                 stop_line: float | None = None, horizon_steps: int = 20,
                 dt: float = 0.2, flow: bool = False):
        self.cfg = cfg
        self.lane = lane
        self.dims = dims
        self.stop_line = stop_line
        self.horizon_steps = horizon_steps
        self.steer_decay = math.exp(-dt / cfg.steer_decay_tau)
        self.heading_relax = math.exp(-dt / cfg.heading_relax_tau)
        self.flow = flow

    def lane_prob(self, states: np.ndarray) -> np.ndarray:
        """Lane-keeping compliance of (n, >=6) other-state rows."""
        cfg = self.cfg
        x, y, psi, = states[:, 0], states[:, 1], states[:, 2]
        theta = np.abs(_wrap(psi - self.lane.direction))
        half_extent = 0.5 * self.dims.width * np.abs(np.cos(theta)) \
            + 0.5 * self.dims.length * np.abs(np.sin(theta))
        lat = np.abs(self.lane.lateral(x, y))
        enc = lat + half_extent - 0.5 * self.lane.width
        f_lat = _half_logistic(enc, cfg.lane_scale)
        f_head = _half_logistic(theta - cfg.heading_tol, cfg.heading_scale)
        return np.clip(f_lat * f_head, cfg.floor, 1.0)

    def yield_prob(self, states: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        x, y, v = states[:, 0], states[:, 1], states[:, 3]
        front = self.lane.progress(x, y) + 0.5 * self.dims.length
        past = front > self.stop_line
        d_remaining = self.stop_line - front
        d_needed = np.maximum(v, 0.0) ** 2 / (2.0 * cfg.yield_decel)
        f = _half_logistic(d_needed - d_remaining, cfg.yield_scale)
        f = np.where(past, cfg.floor, f)
        return np.clip(f, cfg.floor, 1.0)

    def flow_prob(self, states: np.ndarray) -> np.ndarray:
        """Longitudinal flow compliance: braking hard without cause violates
        flowing-traffic norms; gentle speed modulation does not."""
        cfg = self.cfg
        decel = -states[:, 4]
        return _half_logistic(decel - cfg.flow_decel_tol, cfg.flow_scale)

    def prob(self, states: np.ndarray) -> np.ndarray:
        p = self.lane_prob(states)
        if self.stop_line is not None:
            p = p * self.yield_prob(states)
        if self.flow:
            p = p * self.flow_prob(states)
        return np.clip(p, self.cfg.floor, 1.0)


def norm_prob_lane(other_state, norm: NormModel) -> float:
    """Lane-keeping compliance of a single state (array-like row)."""
    return float(norm.lane_prob(np.atleast_2d(np.asarray(other_state, dtype=float)))[0])


def norm_prob_yield(other_state, norm: NormModel) -> float:
    if norm.stop_line is None:
        raise ValueError("norm model has no stop line")
    row = np.atleast_2d(np.asarray(other_state, dtype=float))
    return float((norm.yield_prob(row) * norm.lane_prob(row))[0])


def projected_norm_prob(states: np.ndarray, latents: np.ndarray, norm: NormModel,
                        dims: VehicleDims, dt: float, delta_max: float) -> np.ndarray:
    """Projected compliance of (n, 6) states under held (n, 2) latent controls:
    min of current compliance and the harmonic mean of the one-step and
    medium-term projections."""
    states = np.ascontiguousarray(states, dtype=float)
    latents = np.ascontiguousarray(latents, dtype=float)
    n = states.shape[0]
    s1 = np.empty((n, 6))
    sh = np.empty((n, 6))
    _kernels.project_held_control(states, latents, norm.horizon_steps, dt,
                                  dims.l_r / dims.wheelbase, dims.wheelbase,
                                  delta_max, norm.steer_decay, norm.lane.direction,
                                  norm.heading_relax, s1, sh)
    p_now = norm.prob(states)
    p1 = norm.prob(s1)
    ph = norm.prob(sh)
    hm = 2.0 * p1 * ph / (p1 + ph)
    return np.clip(np.minimum(p_now, hm), norm.cfg.floor, 1.0)


def systematic_resample(weights: np.ndarray, u: float) -> np.ndarray:
    """Systematic resampling indices; equal weights map to the identity."""
    n = weights.shape[0]
    c = np.cumsum(weights)
    c /= c[-1]
    positions = (np.arange(n) + u) / n
    return np.searchsorted(c, positions, side="right").clip(0, n - 1)


def norm_weighted_resample(states: np.ndarray, latents: np.ndarray, norm: NormModel,
                           dims: VehicleDims, dt: float, delta_max: float,
                           rng: np.random.Generator):
    """Importance-resample particles by projected normative probability.

    Skipped when all weights are (numerically) equal, and when every particle
    is deeply non-compliant (pure kinematics for norm-violating scenes).
    Returns the resampling index array or None when skipped.
    """
    w = projected_norm_prob(states, latents, norm, dims, dt, delta_max)
    if w.max() < 10.0 * norm.cfg.floor:
        return None
    if w.max() - w.min() < 1e-12:
        return None
    return systematic_resample(w, float(rng.random()))
