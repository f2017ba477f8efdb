"""Looming-based observation model.

The other vehicle is perceived through angular channels: the visual angle it
subtends, the angular expansion rate (looming), and the bearing of its line
of sight with its rate.  Channel noise is constant in angular space, so
metric uncertainty grows with distance.  Angular rates below the detection
threshold are imperceptible: for states whose implied looming magnitude is
below the threshold, the means of the motion channels (looming rate,
relative speed, relative acceleration) are those of a relatively static
scene.

The direct-perception variant (used by one ablation) replaces the angular
channels with metric ones (distance, lateral offset and rate) and disables
the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import PerceptionConfig
from .dynamics import VehicleDims, WorldState

ANGULAR_CHANNELS = (
    "v_ego", "a_ego", "y_ego", "psi_ego", "delta_ego",
    "phi", "phi_dot", "bearing", "bearing_rate", "rel_speed", "rel_accel",
)
METRIC_CHANNELS = (
    "v_ego", "a_ego", "y_ego", "psi_ego", "delta_ego",
    "distance", "lat_offset", "lat_rate", "rel_speed", "rel_accel",
)
# channels whose means are substituted when looming is sub-threshold
GATED = ("phi_dot", "rel_speed", "rel_accel")


class ObserverInsideTarget(ValueError):
    """Distance to the observed object is not positive."""


def visual_angle(distance: float, extent: float) -> float:
    """Visual angle subtended by an object of the given extent."""
    if distance <= 0:
        raise ObserverInsideTarget(f"distance must be positive, got {distance}")
    if extent <= 0:
        raise ValueError(f"extent must be positive, got {extent}")
    return 2.0 * math.atan(0.5 * extent / distance)


def looming_rate(distance: float, closing_speed: float, extent: float) -> float:
    """Time derivative of the visual angle when the range closes at
    closing_speed (positive while approaching)."""
    if distance <= 0:
        raise ObserverInsideTarget(f"distance must be positive, got {distance}")
    return extent * closing_speed / (distance * distance + 0.25 * extent * extent)


@dataclass(frozen=True)
class ObsNoise:
    channels: tuple
    sigma: np.ndarray

    def __post_init__(self):
        if np.any(self.sigma <= 0):
            raise ValueError("all observation sigmas must be positive")


@dataclass(frozen=True)
class Observation:
    channels: tuple
    values: np.ndarray

    def __getattr__(self, name):
        channels = object.__getattribute__(self, "channels")
        if name in channels:
            return float(object.__getattribute__(self, "values")[channels.index(name)])
        raise AttributeError(name)


class ObsModel:
    """Observation channel means, sampling, likelihoods, and entropy."""

    def __init__(self, cfg: PerceptionConfig, other_dims: VehicleDims,
                 ego_dims: VehicleDims, *, direct: bool = False,
                 threshold_enabled: bool = True):
        self.cfg = cfg
        self.other_dims = other_dims
        self.ego_dims = ego_dims
        self.mode = 1 if direct else 0
        self.threshold = cfg.phidot_threshold if (threshold_enabled and not direct) else 0.0
        if direct:
            sigma = [cfg.sigma_v_ego, cfg.sigma_a_ego, cfg.sigma_y_ego,
                     cfg.sigma_psi_ego, cfg.sigma_delta_ego,
                     cfg.sigma_distance, cfg.sigma_lat_offset, cfg.sigma_lat_rate,
                     cfg.sigma_rel_speed, cfg.sigma_rel_accel]
            channels = METRIC_CHANNELS
        else:
            sigma = [cfg.sigma_v_ego, cfg.sigma_a_ego, cfg.sigma_y_ego,
                     cfg.sigma_psi_ego, cfg.sigma_delta_ego,
                     cfg.sigma_phi, cfg.sigma_phidot, cfg.sigma_bearing,
                     cfg.sigma_bearing_rate, cfg.sigma_rel_speed, cfg.sigma_rel_accel]
            channels = ANGULAR_CHANNELS
        self.noise = ObsNoise(channels, np.asarray(sigma, dtype=float))
        self.channels = channels
        self.C = len(channels)
        self._kr = ego_dims.l_r / ego_dims.wheelbase
        self._L = ego_dims.wheelbase
        # sub-threshold substitution applies to these channel indices
        self._gated_idx = np.array(
            [channels.index(c) for c in GATED if c in channels], dtype=np.int64)

    @property
    def sigma(self) -> np.ndarray:
        return self.noise.sigma

    def means_pairs(self, ego: np.ndarray, other: np.ndarray,
                    gate_fix: np.ndarray | None = None) -> np.ndarray:
        """Channel means for (K, 6) ego / other state-row pairs."""
        K = ego.shape[0]
        out = np.empty((K, self.C))
        if gate_fix is None:
            gate_fix = np.full(K, -1, dtype=np.int8)
        _kernels.obs_means_pairs(ego, other, self._kr, self._L,
                                 self.other_dims.length, self.other_dims.width,
                                 self.threshold if self.threshold > 0 else -1.0,
                                 self.mode, gate_fix, out)
        return out

    def means(self, states: np.ndarray, gate_fix=None) -> np.ndarray:
        """Channel means for (n, >=12) particle states.  When latent controls
        are present (14 columns) the other vehicle's acceleration channel
        reads the latent, so the posterior update corrects the hypothesis the
        predictions run on."""
        other = np.ascontiguousarray(states[:, 6:12])
        if states.shape[1] >= 13:
            other = other.copy()
            other[:, 4] = states[:, 12]
        return self.means_pairs(np.ascontiguousarray(states[:, 0:6]), other, gate_fix)

    def gate_state(self, states: np.ndarray) -> np.ndarray:
        """1 where the implied looming magnitude is perceptible, else 0."""
        if self.mode == 1 or self.threshold <= 0:
            return np.ones(states.shape[0], dtype=np.int8)
        force_on = np.ones(states.shape[0], dtype=np.int8)
        raw = self.means(states, gate_fix=force_on)
        idx = self.channels.index("phi_dot")
        return (np.abs(raw[:, idx]) >= self.threshold).astype(np.int8)

    def jacobian(self, states: np.ndarray) -> np.ndarray:
        """Central-difference Jacobian (n, C, D) of the channel means with
        the threshold gate frozen at each state's own regime."""
        n, d = states.shape
        gate = self.gate_state(states)
        eps = np.array([1e-4, 1e-4, 1e-5, 1e-4, 1e-4, 1e-5])
        eps = np.concatenate([eps, eps, [1e-4, 1e-5]])[:d]
        J = np.zeros((n, self.C, d))
        cols = [k for k in range(min(d, 13)) if k != 10]  # latent omega unobserved;
        # the other's realized-acceleration column is superseded by the latent
        if d < 13:
            cols = list(range(d))
        for k in cols:
            plus = states.copy()
            minus = states.copy()
            plus[:, k] += eps[k]
            minus[:, k] -= eps[k]
            hp = self.means(plus, gate_fix=gate)
            hm = self.means(minus, gate_fix=gate)
            J[:, :, k] = (hp - hm) / (2.0 * eps[k])
        return J

    def sample(self, world: WorldState, rng: np.random.Generator) -> Observation:
        ego, other = world.as_pair()
        mean = self.means_pairs(ego, other)[0]
        values = mean + self.sigma * rng.standard_normal(self.C)
        return Observation(self.channels, values)

    def logpdf(self, obs_values: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Per-state Gaussian log density of an observation vector, summed
        over channels, with threshold gating applied per state."""
        mu = self.means(states)
        z = (obs_values[None, :] - mu) / self.sigma[None, :]
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.sigma)) \
            - 0.5 * self.C * math.log(2.0 * math.pi)

    def entropy(self, state=None) -> float:
        """Analytic entropy of the diagonal Gaussian observation density in
        nats; constant in the base model but state-admitting by interface."""
        return float(np.sum(0.5 * np.log(2.0 * math.pi * math.e * self.sigma ** 2)))


def observe(world: WorldState, model: ObsModel, rng: np.random.Generator) -> Observation:
    """Draw one observation of the true world state."""
    ea, oa = world.as_pair()
    if not (np.isfinite(ea).all() and np.isfinite(oa).all()):
        raise ValueError("world state must be finite")
    return model.sample(world, rng)


def observation_logpdf(obs: Observation, states: np.ndarray, model: ObsModel):
    """Log likelihood of an observation under one or many model states
    ((14,) or (n, 14))."""
    arr = np.atleast_2d(np.asarray(states, dtype=float))
    out = model.logpdf(np.asarray(obs.values, dtype=float), arr)
    return float(out[0]) if np.ndim(states) == 1 else out


def obs_entropy(model: ObsModel, state=None) -> float:
    return model.entropy(state)
