"""Shared agent-model context: everything the belief, policy, and agent
modules need about the vehicle pair, road, perception, norms, and
preferences for one scenario."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Config
from .dynamics import VehicleDims
from .norms import NormModel
from .perception import ObsModel


@dataclass(frozen=True)
class Road:
    """Lateral layout of the ego road: the ego's own lane and the drivable
    band (other lanes and shoulders score the lane-change penalty; beyond
    the band is off-road)."""
    lane_lo: float
    lane_hi: float
    road_lo: float
    road_hi: float
    lane_width: float = 3.65


@dataclass(frozen=True)
class PreferenceParams:
    mu_v: float
    sigma_v: float
    sigma_a: float
    sigma_omega: float
    g_lane: float
    g_road: float
    g_collision: float
    collision_ref_speed: float
    lat_blend: float
    a_ov_min: float
    response_delay: float
    safety_weight: float

    @property
    def peak(self) -> float:
        """Maximum attainable preference log density (all targets met)."""
        return -(math.log(self.sigma_v * math.sqrt(2 * math.pi))
                 + math.log(self.sigma_a * math.sqrt(2 * math.pi))
                 + math.log(self.sigma_omega * math.sqrt(2 * math.pi)))


@dataclass(frozen=True)
class TransitionNoise:
    sigma_a: float
    sigma_omega: float


@dataclass
class ModelContext:
    """Immutable per-scenario bundle used by the agent stack."""
    cfg: Config
    ego_dims: VehicleDims
    other_dims: VehicleDims
    obs_model: ObsModel
    norm_model: NormModel | None
    road: Road
    pref: PreferenceParams

    @property
    def dt(self) -> float:
        return self.cfg.sim.dt

    @property
    def update_noise(self) -> TransitionNoise:
        return TransitionNoise(self.cfg.transition.sigma_a_update,
                               self.cfg.transition.sigma_omega_update)

    @property
    def prediction_noise(self) -> TransitionNoise:
        if self.cfg.ablation.no_prediction_noise:
            return TransitionNoise(0.0, 0.0)
        return TransitionNoise(self.cfg.transition.sigma_a_predict,
                               self.cfg.transition.sigma_omega_predict)

    @property
    def norm_enabled(self) -> bool:
        return self.norm_model is not None and not self.cfg.ablation.no_norm_filter


def make_preference(cfg: Config, mu_v: float) -> PreferenceParams:
    p = cfg.preference
    s = cfg.safety
    return PreferenceParams(
        mu_v=mu_v, sigma_v=p.sigma_v, sigma_a=p.sigma_a, sigma_omega=p.sigma_omega,
        g_lane=p.g_lane, g_road=p.g_road, g_collision=p.g_collision,
        collision_ref_speed=p.collision_ref_speed, lat_blend=p.lat_blend,
        a_ov_min=s.a_ov_min, response_delay=s.response_delay, safety_weight=s.weight,
    )


def lateral_logpref(y, width: float, road: Road, pref: PreferenceParams):
    """Piecewise lateral preference with linear blends at region edges: 0
    inside the own lane, g_lane in other drivable space, g_road off-road."""
    y = np.asarray(y, dtype=float)
    half = 0.5 * width
    enc_lane = np.maximum(0.0, np.maximum((y + half) - road.lane_hi,
                                          road.lane_lo - (y - half)))
    enc_road = np.maximum(0.0, np.maximum((y + half) - road.road_hi,
                                          road.road_lo - (y - half)))
    b = pref.lat_blend
    return (pref.g_lane * np.minimum(1.0, enc_lane / b)
            + (pref.g_road - pref.g_lane) * np.minimum(1.0, enc_road / b))
