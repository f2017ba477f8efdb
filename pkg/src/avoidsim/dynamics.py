"""Kinematic bicycle model, pedal feasibility repair, and collision geometry.

Shared by the simulated world and the agent's internal model.  All functions
are pure; the array variants operate on the row layouts documented in
:mod:`avoidsim._kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import VehicleConfig


@dataclass(frozen=True)
class VehicleDims:
    length: float = 4.2
    width: float = 1.72
    l_f: float = 1.35
    l_r: float = 1.35

    def __post_init__(self):
        if self.l_f + self.l_r > self.length:
            raise ValueError("wheelbase exceeds vehicle length")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    @property
    def half_diag(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float
    a_long: float = 0.0
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v, self.a_long, self.delta])

    @staticmethod
    def from_array(a) -> "VehicleState":
        return VehicleState(*(float(x) for x in a[:6]))


@dataclass(frozen=True)
class WorldState:
    """Ground-truth kinematic state of both vehicles."""
    ego: VehicleState
    other: VehicleState

    def as_pair(self):
        return self.ego.as_array()[None, :], self.other.as_array()[None, :]


@dataclass(frozen=True)
class Action:
    a_long_cmd: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a_long_cmd, self.omega])


@dataclass(frozen=True)
class CollisionResult:
    collided: bool
    rel_speed: float


def _check_finite(obj, arr, fieldnames):
    for name, val in zip(fieldnames, arr):
        if not math.isfinite(val):
            raise ValueError(f"non-finite {obj} field {name!r}: {val}")


def bicycle_step(state: VehicleState, action: Action, dt: float,
                 dims: VehicleDims = VehicleDims(),
                 veh: VehicleConfig | None = None,
                 check_bounds: bool = True) -> VehicleState:
    """One dt step of the kinematic bicycle model with slip angle
    beta = arctan(l_r / (l_f + l_r) * tan(delta)).

    Speed clamps at standstill; the returned a_long is the realized
    acceleration over the step.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    veh = veh or VehicleConfig()
    sa = state.as_array()
    aa = action.as_array()
    _check_finite("state", sa, ("x", "y", "psi", "v", "a_long", "delta"))
    _check_finite("action", aa, ("a_long_cmd", "omega"))
    if check_bounds:
        if abs(action.a_long_cmd) > veh.a_max + 1e-12:
            raise ValueError(f"action a_long_cmd {action.a_long_cmd} exceeds a_max {veh.a_max}")
        if abs(action.omega) > veh.omega_max + 1e-12:
            raise ValueError(f"action omega {action.omega} exceeds omega_max {veh.omega_max}")
    out = np.empty((1, 6))
    _kernels.bicycle_batch(sa[None, :], aa[None, :], dt,
                           dims.l_r / dims.wheelbase, dims.wheelbase,
                           veh.delta_max, out)
    return VehicleState.from_array(out[0])


def bicycle_batch(states: np.ndarray, actions: np.ndarray, dt: float,
                  dims: VehicleDims, delta_max: float) -> np.ndarray:
    out = np.empty_like(states)
    _kernels.bicycle_batch(states, actions, dt, dims.l_r / dims.wheelbase,
                           dims.wheelbase, delta_max, out)
    return out


def apply_pedal_constraint(current: float, planned, *, a0: float = -0.1,
                           j_max: float = 15.0, dt: float = 0.2) -> np.ndarray:
    """Nearest-feasible repair of an acceleration sequence.

    Transitions crossing a0 are routed through one step held at a0, and
    per-step changes are clipped to j_max * dt.  Total on finite input.
    """
    seq = np.asarray(planned, dtype=float).copy()
    if seq.ndim != 1 or seq.size < 1:
        raise ValueError("planned must be a non-empty 1-D sequence")
    if not np.isfinite(seq).all() or not math.isfinite(current):
        raise ValueError("pedal repair requires finite inputs")
    _kernels.pedal_repair_batch(np.array([current]), seq[None, :], a0, j_max * dt)
    return seq


def repair_actions(current_a: float, actions: np.ndarray, veh: VehicleConfig,
                   dt: float, enabled: bool = True) -> np.ndarray:
    """Clip an action batch (..., H, 2) to bounds and pedal-repair the
    acceleration rows.  Returns a new array."""
    out = np.array(actions, dtype=float, copy=True)
    flat = out.reshape(-1, out.shape[-2], 2)
    np.clip(flat[:, :, 0], -veh.a_max, veh.a_max, out=flat[:, :, 0])
    np.clip(flat[:, :, 1], -veh.omega_max, veh.omega_max, out=flat[:, :, 1])
    if enabled:
        starts = np.full(flat.shape[0], current_a)
        accel = np.ascontiguousarray(flat[:, :, 0])
        _kernels.pedal_repair_batch(starts, accel, veh.a0, veh.j_max * dt)
        flat[:, :, 0] = accel
    return out


def check_collision(ego: VehicleState, other: VehicleState,
                    ego_dims: VehicleDims = VehicleDims(),
                    other_dims: VehicleDims = VehicleDims()) -> CollisionResult:
    """Oriented-rectangle overlap (separating axis) plus the magnitude of the
    relative velocity vector."""
    ea = ego.as_array()
    oa = other.as_array()
    _check_finite("ego", ea, ("x", "y", "psi", "v", "a_long", "delta"))
    _check_finite("other", oa, ("x", "y", "psi", "v", "a_long", "delta"))
    hit = np.empty(1, dtype=np.bool_)
    rel = np.empty(1)
    _kernels.collision_pairs(ea[None, :], oa[None, :], ego_dims.length,
                             ego_dims.width, other_dims.length, other_dims.width,
                             hit, rel)
    return CollisionResult(bool(hit[0]), float(rel[0]))


def collision_batch(ego: np.ndarray, other: np.ndarray,
                    ego_dims: VehicleDims, other_dims: VehicleDims):
    m = ego.shape[0]
    hit = np.empty(m, dtype=np.bool_)
    rel = np.empty(m)
    _kernels.collision_pairs(ego, other, ego_dims.length, ego_dims.width,
                             other_dims.length, other_dims.width, hit, rel)
    return hit, rel
