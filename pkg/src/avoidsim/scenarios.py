"""Benchmark conflict scenarios: declarative construction, scripted
other-vehicle behavior, single-run simulation, and seeded batch grids.

Coordinates: the ego drives along +x with its lane centered at y = 0;
right-hand traffic, so the adjacent opposing or parallel lane lies to the
left (+y).  All scripts are open loop with respect to the ego except for
time-to-arrival triggers, which read ego kinematics only.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentStepError, agent_step, init_agent
from .config import Config
from .dynamics import (Action, VehicleDims, VehicleState, WorldState,
                       bicycle_step, check_collision)
from .model import ModelContext, Road, make_preference
from .norms import Lane, NormModel
from .perception import ObsModel, observe

FRONT_TO_REAR_SPEEDS = (10.0, 15.0, 20.0, 25.0)
FRONT_TO_REAR_GAPS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5)
INCURSION_PROFILES = ("steep", "medium", "shallow")
# incursion steering program: (crossing-angle limit rad, final lateral offset m)
INCURSION_PARAMS = {"steep": (0.35, -3.2), "medium": (0.17, 0.0), "shallow": (0.10, 0.925)}


@dataclass
class ScenarioSpec:
    kind: str
    variant: str
    horizon: float
    road: Road
    ego_init: VehicleState
    other_init: VehicleState
    script: dict
    onset_time: float | None
    params: dict = field(default_factory=dict)

    def canonical_text(self) -> str:
        lines = [f"scenario.kind = {self.kind}", f"scenario.variant = {self.variant}",
                 f"scenario.horizon = {self.horizon!r}"]
        for name, veh in (("ego", self.ego_init), ("other", self.other_init)):
            arr = veh.as_array()
            lines.append(f"scenario.{name} = " + " ".join(repr(float(v)) for v in arr))
        lines.append("scenario.road = " + " ".join(
            repr(float(v)) for v in (self.road.lane_lo, self.road.lane_hi,
                                     self.road.road_lo, self.road.road_hi,
                                     self.road.lane_width)))
        lines.append("scenario.onset = " +
                     ("none" if self.onset_time is None else repr(float(self.onset_time))))
        for k in sorted(self.script):
            lines.append(f"scenario.script.{k} = {self.script[k]!r}")
        for k in sorted(self.params):
            lines.append(f"scenario.param.{k} = {self.params[k]!r}")
        return "\n".join(lines) + "\n"

    def label(self) -> str:
        bits = [self.kind]
        if self.variant:
            bits.append(self.variant)
        for k in ("v0", "gap"):
            if k in self.params:
                bits.append(f"{k}{self.params[k]:g}")
        return "_".join(bits)


OUTCOMES = ("no_conflict", "avoided_brake_only", "avoided_steer_left",
            "avoided_steer_right", "avoided_brake_and_steer", "collision")

TRACE_COLUMNS = (
    "t", "ego_x", "ego_y", "ego_psi", "ego_v", "ego_a", "ego_delta",
    "oth_x", "oth_y", "oth_psi", "oth_v", "oth_a", "oth_delta",
    "act_a", "act_omega", "evidence", "surprise", "replanned",
    "prag_velocity", "prag_accel", "prag_steer", "prag_lateral",
    "prag_collision", "prag_safety", "epistemic", "coll_frac", "collided",
)


@dataclass
class Trace:
    meta: dict
    columns: tuple
    data: np.ndarray

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def outcome(self) -> str:
        return self.meta["outcome"]


# -- scenario builders ---------------------------------------------------

def _standard_road(cfg: Config, shoulder: float = 0.0) -> Road:
    w = cfg.scenario.lane_width
    return Road(lane_lo=-w / 2, lane_hi=w / 2, road_lo=-w / 2 - shoulder,
                road_hi=1.5 * w, lane_width=w)


def build_front_to_rear(v0: float, gap: float, cfg: Config,
                        lead_decel: float | None = None) -> ScenarioSpec:
    """Lead vehicle brakes hard to a stop after a short constant-speed phase.
    Initial bumper-to-bumper distance equals v0 * gap."""
    if not any(abs(v0 - v) < 1e-9 for v in FRONT_TO_REAR_SPEEDS):
        raise ValueError(f"v0 must be one of {FRONT_TO_REAR_SPEEDS}, got {v0}")
    if not any(abs(gap - g) < 1e-9 for g in FRONT_TO_REAR_GAPS):
        raise ValueError(f"gap must be one of {FRONT_TO_REAR_GAPS}, got {gap}")
    length = cfg.vehicle.length
    decel = cfg.scenario.lead_decel if lead_decel is None else lead_decel
    return ScenarioSpec(
        kind="front_to_rear", variant=f"v{v0:g}_g{gap:g}",
        horizon=cfg.scenario.front_to_rear_horizon,
        road=_standard_road(cfg),
        ego_init=VehicleState(0.0, 0.0, 0.0, v0),
        other_init=VehicleState(v0 * gap + length, 0.0, 0.0, v0),
        script={"kind": "lead_brake", "hold": cfg.scenario.lead_hold_time,
                "decel": decel},
        onset_time=cfg.scenario.lead_hold_time,
        params={"v0": v0, "gap": gap},
    )


def build_lateral_incursion(profile: str, cfg: Config) -> ScenarioSpec:
    """Oncoming vehicle cuts toward the ego lane at a profile-specific angle,
    starting at a fixed time-to-collision."""
    if profile not in INCURSION_PROFILES:
        raise ValueError(f"profile must be one of {INCURSION_PROFILES}, got {profile!r}")
    sc = cfg.scenario
    v = sc.incursion_speed
    theta, y_final = INCURSION_PARAMS[profile]
    closing = 2.0 * v
    center_gap = closing * (sc.incursion_ttc + sc.incursion_onset) + cfg.vehicle.length
    w = sc.lane_width
    return ScenarioSpec(
        kind="lateral_incursion", variant=profile,
        horizon=sc.incursion_horizon,
        road=_standard_road(cfg, shoulder=sc.shoulder_width),
        ego_init=VehicleState(0.0, 0.0, 0.0, v),
        other_init=VehicleState(center_gap, w, math.pi, v),
        script={"kind": "incursion", "onset": sc.incursion_onset,
                "theta": theta, "y_final": y_final, "lane_y": w},
        onset_time=sc.incursion_onset,
        params={"profile": profile, "v0": v},
    )


def build_intersection(variant: str, v0_ego: float, cfg: Config) -> ScenarioSpec:
    """Right-turn-into-path from a crossing road on the right.

    RS: the other vehicle waits at the stop line and launches when the ego's
    time-to-arrival first drops to the trigger value.  RNS: it approaches at
    constant speed, timed to cross the stop line when the ego is the
    configured time from the intersection, and turns without slowing.
    """
    if variant not in ("RS", "RNS"):
        raise ValueError(f"variant must be RS or RNS, got {variant!r}")
    sc = cfg.scenario
    w = sc.lane_width
    half_len = cfg.vehicle.length / 2
    stop_line = -sc.turn_radius
    lane_x = w / 2
    if variant == "RS":
        tta0 = sc.rs_start_tta
        other = VehicleState(lane_x, stop_line - half_len, math.pi / 2, 0.0)
        onset = None  # stimulus onset is the launch trigger, recorded at run time
    else:
        tta0 = sc.rns_start_tta
        t_cross = tta0 - sc.rns_cross_tta
        if t_cross <= 0:
            raise ValueError("RNS start TTA must exceed the crossing TTA")
        y0 = stop_line - half_len - sc.rns_speed * t_cross
        other = VehicleState(lane_x, y0, math.pi / 2, sc.rns_speed)
        onset = 0.0
    road = Road(lane_lo=-w / 2, lane_hi=w / 2, road_lo=-w / 2, road_hi=1.5 * w,
                lane_width=w)
    return ScenarioSpec(
        kind="intersection", variant=variant,
        horizon=sc.intersection_horizon,
        road=road,
        ego_init=VehicleState(-v0_ego * tta0 - half_len, 0.0, 0.0, v0_ego),
        other_init=other,
        script={"kind": "intersection", "mode": variant, "stop_line": stop_line,
                "radius": sc.turn_radius, "accel": sc.rs_accel,
                "trigger_tta": sc.rs_trigger_tta, "exit_speed": 13.0,
                "lane_x": lane_x},
        onset_time=onset,
        params={"v0": v0_ego},
    )


def build_benign(cfg: Config) -> ScenarioSpec:
    """Oncoming traffic in the opposite lane; no conflict."""
    sc = cfg.scenario
    v = sc.incursion_speed
    center_gap = 2.0 * v * 4.0 + cfg.vehicle.length
    w = sc.lane_width
    return ScenarioSpec(
        kind="benign", variant="",
        horizon=sc.benign_horizon,
        road=_standard_road(cfg, shoulder=sc.shoulder_width),
        ego_init=VehicleState(0.0, 0.0, 0.0, v),
        other_init=VehicleState(center_gap, w, math.pi, v),
        script={"kind": "lane_hold", "lane_y": w},
        onset_time=0.0,
        params={"v0": v},
    )


# -- scripted other-vehicle behavior --------------------------------------

def _capture_steer(state: VehicleState, ref_x: float, ref_y: float, direction: float,
                   theta_lim: float, dt: float, k_y: float = 0.25, t_lead: float = 1.0,
                   t_psi: float = 0.4, delta_lim: float = 0.5, om_lim: float = 1.2,
                   wheelbase: float = 2.7) -> float:
    """Cross-track steering law: head toward the target line (through
    (ref_x, ref_y) along ``direction``) at up to theta_lim off the lane
    direction, settling aligned on it.  Lateral-rate lead damping keeps the
    capture overshoot-free; the heading loop converges over roughly t_psi."""
    n_x, n_y = -math.sin(direction), math.cos(direction)
    lat = (state.x - ref_x) * n_x + (state.y - ref_y) * n_y
    lat_dot = state.v * (math.cos(state.psi) * n_x + math.sin(state.psi) * n_y)
    chi = direction - max(-theta_lim, min(theta_lim, k_y * (lat + t_lead * lat_dot)))
    err = (chi - state.psi + math.pi) % (2 * math.pi) - math.pi
    delta_des = math.atan2(wheelbase * err, t_psi * max(state.v, 1.0))
    delta_des = max(-delta_lim, min(delta_lim, delta_des))
    return max(-om_lim, min(om_lim, (delta_des - state.delta) / dt))


class Script:
    """Deterministic open-loop program for the other vehicle."""

    def __init__(self, spec: ScenarioSpec, cfg: Config):
        self.p = spec.script
        self.cfg = cfg
        self.dt = cfg.sim.dt
        self.trigger_time: float | None = None
        self.phase = "start"

    def step(self, t: float, other: VehicleState, ego: VehicleState) -> Action:
        kind = self.p["kind"]
        if kind == "lead_brake":
            if t < self.p["hold"] - 1e-9 or other.v <= 0.0:
                return Action(0.0, 0.0)
            return Action(max(self.p["decel"], -self.cfg.vehicle.a_max), 0.0)
        if kind == "lane_hold":
            om = _capture_steer(other, 0.0, self.p["lane_y"], math.pi, 0.05, self.dt)
            return Action(0.0, om)
        if kind == "incursion":
            if t < self.p["onset"] - 1e-9:
                om = _capture_steer(other, 0.0, self.p["lane_y"], math.pi, 0.05, self.dt)
            else:
                om = _capture_steer(other, 0.0, self.p["y_final"], math.pi,
                                    self.p["theta"], self.dt)
            return Action(0.0, om)
        if kind == "intersection":
            return self._intersection(t, other, ego)
        raise ValueError(f"unknown script kind {kind!r}")

    def _intersection(self, t: float, other: VehicleState, ego: VehicleState) -> Action:
        p = self.p
        half_len = self.cfg.vehicle.length / 2
        wheelbase = self.cfg.vehicle.l_f + self.cfg.vehicle.l_r
        delta_arc = -math.atan(wheelbase / p["radius"])
        if p["mode"] == "RS":
            if self.trigger_time is None:
                front = ego.x + half_len
                tta = (0.0 - front) / ego.v if ego.v > 1e-6 and front < 0.0 else math.inf
                if tta <= p["trigger_tta"]:
                    self.trigger_time = t
                else:
                    return Action(0.0, 0.0)
            a = p["accel"] if other.v < p["exit_speed"] else 0.0
        else:
            a = 0.0
        # straight until the vehicle center reaches the arc start (at the
        # stop line), so the quarter turn of the configured radius lands on
        # the ego lane center
        turning = other.y >= p["stop_line"] - 1e-9 or self.phase in ("turn", "capture")
        if not turning:
            return Action(a, 0.0)
        if self.phase == "start":
            self.phase = "turn"
        if self.phase == "turn":
            if other.psi <= 0.25:
                self.phase = "capture"
            else:
                om = max(-1.2, min(1.2, (delta_arc - other.delta) / self.dt))
                return Action(a, om)
        om = _capture_steer(other, 0.0, 0.0, 0.0, 0.35, self.dt)
        return Action(a, om)


# -- context assembly and simulation --------------------------------------

def make_norm_model(spec: ScenarioSpec, cfg: Config, dims: VehicleDims) -> NormModel:
    w = cfg.scenario.lane_width
    if spec.kind == "front_to_rear":
        lane = Lane(0.0, 0.0, 0.0, w)
        return NormModel(cfg.norms, lane, dims, horizon_steps=cfg.transition.H_n,
                         dt=cfg.sim.dt, flow=True)
    if spec.kind in ("lateral_incursion", "benign"):
        lane = Lane(0.0, w, math.pi, w)
        return NormModel(cfg.norms, lane, dims, horizon_steps=cfg.transition.H_n,
                         dt=cfg.sim.dt, flow=True)
    if spec.kind == "intersection":
        lane = Lane(spec.script["lane_x"], 0.0, math.pi / 2, w)
        return NormModel(cfg.norms, lane, dims, stop_line=spec.script["stop_line"],
                         horizon_steps=cfg.transition.H_n, dt=cfg.sim.dt)
    raise ValueError(f"unknown scenario kind {spec.kind!r}")


def make_context(spec: ScenarioSpec, cfg: Config) -> ModelContext:
    dims = VehicleDims(cfg.vehicle.length, cfg.vehicle.width,
                       cfg.vehicle.l_f, cfg.vehicle.l_r)
    obs_model = ObsModel(cfg.perception, dims, dims,
                         direct=cfg.ablation.no_looming,
                         threshold_enabled=not cfg.ablation.no_looming_threshold)
    return ModelContext(
        cfg=cfg, ego_dims=dims, other_dims=dims, obs_model=obs_model,
        norm_model=make_norm_model(spec, cfg, dims), road=spec.road,
        pref=make_preference(cfg, mu_v=spec.ego_init.v),
    )


def classify_outcome(trace_data: np.ndarray, columns: tuple, cfg: Config):
    """Outcome label and steering direction from a stored per-step table
    (pure and idempotent: re-running on a saved trace gives the same label)."""
    idx = {c: i for i, c in enumerate(columns)}
    collided = trace_data[:, idx["collided"]] > 0.5
    a = trace_data[:, idx["ego_a"]]
    delta = trace_data[:, idx["ego_delta"]]
    brake = bool(np.any(a <= cfg.metrics.brake_accel_threshold))
    steer_mask = np.abs(delta) >= cfg.metrics.steer_angle_threshold
    steer = bool(np.any(steer_mask))
    direction = ""
    if steer:
        direction = "left" if delta[np.argmax(steer_mask)] > 0 else "right"
    if np.any(collided):
        return "collision", direction
    if brake and steer:
        return "avoided_brake_and_steer", direction
    if steer:
        return ("avoided_steer_left" if direction == "left" else "avoided_steer_right",
                direction)
    if brake:
        return "avoided_brake_only", direction
    return "no_conflict", direction


def run_simulation(spec: ScenarioSpec, cfg: Config, seed: int) -> Trace:
    """Simulate one seeded run of a scenario and classify its outcome."""
    ctx = make_context(spec, cfg)
    ss = np.random.SeedSequence(seed)
    rng_world, rng_agent = (np.random.Generator(np.random.PCG64(s))
                            for s in ss.spawn(2))
    world = WorldState(spec.ego_init, spec.other_init)
    agent = init_agent(world, ctx)
    script = Script(spec, cfg)
    dt = cfg.sim.dt
    n_steps = int(round(spec.horizon / dt))
    rows = []
    collided_at = None
    coll_rel = 0.0
    error = ""
    dims = ctx.ego_dims
    for i in range(n_steps):
        t = i * dt
        obs = observe(world, ctx.obs_model, rng_world)
        try:
            action, agent, diag = agent_step(agent, obs, ctx, rng_agent)
        except AgentStepError as exc:
            error = str(exc)
            break
        oth_cmd = script.step(t, world.other, world.ego)
        col = check_collision(world.ego, world.other, dims, dims)
        if col.collided and collided_at is None:
            collided_at = t
            coll_rel = col.rel_speed
        comp = diag.breakdown.component_totals
        rows.append([
            t, world.ego.x, world.ego.y, world.ego.psi, world.ego.v,
            world.ego.a_long, world.ego.delta,
            world.other.x, world.other.y, world.other.psi, world.other.v,
            world.other.a_long, world.other.delta,
            action[0], action[1], diag.evidence, diag.surprise,
            1.0 if diag.replanned else 0.0,
            comp[0], comp[1], comp[2], comp[3], comp[4], comp[5], comp[6],
            float(diag.breakdown.coll_frac.mean()), 1.0 if col.collided else 0.0,
        ])
        ego_next = bicycle_step(world.ego, Action(float(action[0]), float(action[1])),
                                dt, dims, cfg.vehicle)
        oth_next = bicycle_step(world.other, oth_cmd, dt, dims, cfg.vehicle,
                                check_bounds=False)
        world = WorldState(ego_next, oth_next)
        if collided_at is not None and t >= collided_at + 2.0:
            break
    data = np.asarray(rows, dtype=float) if rows else np.empty((0, len(TRACE_COLUMNS)))
    meta = {
        "kind": spec.kind, "variant": spec.variant, "seed": int(seed),
        "config_digest": cfg.digest(), "onset_time": spec.onset_time,
        "trigger_time": script.trigger_time, "horizon": spec.horizon,
        "dt": dt, "error": error,
    }
    meta.update({f"param_{k}": v for k, v in spec.params.items()})
    if error:
        meta.update({"outcome": "error", "outcome_rel_speed": 0.0, "steer_dir": ""})
        return Trace(meta, TRACE_COLUMNS, data)
    if spec.onset_time is None:
        meta["onset_time"] = script.trigger_time
    outcome, direction = classify_outcome(data, TRACE_COLUMNS, cfg)
    if collided_at is not None:
        outcome = "collision"
    meta.update({
        "outcome": outcome,
        "outcome_rel_speed": coll_rel if collided_at is not None else 0.0,
        "steer_dir": direction,
    })
    return Trace(meta, TRACE_COLUMNS, data)


# -- batch running ---------------------------------------------------------

def derive_seed(base_seed: int, spec: ScenarioSpec, rep: int) -> int:
    digest = hashlib.sha256(
        (spec.canonical_text() + f"rep={rep}\n").encode()).digest()
    return (int.from_bytes(digest[:8], "big") ^ (base_seed & 0xFFFFFFFFFFFFFFFF))


def _run_task(args):
    spec, cfg, seed, tag = args
    trace = run_simulation(spec, cfg, seed)
    trace.meta["tag"] = tag
    return trace


def run_batch(grid, cfg: Config, base_seed: int = 0, jobs: int = 1):
    """Run (spec, repetitions) pairs with derived per-run seeds.

    Results are ordered by (grid index, repetition) regardless of worker
    scheduling, so reports are identical across job counts.
    """
    tasks = []
    for gi, (spec, reps) in enumerate(grid):
        for rep in range(reps):
            seed = derive_seed(base_seed, spec, rep)
            tasks.append((spec, cfg, seed, f"{gi:04d}_{rep:03d}"))
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks, chunksize=4))
