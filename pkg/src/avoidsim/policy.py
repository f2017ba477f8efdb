"""Preference prior, expected-free-energy evaluation on particle sets, and
cross-entropy policy search (full re-plan and one-step extension).

Because the other vehicle is unresponsive to the ego, behavior prediction and
policy roll-outs separate: one planning event draws a single set of predicted
other-vehicle futures and observation-noise values, and every candidate
policy is scored against that shared ensemble (common random numbers).  Only
the deterministic ego rollout and the relative observation geometry differ
between candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .belief import BeliefParticles, PredictedFutures, predict_other_futures
from .dynamics import repair_actions
from .model import ModelContext, PreferenceParams, Road, lateral_logpref

EPIST = 6  # component order: velocity, accel, steer, lateral, collision, safety, epistemic
COMPONENT_NAMES = ("velocity", "accel", "steer", "lateral", "collision", "safety", "epistemic")
N_EGO_CHANNELS = 5  # leading observation channels with candidate-shared means


@dataclass(frozen=True)
class Policy:
    """A length-H sequence of (a_long_cmd, omega) actions."""
    actions: np.ndarray
    created_at: int = -1

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=float))
        if self.actions.ndim != 2 or self.actions.shape[1] != 2:
            raise ValueError("policy actions must have shape (H, 2)")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@dataclass
class EFEBreakdown:
    """Per-step value components (H, 7) plus the colliding-particle fraction."""
    per_step: np.ndarray
    coll_frac: np.ndarray

    @property
    def pragmatic_per_step(self) -> np.ndarray:
        return self.per_step[:, :EPIST].sum(axis=1)

    @property
    def epistemic_per_step(self) -> np.ndarray:
        return self.per_step[:, EPIST]

    @property
    def component_totals(self) -> np.ndarray:
        return self.per_step.sum(axis=0)

    @property
    def total(self) -> float:
        """Expected free energy: negative pragmatic and epistemic value summed
        over the horizon."""
        return float(-(self.pragmatic_per_step.sum() + self.epistemic_per_step.sum()))


@dataclass(frozen=True)
class ObsSummary:
    """Deterministic per-particle summary used by the preference density."""
    v: float
    a_long: float
    omega: float
    y: float
    collided: bool = False
    rel_speed: float = 0.0
    unsafe: bool = False
    cf_rel_speed: float = 0.0


def _gauss_logpdf(x, sigma, mu=0.0):
    return -0.5 * ((np.asarray(x, dtype=float) - mu) / sigma) ** 2 \
        - math.log(sigma * math.sqrt(2.0 * math.pi))


def preference_logpdf(summary: ObsSummary, pref: PreferenceParams, road: Road,
                      ego_width: float) -> np.ndarray:
    """The six additive log components of the preference density."""
    g_scale = pref.g_collision / pref.collision_ref_speed
    return np.array([
        float(_gauss_logpdf(summary.v, pref.sigma_v, pref.mu_v)),
        float(_gauss_logpdf(summary.a_long, pref.sigma_a)),
        float(_gauss_logpdf(summary.omega, pref.sigma_omega)),
        float(lateral_logpref(summary.y, ego_width, road, pref)),
        g_scale * summary.rel_speed if summary.collided else 0.0,
        pref.safety_weight * g_scale * summary.cf_rel_speed if summary.unsafe else 0.0,
    ])


def pragmatic_value(summaries, pref: PreferenceParams, road: Road, ego_width: float):
    """Particle-mean preference log density with its component breakdown."""
    comps = np.stack([preference_logpdf(s, pref, road, ego_width) for s in summaries])
    mean = comps.mean(axis=0)
    return float(mean.sum()), mean


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def epistemic_value(state_particles: np.ndarray, obs_particles: np.ndarray, obs_model) -> float:
    """Posterior-predictive entropy minus expected ambiguity, estimated by
    cross-evaluating the observation density over all N x N pairs."""
    states = np.asarray(state_particles, dtype=float)
    if states.shape[1] < _kernels.STATE_DIM:
        pad = np.zeros((states.shape[0], _kernels.STATE_DIM - states.shape[1]))
        states = np.hstack([states, pad])
    obs = np.asarray(obs_particles, dtype=float)
    n = states.shape[0]
    mu = obs_model.means(states)
    sig = obs_model.sigma
    lognorm = float(np.sum(np.log(sig))) + 0.5 * mu.shape[1] * math.log(2.0 * math.pi)
    zo = obs / sig
    zm = mu / sig
    d = (zo * zo).sum(axis=1)[:, None] + (zm * zm).sum(axis=1)[None, :] - 2.0 * zo @ zm.T
    lp = -0.5 * d - lognorm
    first = float(-np.mean(_logsumexp(lp, axis=1) - math.log(n)))
    return first - obs_model.entropy()


class PlanningContext:
    """One planning event: shared predicted other-vehicle futures, shared
    observation noise draws, and batched candidate evaluation."""

    def __init__(self, belief: BeliefParticles, ctx: ModelContext,
                 rng: np.random.Generator, current_a: float | None = None):
        self.ctx = ctx
        self.belief = belief
        cfg = ctx.cfg
        self.H = cfg.sim.H
        self.N = belief.n
        self.other_fut = predict_other_futures(
            belief.states, self.H, ctx.prediction_noise, rng, ctx)
        self.other_states = np.ascontiguousarray(self.other_fut[:, :, 0:6])
        self.ego_start = belief.ego_mean()
        self.current_a = float(self.ego_start[4] if current_a is None else current_a)
        om = ctx.obs_model
        self.obs_eps = rng.standard_normal((self.H, self.N, om.C))
        self._lognorm = float(np.sum(np.log(om.sigma))) \
            + 0.5 * om.C * math.log(2.0 * math.pi)
        self.include_epistemic = not cfg.ablation.no_epistemic

    # -- rollout helpers -------------------------------------------------
    def _rollout(self, actions: np.ndarray) -> np.ndarray:
        return rollout_ego_actions(self.ego_start, actions, self.ctx)

    def repair(self, raw_actions: np.ndarray, start_a: float | None = None) -> np.ndarray:
        cfg = self.ctx.cfg
        return repair_actions(self.current_a if start_a is None else start_a,
                              raw_actions, cfg.vehicle, cfg.sim.dt,
                              enabled=not cfg.ablation.no_pedal_constraint)

    # -- scoring ---------------------------------------------------------
    def _gauss_components(self, ego_traj, actions):
        pref = self.ctx.pref
        comps = np.empty(ego_traj.shape[:2] + (7,))
        comps[..., 0] = _gauss_logpdf(ego_traj[..., 3], pref.sigma_v, pref.mu_v)
        comps[..., 1] = _gauss_logpdf(ego_traj[..., 4], pref.sigma_a)
        comps[..., 2] = _gauss_logpdf(actions[..., 1], pref.sigma_omega)
        comps[..., 3] = lateral_logpref(ego_traj[..., 1], self.ctx.ego_dims.width,
                                        self.ctx.road, pref)
        return comps

    def _geometry(self, ego_traj):
        ctx = self.ctx
        pref = ctx.pref
        B, H = ego_traj.shape[0], ego_traj.shape[1]
        coll = np.empty((B, H))
        safe = np.empty((B, H))
        frac = np.empty((B, H))
        state = np.empty((B, self.N), dtype=np.uint8)
        sev = np.empty((B, self.N))
        _kernels.pragmatic_geometry(
            ego_traj, self.other_states[:H], ctx.ego_dims.length, ctx.ego_dims.width,
            ctx.other_dims.length, ctx.other_dims.width,
            pref.g_collision / pref.collision_ref_speed,
            pref.safety_weight * pref.g_collision / pref.collision_ref_speed,
            -pref.a_ov_min, ctx.cfg.vehicle.a_max, pref.response_delay, ctx.dt,
            coll, safe, frac, state, sev)
        return coll, safe, frac, state, sev

    def _obs_means(self, ego_traj) -> np.ndarray:
        B, H = ego_traj.shape[0], ego_traj.shape[1]
        om = self.ctx.obs_model
        out = np.empty((B, H, self.N, om.C))
        _kernels.obs_means_grid(ego_traj, self.other_states[:H],
                                om._kr, om._L, self.ctx.other_dims.length,
                                self.ctx.other_dims.width,
                                om.threshold if om.threshold > 0 else -1.0,
                                om.mode, out)
        return out

    def _epistemic(self, mu: np.ndarray) -> np.ndarray:
        """Information-gain estimate per (candidate, step) from channel means
        (B, H, N, C) and the shared noise draws.  Ego channels (identical
        means across particles) enter through their exact closed form."""
        om = self.ctx.obs_model
        B, H, N, C = mu.shape
        flat = mu.reshape(B * H, N, C)
        out = np.empty(B * H)
        _kernels.epistemic_from_means_steps(flat, self.obs_eps[:H], H, om.sigma,
                                            N_EGO_CHANNELS, out)
        return out.reshape(B, H)

    def evaluate_batch(self, actions: np.ndarray, repair: bool = True,
                       include_epistemic: bool | None = None):
        """Score a (B, H, 2) action batch.  Returns (repaired actions,
        ego trajectories, per-step components (B, H, 7), EFE (B,),
        collision fraction (B, H))."""
        acts = self.repair(actions) if repair else np.asarray(actions, dtype=float)
        ego_traj = self._rollout(acts)
        comps = self._gauss_components(ego_traj, acts)
        coll, safe, frac, _, _ = self._geometry(ego_traj)
        comps[..., 4] = coll
        comps[..., 5] = safe
        epi = include_epistemic if include_epistemic is not None else self.include_epistemic
        if epi:
            comps[..., EPIST] = self._epistemic(self._obs_means(ego_traj))
        else:
            comps[..., EPIST] = 0.0
        efe = -comps.sum(axis=(1, 2))
        return acts, ego_traj, comps, efe, frac

    def breakdown(self, actions: np.ndarray, repair: bool = False) -> EFEBreakdown:
        _, _, comps, _, frac = self.evaluate_batch(actions[None], repair=repair)
        return EFEBreakdown(comps[0], frac[0])

    def futures(self, actions: np.ndarray) -> PredictedFutures:
        """Assemble the joint predicted futures for one action sequence."""
        ego_traj = self._rollout(actions[None])[0]
        states = np.empty((self.H, self.N, 12))
        states[:, :, 0:6] = ego_traj[:, None, :]
        states[:, :, 6:12] = self.other_states
        mu = self._obs_means(ego_traj[None])[0]
        obs = mu + self.ctx.obs_model.sigma * self.obs_eps
        return PredictedFutures(states, obs)


def rollout_ego_actions(start: np.ndarray, actions: np.ndarray, ctx: ModelContext) -> np.ndarray:
    """Deterministic bicycle rollout of (B, H, 2) actions from one state."""
    dims = ctx.ego_dims
    actions = np.ascontiguousarray(actions, dtype=float)
    out = np.empty(actions.shape[:2] + (6,))
    _kernels.rollout_ego(np.ascontiguousarray(start, dtype=float), actions, ctx.dt,
                         dims.l_r / dims.wheelbase, dims.wheelbase,
                         ctx.cfg.vehicle.delta_max, out)
    return out


def cem_optimize(objective, rng: np.random.Generator, *, K: int, M: int, beta: float,
                 init_mean: np.ndarray, init_std: np.ndarray, warm_start=None,
                 repair=None):
    """Generic cross-entropy optimizer over action arrays.

    objective maps a (M, ...) candidate batch to (M,) scores (lower is
    better); repair (optional) projects raw samples onto the feasible set
    before evaluation.  Keeps ceil(beta*M) elites per iteration, refits
    per-dimension mean/std without correlations, and returns the best
    candidate ever evaluated.
    """
    mean = np.asarray(init_mean, dtype=float).copy()
    std = np.asarray(init_std, dtype=float).copy()
    n_elite = max(1, math.ceil(beta * M))
    best = None
    best_score = math.inf
    for k in range(K):
        raw = mean[None] + std[None] * rng.standard_normal((M,) + mean.shape)
        if k == 0 and warm_start is not None:
            raw[0] = warm_start
        cands = repair(raw) if repair is not None else raw
        scores = np.asarray(objective(cands), dtype=float)
        order = np.argsort(scores, kind="stable")
        if scores[order[0]] < best_score:
            best_score = float(scores[order[0]])
            best = cands[order[0]].copy()
        elites = cands[order[:n_elite]]
        mean = elites.mean(axis=0)
        std = elites.std(axis=0)
    return best, best_score


def _init_std(ctx: ModelContext) -> np.ndarray:
    pc = ctx.cfg.policy
    std = np.empty((ctx.cfg.sim.H, 2))
    std[:, 0] = pc.init_sigma_a
    std[:, 1] = pc.init_sigma_omega
    return std


def cem_plan_ctx(pctx: PlanningContext, rng: np.random.Generator,
                 warm_start: np.ndarray | None = None, created_at: int = -1) -> Policy:
    """Full re-plan: CEM over the entire action sequence."""
    ctx = pctx.ctx
    pc = ctx.cfg.policy

    def objective(cands):
        return pctx.evaluate_batch(cands, repair=False)[3]

    best, _ = cem_optimize(
        objective, rng, K=pc.K, M=pc.M, beta=pc.beta,
        init_mean=np.zeros((ctx.cfg.sim.H, 2)), init_std=_init_std(ctx),
        warm_start=warm_start, repair=pctx.repair)
    return Policy(best, created_at)


def extend_policy_ctx(pctx: PlanningContext, tail: np.ndarray, rng: np.random.Generator,
                      created_at: int = -1) -> Policy:
    """Shift-and-complete: hold the H-1 inherited actions fixed and run CEM
    over the final action only, continuing the prefix's collision state and
    pedal chain across the seam."""
    ctx = pctx.ctx
    cfg = ctx.cfg
    pc = cfg.policy
    n = pctx.N
    h_pre = tail.shape[0]
    prefix_traj = pctx._rollout(tail[None])[0]
    end_state = prefix_traj[-1]
    seam_a = float(tail[-1, 0])
    # absorbing collision state at the end of the prefix
    _, _, _, state, sev = pctx._geometry(prefix_traj[None])
    prev_state, prev_sev = state[0], sev[0]
    other_last = np.ascontiguousarray(pctx.other_states[h_pre])
    pref = ctx.pref
    g_scale = pref.g_collision / pref.collision_ref_speed
    om = ctx.obs_model
    eps_last = pctx.obs_eps[h_pre]

    def repair_last(raw):
        out = raw.copy()
        np.clip(out[:, 0, 1], -cfg.vehicle.omega_max, cfg.vehicle.omega_max,
                out=out[:, 0, 1])
        np.clip(out[:, 0, 0], -cfg.vehicle.a_max, cfg.vehicle.a_max, out=out[:, 0, 0])
        if not cfg.ablation.no_pedal_constraint:
            accel = np.ascontiguousarray(out[:, :, 0])
            _kernels.pedal_repair_batch(np.full(out.shape[0], seam_a), accel,
                                        cfg.vehicle.a0, cfg.vehicle.j_max * cfg.sim.dt)
            out[:, :, 0] = accel
        return out

    def objective(cands):
        b = cands.shape[0]
        ego_last = rollout_ego_actions(end_state, cands, ctx)[:, 0, :]
        comps = pctx._gauss_components(ego_last[:, None, :], cands)[:, 0, :]
        coll = np.empty(b)
        safe = np.empty(b)
        _kernels.pragmatic_last_step(
            np.ascontiguousarray(ego_last), other_last, prev_state, prev_sev,
            ctx.ego_dims.length, ctx.ego_dims.width,
            ctx.other_dims.length, ctx.other_dims.width,
            g_scale, pref.safety_weight * g_scale,
            -pref.a_ov_min, cfg.vehicle.a_max, pref.response_delay, ctx.dt,
            coll, safe)
        prag = comps[:, :4].sum(axis=1) + coll + safe
        if pctx.include_epistemic:
            ego_rep = np.repeat(ego_last[:, None, :], n, axis=1).reshape(-1, 6)
            oth_rep = np.broadcast_to(other_last[None], (b, n, 6)).reshape(-1, 6)
            mu = om.means_pairs(np.ascontiguousarray(ego_rep),
                                np.ascontiguousarray(oth_rep)).reshape(b, n, om.C)
            epist = np.empty(b)
            _kernels.epistemic_from_means(mu, eps_last, om.sigma, N_EGO_CHANNELS, epist)
        else:
            epist = 0.0
        return -(prag + epist)

    warm = tail[-1:].reshape(1, 2)
    best, _ = cem_optimize(
        objective, rng, K=pc.K, M=pc.M, beta=pc.beta,
        init_mean=np.zeros((1, 2)), init_std=_init_std(ctx)[:1],
        warm_start=warm, repair=repair_last)
    return Policy(np.vstack([tail, best]), created_at)


# -- public single-call wrappers ----------------------------------------

def efe(policy: Policy, belief: BeliefParticles, ctx: ModelContext,
        rng: np.random.Generator, include_epistemic: bool = True):
    """Expected free energy of one (feasible) policy on fresh predicted
    futures; returns the breakdown and the futures used."""
    pctx = PlanningContext(belief, ctx, rng)
    _, _, comps, _, frac = pctx.evaluate_batch(
        policy.actions[None], repair=False, include_epistemic=include_epistemic)
    return EFEBreakdown(comps[0], frac[0]), pctx.futures(policy.actions)


def cem_plan(belief: BeliefParticles, ctx: ModelContext, rng: np.random.Generator,
             warm_start: Policy | None = None) -> Policy:
    pctx = PlanningContext(belief, ctx, rng)
    return cem_plan_ctx(pctx, rng,
                        None if warm_start is None else warm_start.actions)


def extend_policy(current: Policy, belief: BeliefParticles, ctx: ModelContext,
                  rng: np.random.Generator) -> Policy:
    pctx = PlanningContext(belief, ctx, rng)
    return extend_policy_ctx(pctx, current.actions[1:], rng,
                             created_at=current.created_at)
