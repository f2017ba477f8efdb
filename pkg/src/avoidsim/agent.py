"""The per-step agent loop: observe, update belief, accumulate surprise,
extend or fully re-plan, emit an action.

Surprise is the residual information of the pragmatic value: the gap between
the best attainable preference log density and the current policy's
particle-mean pragmatic value, summed over the horizon.  It integrates
deterministically at the drift rate into the evidence level; crossing the
threshold triggers a full re-plan and resets the level to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import (DRIVING_BANDWIDTH_FLOOR, BeliefParticles, advance_weighted,
                     kde_fit, posterior_update, sample_belief)
from .dynamics import WorldState
from .model import ModelContext, PreferenceParams
from .perception import Observation
from .policy import EFEBreakdown, PlanningContext, Policy, cem_plan_ctx, extend_policy_ctx


class AgentStepError(RuntimeError):
    """A step was rejected (for example, a non-finite observation)."""


@dataclass
class AgentState:
    belief: BeliefParticles
    policy: Policy
    evidence: float
    last_action: np.ndarray
    step_index: int = 0


@dataclass
class StepDiagnostics:
    breakdown: EFEBreakdown
    surprise: float
    evidence: float          # after accumulation, before any re-plan reset
    replanned: bool


def surprise(pragmatic_per_step, pref: PreferenceParams) -> float:
    """Residual information of the pragmatic value over one horizon."""
    seq = np.asarray(pragmatic_per_step, dtype=float)
    eps = seq.shape[0] * pref.peak - seq.sum()
    return max(0.0, float(eps))


def accumulate(evidence: float, eps: float, drift_rate: float) -> float:
    return evidence + drift_rate * eps


def init_agent(world: WorldState, ctx: ModelContext) -> AgentState:
    """Belief initialized at the true joint state; initial policy holds the
    current speed on a straight course."""
    n = ctx.cfg.sim.N
    row = np.concatenate([world.ego.as_array(), world.other.as_array(),
                          [world.other.a_long, 0.0]])
    particles = BeliefParticles(np.tile(row, (n, 1)))
    policy = Policy(np.zeros((ctx.cfg.sim.H, 2)))
    return AgentState(particles, policy, 0.0, np.zeros(2), 0)


def agent_step(agent: AgentState, obs: Observation, ctx: ModelContext,
               rng: np.random.Generator):
    """One decision cycle.  Returns (action, next agent state, diagnostics)."""
    cfg = ctx.cfg
    values = np.asarray(obs.values, dtype=float)
    if not np.isfinite(values).all():
        bad = obs.channels[int(np.argmin(np.isfinite(values)))]
        raise AgentStepError(f"non-finite observation channel {bad!r}")

    belief = agent.belief
    weights = None
    if agent.step_index > 0:
        belief, weights = advance_weighted(belief, agent.last_action,
                                           ctx.update_noise, rng, ctx)
    gmm = posterior_update(kde_fit(belief, floor=DRIVING_BANDWIDTH_FLOOR, weights=weights),
                           values, ctx.obs_model)
    belief = sample_belief(gmm, cfg.sim.N, rng)

    pctx = PlanningContext(belief, ctx, rng, current_a=float(agent.last_action[0]))

    # current policy, shifted past the executed action and padded for scoring
    tail = agent.policy.actions[1:]
    eval_actions = pctx.repair(np.vstack([tail, tail[-1:]])[None])[0]
    breakdown = pctx.breakdown(eval_actions, repair=False)
    eps = surprise(breakdown.pragmatic_per_step, ctx.pref)
    ev = accumulate(agent.evidence, eps, cfg.evidence.drift_rate)

    if cfg.ablation.no_accumulation or ev >= cfg.evidence.threshold:
        policy = cem_plan_ctx(pctx, rng, warm_start=eval_actions,
                              created_at=agent.step_index)
        ev_next = 0.0
        replanned = True
    else:
        policy = extend_policy_ctx(pctx, eval_actions[:-1], rng,
                                   created_at=agent.policy.created_at)
        ev_next = ev
        replanned = False

    action = policy.actions[0].copy()
    nxt = AgentState(belief, policy, ev_next, action, agent.step_index + 1)
    return action, nxt, StepDiagnostics(breakdown, eps, ev, replanned)
