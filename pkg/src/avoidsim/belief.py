"""Particle belief representation and the KDE -> GMM Bayesian update.

A belief over the joint (ego, other, other-latent-control) state is a set of
N particles.  Each update advances the particles through the (optionally
norm-conditioned) transition model, fits an equal-weight Gaussian mixture by
kernel density estimation, multiplies in the linearized Gaussian observation
likelihood component-wise, and resamples N particles from the posterior
mixture.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import bicycle_batch
from .model import ModelContext, TransitionNoise
from .norms import norm_weighted_resample, projected_norm_prob, systematic_resample

log = logging.getLogger(__name__)

LAT_A, LAT_OM = _kernels.LAT_A, _kernels.LAT_OM

# minimum KDE bandwidth per joint-state dimension for the driving belief:
# the belief cannot get sharper than a small fraction of each dimension's
# perceptual scale, which keeps the mixture from collapsing to a point and
# locking out corrective observations
DRIVING_BANDWIDTH_FLOOR = np.array([
    0.05, 0.02, 0.005, 0.05, 0.05, 0.005,   # ego x, y, psi, v, a, delta
    0.10, 0.05, 0.010, 0.10, 0.10, 0.010,   # other block
    0.15, 0.02,                              # latent controls
])


@dataclass
class BeliefParticles:
    """N joint-state samples; rows follow the particle layout
    [ego(6), other(6), lat_a, lat_omega]."""
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ValueError("belief needs a (N>=2, D) state array")
        if not np.isfinite(self.states).all():
            raise ValueError("belief particles must be finite")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def ego_mean(self) -> np.ndarray:
        return self.states[:, 0:6].mean(axis=0)


@dataclass
class BeliefGMM:
    """Equal-dimension diagonal Gaussian mixture."""
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")


@dataclass
class PredictedFutures:
    """Per horizon step: joint state particles (H, N, 12) and sampled
    observations (H, N, C).  Particle n at step tau+1 descends from particle
    n at step tau; the ego block is the shared deterministic rollout."""
    states: np.ndarray
    observations: np.ndarray


def kde_fit(belief: BeliefParticles | np.ndarray, floor: float = 1e-6,
            weights: np.ndarray | None = None) -> BeliefGMM:
    """KDE mixture (one component per particle) with per-dimension Silverman
    bandwidths; optional component weights (default equal)."""
    pts = belief.states if isinstance(belief, BeliefParticles) else np.asarray(belief, dtype=float)
    n, d = pts.shape
    sd = pts.std(axis=0, ddof=1)
    h = sd * (4.0 / 3.0) ** 0.2 * n ** -0.2
    h = np.maximum(h, floor)
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    return BeliefGMM(w, pts.copy(), np.tile(h * h, (n, 1)))


def posterior_update(prior: BeliefGMM, obs_values: np.ndarray, obs_model) -> BeliefGMM:
    """Conjugate per-component Gaussian product with the observation model
    linearized at each component mean (diagonal covariance throughout).

    obs_model must provide means(states), jacobian(states), and sigma.
    """
    obs = np.asarray(obs_values, dtype=float)
    mu = prior.means
    var = prior.variances
    h0 = obs_model.means(mu)
    J = obs_model.jacobian(mu)
    R = obs_model.sigma ** 2
    r = obs[None, :] - h0
    J2 = J * J
    # marginal likelihood of the observation under each component; innovations
    # are gated at 6 sigma per channel so that channels far outside the
    # linearization regime (for example angular rates while passing abeam)
    # cannot yank component means or underflow every weight
    S = R[None, :] + np.einsum("kcd,kd->kc", J2, var)
    gate = 6.0 * np.sqrt(S)
    r = np.clip(r, -gate, gate)
    loglik = -0.5 * np.sum(r * r / S + np.log(2.0 * np.pi * S), axis=1)
    logw = np.log(prior.weights) + loglik
    if not np.any(np.isfinite(logw)):
        log.warning("degenerate observation: all marginal likelihoods underflow; "
                    "keeping prior mixture")
        return BeliefGMM(prior.weights.copy(), mu.copy(), var.copy())
    # diagonal information-form update per component
    prec = 1.0 / var + np.einsum("kcd,c->kd", J2, 1.0 / R)
    var_post = 1.0 / prec
    gain = np.einsum("kcd,kc->kd", J, r / R[None, :])
    mean_post = mu + var_post * gain
    m = logw.max()
    w = np.exp(logw - m)
    w /= w.sum()
    return BeliefGMM(w, mean_post, var_post)


def sample_belief(gmm: BeliefGMM, n: int, rng: np.random.Generator) -> BeliefParticles:
    """Ancestral sampling: component by weight, then a Gaussian draw."""
    idx = rng.choice(gmm.weights.shape[0], size=n, p=gmm.weights)
    draws = gmm.means[idx] + np.sqrt(gmm.variances[idx]) * \
        rng.standard_normal((n, gmm.means.shape[1]))
    return BeliefParticles(draws)


def _advance_joint(states: np.ndarray, ego_action: np.ndarray, noise: TransitionNoise,
                   rng: np.random.Generator, ctx: ModelContext) -> np.ndarray:
    """One kinematic transition step of every particle: ego by the known
    action, other by its perturbed latent controls."""
    out = states.copy()
    n = out.shape[0]
    veh = ctx.cfg.vehicle
    out[:, LAT_A] += noise.sigma_a * rng.standard_normal(n)
    out[:, LAT_OM] += noise.sigma_omega * rng.standard_normal(n)
    np.clip(out[:, LAT_A], -veh.a_max, veh.a_max, out=out[:, LAT_A])
    np.clip(out[:, LAT_OM], -veh.omega_max, veh.omega_max, out=out[:, LAT_OM])
    ego_actions = np.broadcast_to(np.asarray(ego_action, dtype=float), (n, 2))
    out[:, 0:6] = bicycle_batch(np.ascontiguousarray(out[:, 0:6]),
                                np.ascontiguousarray(ego_actions),
                                ctx.dt, ctx.ego_dims, veh.delta_max)
    out[:, 6:12] = bicycle_batch(np.ascontiguousarray(out[:, 6:12]),
                                 np.ascontiguousarray(out[:, 12:14]),
                                 ctx.dt, ctx.other_dims, veh.delta_max)
    return out


def norm_weights(states: np.ndarray, ctx: ModelContext) -> np.ndarray | None:
    """Projected normative weights of advanced particles, or None when the
    filter should not reweight (all equal, or every hypothesis deeply
    non-compliant: pure kinematics once norms are being violated)."""
    w = projected_norm_prob(np.ascontiguousarray(states[:, 6:12]),
                            np.ascontiguousarray(states[:, 12:14]),
                            ctx.norm_model, ctx.other_dims, ctx.dt,
                            ctx.cfg.vehicle.delta_max)
    if w.max() < 10.0 * ctx.norm_model.cfg.floor:
        return None
    if w.max() - w.min() < 1e-12:
        return None
    return w


def propagate_particles(belief: BeliefParticles, ego_action, noise: TransitionNoise,
                        rng: np.random.Generator, ctx: ModelContext) -> BeliefParticles:
    """Advance the belief one step through the norm-conditioned transition
    (kinematic advance followed by norm-weighted systematic resampling)."""
    out = _advance_joint(belief.states, ego_action, noise, rng, ctx)
    if ctx.norm_enabled:
        w = norm_weights(out, ctx)
        if w is not None:
            out = out[systematic_resample(w / w.sum(), float(rng.random()))]
    return BeliefParticles(out)


def advance_weighted(belief: BeliefParticles, ego_action, noise: TransitionNoise,
                     rng: np.random.Generator, ctx: ModelContext):
    """Kinematic advance plus normative importance weights for the Bayesian
    update.  The weights multiply into the posterior mixture together with
    the observation likelihood, so hypotheses that deny observed behavior
    cannot win on norm compliance alone."""
    out = _advance_joint(belief.states, ego_action, noise, rng, ctx)
    w = norm_weights(out, ctx) if ctx.norm_enabled else None
    return BeliefParticles(out), w


def predict_other_futures(states: np.ndarray, horizon: int, noise: TransitionNoise,
                          rng: np.random.Generator, ctx: ModelContext) -> np.ndarray:
    """Roll the other-vehicle block of (N, 14) particles forward ``horizon``
    steps with norm-conditioned resampling.

    Each particle's latent control is its hypothesis of the other's current
    behavior; during prediction the hypothesis stays latched and the executed
    control per step is the latent plus independent Gaussian noise (execution
    variability, not hypothesis drift).  Returns (horizon, N, 8): state
    columns 0..5 plus the latent controls.
    """
    n = states.shape[0]
    veh = ctx.cfg.vehicle
    other = np.ascontiguousarray(states[:, 6:12])
    lat = np.ascontiguousarray(states[:, 12:14])
    draws = rng.standard_normal((horizon, n, 2))
    out = np.empty((horizon, n, 8))
    use_norm = ctx.norm_enabled
    for t in range(horizon):
        ctrl = lat + draws[t] * (noise.sigma_a, noise.sigma_omega)
        np.clip(ctrl[:, 0], -veh.a_max, veh.a_max, out=ctrl[:, 0])
        np.clip(ctrl[:, 1], -veh.omega_max, veh.omega_max, out=ctrl[:, 1])
        other = bicycle_batch(other, ctrl, ctx.dt, ctx.other_dims, veh.delta_max)
        if use_norm:
            idx = norm_weighted_resample(other, lat, ctx.norm_model, ctx.other_dims,
                                         ctx.dt, veh.delta_max, rng)
            if idx is not None:
                other = other[idx]
                lat = lat[idx]
        out[t, :, 0:6] = other
        out[t, :, 6:8] = lat
    return out


def predict_futures(belief: BeliefParticles, actions: np.ndarray,
                    rng: np.random.Generator, ctx: ModelContext) -> PredictedFutures:
    """Joint predicted futures under a policy: the ego block is the
    deterministic rollout of the (pedal-feasible) action sequence from the
    ego belief mean; the other block evolves by the prediction-noise
    transition; one observation is sampled per state particle."""
    from .policy import rollout_ego_actions  # local import to avoid a cycle

    horizon = actions.shape[0]
    n = belief.n
    other = predict_other_futures(belief.states, horizon, ctx.prediction_noise, rng, ctx)
    ego_traj = rollout_ego_actions(belief.ego_mean(), actions[None, :, :], ctx)[0]
    states = np.empty((horizon, n, 12))
    states[:, :, 0:6] = ego_traj[:, None, :]
    states[:, :, 6:12] = other[:, :, 0:6]
    om = ctx.obs_model
    flat_ego = np.ascontiguousarray(states[:, :, 0:6].reshape(-1, 6))
    flat_oth = np.ascontiguousarray(states[:, :, 6:12].reshape(-1, 6))
    mu = om.means_pairs(flat_ego, flat_oth).reshape(horizon, n, om.C)
    obs = mu + om.sigma * rng.standard_normal((horizon, n, om.C))
    return PredictedFutures(states, obs)
