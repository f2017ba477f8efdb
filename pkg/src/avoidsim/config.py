"""Model configuration: every tunable parameter with its default value.

The configuration is flat with one section level.  The text format accepted by
:func:`parse_config` is line oriented::

    # comment
    section.key = value [unit]

Values are floats, ints, booleans (``true``/``false``) or bare strings.  A
trailing unit token is optional; when present it must match the unit declared
for that key (``policy.M = 1000`` and ``sim.dt = 0.2 s`` are both valid,
``sim.dt = 0.2 m`` is not).  Unknown keys, malformed lines, unit mismatches
and out-of-range values raise :class:`ConfigError` naming the key and line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Raised for malformed configuration text or invalid values."""


def _f(default, unit="", lo=None, hi=None):
    return field(default=default, metadata={"unit": unit, "lo": lo, "hi": hi})


@dataclass
class SimConfig:
    dt: float = _f(0.2, "s", lo=1e-6)            # simulation / planning time step
    H: int = _f(30, "steps", lo=1)               # planning horizon length
    N: int = _f(75, "particles", lo=2)           # belief particle count


@dataclass
class VehicleConfig:
    length: float = _f(4.2, "m", lo=0.5)
    width: float = _f(1.72, "m", lo=0.3)
    l_f: float = _f(1.35, "m", lo=0.1)           # front axle to center of mass
    l_r: float = _f(1.35, "m", lo=0.1)           # rear axle to center of mass
    a_max: float = _f(9.0, "m/s^2", lo=0.1)
    omega_max: float = _f(0.5, "rad/s", lo=0.01)
    delta_max: float = _f(0.6, "rad", lo=0.01)
    j_max: float = _f(15.0, "m/s^3", lo=0.1)     # pedal jerk limit
    a0: float = _f(-0.1, "m/s^2")                # no-pedal acceleration (dwell level)


@dataclass
class PerceptionConfig:
    phidot_threshold: float = _f(0.00215, "1/s", lo=0.0)  # looming detection limit
    sigma_v_ego: float = _f(0.2, "m/s", lo=1e-9)
    sigma_a_ego: float = _f(0.1, "m/s^2", lo=1e-9)
    sigma_y_ego: float = _f(0.05, "m", lo=1e-9)
    sigma_psi_ego: float = _f(0.01, "rad", lo=1e-9)
    sigma_delta_ego: float = _f(0.005, "rad", lo=1e-9)
    sigma_phi: float = _f(0.002, "rad", lo=1e-9)
    sigma_phidot: float = _f(0.001, "1/s", lo=1e-9)
    sigma_bearing: float = _f(0.002, "rad", lo=1e-9)
    sigma_bearing_rate: float = _f(0.002, "rad/s", lo=1e-9)
    sigma_rel_speed: float = _f(0.4, "m/s", lo=1e-9)
    sigma_rel_accel: float = _f(0.4, "m/s^2", lo=1e-9)
    # metric-space channels used by the direct-perception ablation
    sigma_distance: float = _f(1.0, "m", lo=1e-9)
    sigma_lat_offset: float = _f(0.15, "m", lo=1e-9)
    sigma_lat_rate: float = _f(0.3, "m/s", lo=1e-9)


@dataclass
class TransitionConfig:
    sigma_a_update: float = _f(3.0, "m/s^2", lo=0.0)       # other accel noise, belief update
    sigma_omega_update: float = _f(0.4575, "rad/s", lo=0.0)
    sigma_a_predict: float = _f(0.6, "m/s^2", lo=0.0)      # other accel noise, prediction
    sigma_omega_predict: float = _f(0.0915, "rad/s", lo=0.0)
    H_n: int = _f(20, "steps", lo=2)                       # norm projection horizon


@dataclass
class NormConfig:
    floor: float = _f(1e-6, "", lo=1e-12, hi=0.1)
    lane_scale: float = _f(0.3, "m", lo=1e-3)       # logistic scale of lateral encroachment
    heading_scale: float = _f(0.1, "rad", lo=1e-3)  # logistic scale of heading deviation
    heading_tol: float = _f(0.05, "rad", lo=0.0)    # tolerated heading deviation
    yield_decel: float = _f(2.5, "m/s^2", lo=0.1)   # comfortable stopping deceleration
    yield_scale: float = _f(2.0, "m", lo=1e-3)      # logistic scale of stop-line overshoot
    steer_decay_tau: float = _f(0.4, "s", lo=1e-3)  # steering wind-down time in projections
    heading_relax_tau: float = _f(2.0, "s", lo=1e-3)  # heading relaxation time in projections
    flow_decel_tol: float = _f(1.0, "m/s^2", lo=0.0)   # tolerated deceleration in flowing traffic
    flow_scale: float = _f(0.5, "m/s^2", lo=1e-3)      # logistic scale beyond the tolerance


@dataclass
class PreferenceConfig:
    sigma_v: float = _f(0.5, "m/s", lo=1e-9)
    sigma_a: float = _f(0.1, "m/s^2", lo=1e-9)
    sigma_omega: float = _f(0.02, "1/s", lo=1e-9)
    g_lane: float = _f(-1000.0, "", hi=0.0)        # on a boundary / in another lane
    g_road: float = _f(-15000.0, "", hi=0.0)       # off the road
    g_collision: float = _f(-10000.0, "", hi=0.0)  # collision at the reference speed
    collision_ref_speed: float = _f(10.0, "m/s", lo=0.1)
    lat_blend: float = _f(0.2, "m", lo=1e-3)       # linear blend width at region edges


@dataclass
class SafetyConfig:
    a_ov_min: float = _f(-6.0, "m/s^2", hi=-0.1)   # assumed sudden braking of the other
    response_delay: float = _f(1.0, "s", lo=0.0)
    weight: float = _f(0.1, "", lo=0.0, hi=1.0)    # soft weight of the safety penalty


@dataclass
class PolicyConfig:
    K: int = _f(10, "iterations", lo=1)
    M: int = _f(100, "candidates", lo=1)
    beta: float = _f(0.1, "", lo=1e-3, hi=1.0)
    init_sigma_a: float = _f(5.0, "m/s^2", lo=1e-6)
    init_sigma_omega: float = _f(0.1, "1/s", lo=1e-6)


@dataclass
class EvidenceConfig:
    drift_rate: float = _f(10.0 ** -5.95, "", lo=0.0)
    threshold: float = _f(1.0, "", lo=1e-9)


@dataclass
class ScenarioConfig:
    lead_decel: float = _f(-5.5, "m/s^2", hi=-0.5)
    lead_hold_time: float = _f(0.8, "s", lo=0.0)
    front_to_rear_horizon: float = _f(10.0, "s", lo=1.0)
    incursion_speed: float = _f(13.4, "m/s", lo=1.0)
    incursion_ttc: float = _f(4.5, "s", lo=0.5)
    incursion_onset: float = _f(1.0, "s", lo=0.0)
    incursion_horizon: float = _f(8.0, "s", lo=1.0)
    shoulder_width: float = _f(2.5, "m", lo=0.0)
    intersection_v_min: float = _f(13.9, "m/s", lo=1.0)
    intersection_v_max: float = _f(16.7, "m/s", lo=1.0)
    intersection_horizon: float = _f(8.0, "s", lo=1.0)
    rs_trigger_tta: float = _f(4.0, "s", lo=0.1)
    rs_start_tta: float = _f(5.0, "s", lo=0.1)
    rns_cross_tta: float = _f(1.5, "s", lo=0.1)
    rns_start_tta: float = _f(3.5, "s", lo=0.1)
    rns_speed: float = _f(7.5, "m/s", lo=0.5)
    rs_accel: float = _f(2.5, "m/s^2", lo=0.1)
    turn_radius: float = _f(6.0, "m", lo=2.0)
    benign_horizon: float = _f(8.0, "s", lo=1.0)
    lane_width: float = _f(3.65, "m", lo=1.0)


@dataclass
class AblationConfig:
    no_accumulation: bool = _f(False)
    no_prediction_noise: bool = _f(False)
    no_pedal_constraint: bool = _f(False)
    no_looming: bool = _f(False)
    no_looming_threshold: bool = _f(False)
    no_norm_filter: bool = _f(False)
    no_epistemic: bool = _f(False)


@dataclass
class MetricsConfig:
    rt_support_lo: float = _f(0.9, "s")
    rt_support_hi: float = _f(3.6, "s")
    decel_support_lo: float = _f(0.0, "1/s")
    decel_support_hi: float = _f(1.0, "1/s")
    # reference regression lines (slope, intercept); response time meta-analysis
    # and deceleration-vs-inverse-TTC data are configuration inputs
    rt_ref_slope: float = _f(0.57, "s/s")
    rt_ref_intercept: float = _f(0.65, "s")
    decel_ref_slope: float = _f(5.0, "m/s")
    decel_ref_intercept: float = _f(1.5, "m/s^2")
    bootstrap_n: int = _f(10000, "resamples", lo=1)
    brake_accel_threshold: float = _f(-1.0, "m/s^2")
    steer_angle_threshold: float = _f(0.0077, "rad", lo=0.0)
    min_fit_slope: float = _f(0.3, "m/s^2", lo=0.0)


@dataclass
class RunConfig:
    base_seed: int = _f(0, "", lo=0)
    jobs: int = _f(0, "", lo=0)  # 0 = all available cores
    out_dir: str = _f("out")


@dataclass
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    transition: TransitionConfig = field(default_factory=TransitionConfig)
    norms: NormConfig = field(default_factory=NormConfig)
    preference: PreferenceConfig = field(default_factory=PreferenceConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def replace(self, **dotted) -> "Config":
        """Return a copy with ``section.key=value`` overrides applied."""
        cfg = _copy_config(self)
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            sub = getattr(cfg, section)
            if not hasattr(sub, name):
                raise ConfigError(f"unknown key {key!r}")
            setattr(sub, name, value)
        return cfg

    def items(self):
        """Yield (dotted_key, value, unit) for every parameter, in order."""
        for sec in fields(self):
            sub = getattr(self, sec.name)
            for fld in fields(sub):
                unit = fld.metadata.get("unit", "")
                yield f"{sec.name}.{fld.name}", getattr(sub, fld.name), unit

    def canonical_text(self) -> str:
        lines = []
        for key, value, unit in self.items():
            if isinstance(value, bool):
                rep = "true" if value else "false"
            elif isinstance(value, float):
                rep = repr(value)
            else:
                rep = str(value)
            lines.append(f"{key} = {rep}" + (f" {unit}" if unit else ""))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _copy_config(cfg: Config) -> Config:
    out = Config()
    for sec in fields(cfg):
        setattr(out, sec.name, dataclasses.replace(getattr(cfg, sec.name)))
    return out


def default_config() -> Config:
    return Config()


def _parse_value(fld, raw: str, key: str, lineno: int):
    unit = fld.metadata.get("unit", "")
    parts = raw.split()
    if not parts:
        raise ConfigError(f"line {lineno}: empty value for {key!r}")
    if fld.type in ("bool", bool):
        if parts[0].lower() not in ("true", "false"):
            raise ConfigError(f"line {lineno}: {key!r} expects true/false, got {raw!r}")
        value = parts[0].lower() == "true"
        rest = parts[1:]
    elif fld.type in ("int", int):
        try:
            value = int(parts[0])
        except ValueError:
            raise ConfigError(f"line {lineno}: {key!r} expects an integer, got {raw!r}") from None
        rest = parts[1:]
    elif fld.type in ("float", float):
        try:
            value = float(parts[0])
        except ValueError:
            raise ConfigError(f"line {lineno}: {key!r} expects a number, got {raw!r}") from None
        rest = parts[1:]
    else:  # string field; consumes the rest verbatim
        return raw
    if rest:
        got = " ".join(rest)
        if not unit:
            raise ConfigError(f"line {lineno}: {key!r} takes no unit, got {got!r}")
        if got != unit:
            raise ConfigError(f"line {lineno}: {key!r} expects unit {unit!r}, got {got!r}")
    if not isinstance(value, bool):
        lo, hi = fld.metadata.get("lo"), fld.metadata.get("hi")
        if lo is not None and value < lo:
            raise ConfigError(f"line {lineno}: {key!r} below minimum {lo}: {value}")
        if hi is not None and value > hi:
            raise ConfigError(f"line {lineno}: {key!r} above maximum {hi}: {value}")
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"line {lineno}: {key!r} must be finite")
    return value


def parse_config(text: str) -> Config:
    """Parse configuration text; missing keys keep their defaults."""
    cfg = default_config()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        lhs, rhs = stripped.split("=", 1)
        key = lhs.strip()
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        sub = sections[section]
        fld = next((f for f in fields(sub) if f.name == name), None)
        if fld is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(sub, name, _parse_value(fld, rhs.strip(), key, lineno))
    return cfg


def load_config(path: str | None = None) -> Config:
    """Load configuration from ``path``, the AVOIDSIM_CONFIG env var, or defaults."""
    if path is None:
        path = os.environ.get("AVOIDSIM_CONFIG")
    if path is None:
        return default_config()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
