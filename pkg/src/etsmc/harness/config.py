"""Scenario configuration: nested dataclasses, YAML loading, presets, hashing.

Every section has defaults, so a config file only needs the keys it changes.
``build(cfg)`` turns the plain description into the component objects used by
the simulator and runs the cross-component checks.
"""
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import List, Optional, Union

import numpy as np
import yaml

from .. import modes as md
from .. import plant as pl
from .. import topology as tp
from ..errors import AssumptionViolated, ConfigError, DimensionMismatch
from ..smc import ControllerGains, bpd_residual
from ..trigger import TriggerConfig

VARIANTS = ("continuous", "sampled", "event-triggered")

DEFAULT_POSITIONS = [[-6.0, 13.0], [-14.0, 7.0], [-13.0, -13.0], [8.0, -11.0], [5.0, 4.0]]


@dataclass
class ModeSpec:
    n_modes: int = 3
    sojourn: str = "exponential"
    rate: float = 1.0
    scale: float = 1.0
    shape: float = 2.0
    embedded_chain: Optional[List[List[float]]] = None
    initial_mode: int = 0


@dataclass
class PlantSpec:
    axes: int = 2
    diffusion: float = 0.05
    uncertainty_gain: float = 0.2
    # one scalar Brownian motion drives every agent, so the error noise is D y dw
    shared_noise: bool = True
    # optional explicit matrices per mode: dicts with keys a, b, d, e, m, n
    matrices: Optional[List[dict]] = None


@dataclass
class ControllerSpec:
    variant: str = "event-triggered"
    # per-axis feedback u = -(kp * position + kv * velocity) on (H y); one pair or one per mode
    gains: List = field(default_factory=lambda: [2.0, 5.0])
    p_hat_scale: float = 1.0
    alpha: float = 0.3
    theta: float = 3.0
    rho: float = 1.0
    boundary_layer: Optional[float] = 0.2


@dataclass
class TriggerSpec:
    sample_period: float = 0.01
    sigma: float = 0.1
    # diagonal of the per-agent weight, repeated over axes: [position, velocity]
    phi_weights: List[float] = field(default_factory=lambda: [1.0, 1.0])
    delay_bound: Optional[float] = None     # None -> sample_period / 2
    v_margin_scale: float = 3.0
    per_agent: bool = False


@dataclass
class FaultSpec:
    enabled: bool = True
    onset: float = 3.0
    period: float = 1.0
    low: float = 0.5
    high: float = 1.0
    bias_amplitude: float = 0.05


@dataclass
class UncertaintySpec:
    kind: str = "sinusoidal"
    amplitude: float = 0.5


@dataclass
class NonlinearitySpec:
    kind: str = "bounded-lipschitz"
    kappa: float = 1.0


@dataclass
class LeaderSpec:
    amplitude: float = 2.0
    frequency: float = 10.0
    position: List[float] = field(default_factory=lambda: [0.0, 0.0])


@dataclass
class FormationCfg:
    radius: float = 10.0
    offsets: Optional[List[List[float]]] = None
    positions: List[List[float]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_POSITIONS))


@dataclass
class ScenarioConfig:
    name: str = "custom"
    horizon: float = 10.0
    dt: float = 1e-3
    seed: int = 0
    record_every: int = 10
    theta_band: float = 1.0
    modes: ModeSpec = field(default_factory=ModeSpec)
    topologies: List[Union[str, dict]] = field(default_factory=lambda: ["ring", "two-hub", "chain"])
    plant: PlantSpec = field(default_factory=PlantSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    fault: FaultSpec = field(default_factory=FaultSpec)
    uncertainty: UncertaintySpec = field(default_factory=UncertaintySpec)
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    leader: LeaderSpec = field(default_factory=LeaderSpec)
    formation: FormationCfg = field(default_factory=FormationCfg)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        """Copy with dotted-key overrides, e.g. ``replace(**{"trigger.sigma": 0})``."""
        d = self.to_dict()
        for key, val in changes.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = val
        return from_dict(d)


def _fill(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, val in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default) and not isinstance(default, type):
            kwargs[name] = _fill(type(default), val, f"{path}.{name}".strip("."))
        else:
            kwargs[name] = val
    return cls(**kwargs)


def from_dict(d) -> ScenarioConfig:
    return _fill(ScenarioConfig, d, "")


def load(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data or {})


def dump(cfg: ScenarioConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def _paper_sec4():
    return ScenarioConfig(name="paper-sec4")


def _no_fault():
    cfg = ScenarioConfig(name="no-fault")
    cfg.fault.enabled = False
    return cfg


def _continuous():
    cfg = ScenarioConfig(name="continuous-smc")
    cfg.controller.variant = "continuous"
    return cfg


PRESETS = {"paper-sec4": _paper_sec4, "no-fault": _no_fault, "continuous-smc": _continuous}


def preset_names():
    return list(PRESETS)


def preset(name) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}") from None


def resolve(ref) -> ScenarioConfig:
    """Preset name or path to a YAML file."""
    if isinstance(ref, ScenarioConfig):
        return ref
    if ref in PRESETS:
        return preset(ref)
    return load(ref)


def formation_offsets(radius, n, n_axes=2):
    """h_i = R [cos(2 pi i / n), sin(2 pi i / n)], i = 1..n, with zero velocity parts.

    Returned in the interleaved state layout (p_x, v_x, p_y, v_y).
    """
    if not radius > 0 or n < 1:
        raise ConfigError("need radius > 0 and n >= 1")
    ang = 2 * np.pi * np.arange(1, n + 1) / n
    pos = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    return positions_to_state(pos[:, :n_axes])


def positions_to_state(pos, vel=None):
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    vel = np.zeros_like(pos) if vel is None else np.atleast_2d(np.asarray(vel, dtype=float))
    out = np.empty((pos.shape[0], 2 * pos.shape[1]))
    out[:, 0::2] = pos
    out[:, 1::2] = vel
    return out


@dataclass
class Built:
    """Component objects derived from a ScenarioConfig."""

    cfg: ScenarioConfig
    process: md.ModeProcess
    topologies: list
    couplings: list
    mode_mats: list
    gains: ControllerGains
    trigger: TriggerConfig
    formation: pl.FormationSpec
    leader0: np.ndarray
    followers0: np.ndarray
    uncertainty: pl.UncertaintyLaw
    steps_per_sample: int
    n_steps: int


def _mode_matrices(ps: PlantSpec, n_modes):
    if ps.matrices is None:
        mm = pl.double_integrator(ps.axes, ps.diffusion, ps.uncertainty_gain)
        return [mm] * n_modes
    if len(ps.matrices) not in (1, n_modes):
        raise DimensionMismatch("plant.matrices needs one entry or one per mode")
    out = []
    for m in ps.matrices:
        try:
            out.append(pl.ModeMatrices(m["a"], m["b"], m["d"], m["e"], m["m"], m["n"]))
        except KeyError as exc:
            raise ConfigError(f"plant.matrices entry missing {exc}") from None
    return out * n_modes if len(out) == 1 else out


def _gain_matrix(pair, n_axes, n_x, n_u):
    arr = np.asarray(pair, dtype=float)
    if arr.ndim == 2:
        if arr.shape != (n_u, n_x):
            raise DimensionMismatch(f"gain matrix must be {n_u}x{n_x}")
        return arr
    if arr.shape != (2,) or n_x != 2 * n_axes:
        raise DimensionMismatch("gains must be [kp, kv] for the double integrator")
    return -np.kron(np.eye(n_axes), arr[None, :])


def build(cfg: ScenarioConfig) -> Built:
    if not cfg.horizon >= 0:
        raise ConfigError("horizon must be >= 0")
    if not cfg.dt > 0:
        raise ConfigError("dt must be > 0")
    if cfg.controller.variant not in VARIANTS:
        raise ConfigError(f"controller.variant must be one of {VARIANTS}")
    if cfg.record_every < 1:
        raise ConfigError("record_every must be >= 1")
    ms = cfg.modes
    law = md.SojournLaw(ms.sojourn, ms.rate, ms.scale, ms.shape)
    if ms.embedded_chain is None:
        process = md.uniform_process(ms.n_modes, law)
    else:
        process = md.ModeProcess(np.asarray(ms.embedded_chain, dtype=float), (law,) * ms.n_modes)
    if process.n_modes != ms.n_modes:
        raise DimensionMismatch("embedded chain size differs from n_modes")
    process.check_mode(ms.initial_mode)

    if len(cfg.topologies) not in (1, ms.n_modes):
        raise DimensionMismatch("give one topology or one per mode")
    topos = []
    for t in cfg.topologies:
        if isinstance(t, str):
            topos.append(tp.preset(t) if t in tp.preset_names() else _bad_topology(t))
        else:
            topos.append(tp.build_topology(t["adjacency"], t["leader_gains"]))
    if len(topos) == 1:
        topos = topos * ms.n_modes
    for i, t in enumerate(topos):
        if not tp.leader_reachable(t):
            raise AssumptionViolated(f"leader does not reach every follower in mode {i}")
    n = topos[0].n_followers
    if any(t.n_followers != n for t in topos):
        raise DimensionMismatch("topologies disagree on the number of followers")
    couplings = [tp.coupling(t) for t in topos]

    mms = _mode_matrices(cfg.plant, ms.n_modes)
    n_x, n_u = mms[0].n_x, mms[0].n_u
    for mm in mms:
        mm.e_inverse()
    cs = cfg.controller
    g_arr = np.asarray(cs.gains, dtype=float)
    if g_arr.ndim == 1 or (g_arr.ndim == 2 and g_arr.shape == (n_u, n_x)):
        k_mats = [_gain_matrix(g_arr, cfg.plant.axes, n_x, n_u)] * ms.n_modes
    elif g_arr.shape[0] == ms.n_modes:
        k_mats = [_gain_matrix(g, cfg.plant.axes, n_x, n_u) for g in g_arr]
    else:
        raise DimensionMismatch("controller.gains: one [kp, kv] pair or one per mode")
    p_hat = [cs.p_hat_scale * np.eye(n_x)] * ms.n_modes
    gains = ControllerGains(k_mats, p_hat, [cs.alpha] * ms.n_modes, [cs.theta] * ms.n_modes,
                            cs.rho, cfg.nonlinearity.kappa, cs.boundary_layer)
    for i, mm in enumerate(mms):
        if bpd_residual(gains, mm, i) > 1e-9:
            raise AssumptionViolated(f"B^T P D != 0 in mode {i}; the surface is not noise free")

    ts = cfg.trigger
    ratio = ts.sample_period / cfg.dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-12 * max(ratio, 1.0) * 1e3:
        raise ConfigError("dt must divide the sample period")
    w = np.asarray(ts.phi_weights, dtype=float)
    if w.shape == (2,) and n_x == 2 * cfg.plant.axes:
        phi = np.diag(np.tile(w, cfg.plant.axes))
    elif w.shape == (n_x,):
        phi = np.diag(w)
    else:
        raise DimensionMismatch("trigger.phi_weights must have 2 or n_x entries")
    delay = ts.sample_period / 2 if ts.delay_bound is None else ts.delay_bound
    if delay > ts.sample_period - cfg.dt + 1e-15:
        # a packet must land on an integration step strictly before the next sample
        raise ConfigError("trigger.delay_bound must not exceed sample_period - dt")
    tc = TriggerConfig(ts.sample_period, (ts.sigma,) * ms.n_modes, (phi,) * ms.n_modes,
                       delay, ts.v_margin_scale, ts.per_agent)

    fc = cfg.formation
    if fc.offsets is None:
        offsets = formation_offsets(fc.radius, n, cfg.plant.axes)
    else:
        offsets = positions_to_state(fc.offsets)
    followers0 = positions_to_state(fc.positions)
    leader0 = positions_to_state([cfg.leader.position])[0]
    if offsets.shape != (n, n_x) or followers0.shape != (n, n_x) or leader0.shape != (n_x,):
        raise DimensionMismatch("formation offsets / initial positions do not match the plant")
    if cfg.nonlinearity.kind not in pl.NONLINEARITIES:
        raise ConfigError(f"unknown nonlinearity {cfg.nonlinearity.kind!r}")
    unc = pl.UncertaintyLaw(cfg.uncertainty.kind, cfg.uncertainty.amplitude)
    fs = cfg.fault
    if fs.enabled and not 0 < fs.low <= fs.high <= 1:
        raise ConfigError("fault efficiency bounds must satisfy 0 < low <= high <= 1")
    n_steps = int(round(cfg.horizon / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.horizon) > 1e-9 * max(cfg.horizon, 1.0):
        raise ConfigError("dt must divide the horizon")
    return Built(cfg, process, topos, couplings, mms, gains, tc, pl.FormationSpec(offsets),
                 leader0, followers0, unc, steps, n_steps)


def _bad_topology(name):
    raise ConfigError(f"unknown topology preset {name!r}; choose from {tp.preset_names()}")
