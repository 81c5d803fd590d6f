"""Closed-loop simulation of leader, followers, switching topology and trigger.

Per integration step the order is fixed: mode, sample/trigger, delivery,
control, fault, plant, surface, record.  Four independent random streams are
spawned from the seed (modes, diffusion, network delay, faults, uncertainty)
so changing the trigger does not perturb the noise.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .. import modes as md
from .. import plant as pl
from ..errors import NonFiniteState
from ..smc import mode_terms, smc_law
from ..trigger import (Packet, deliver, event_smc_law, initial_trigger_state, process_sample,
                       v_gain)
from .config import Built, ScenarioConfig, build, config_hash

# beyond ~1e154 the trigger's quadratic forms overflow and the law stops
# updating, so anything this large already counts as divergence
DIVERGENCE_CAP = 1e100


def _diverged(*arrs):
    return any(not (np.abs(a) < DIVERGENCE_CAP).all() for a in arrs)


@dataclass
class Trace:
    times: np.ndarray
    leader: np.ndarray          # (R, n_x)
    followers: np.ndarray       # (R, N, n_x)
    y: np.ndarray               # (R, N, n_x)
    u: np.ndarray               # commanded, (R, N, n_u)
    u_applied: np.ndarray       # after the actuator fault
    s: np.ndarray               # (R, N, n_u)
    mode: np.ndarray            # (R,)
    eta: np.ndarray             # (R, N)
    held_arrival: np.ndarray    # arrival time of the payload the control used, (R, N)
    sample_times: np.ndarray
    sample_y: np.ndarray        # (K, N, n_x)
    sample_mode: np.ndarray
    released: np.ndarray        # (K, N)
    events: List[Packet]
    modes: md.ModeTrajectory
    seed: int
    config_hash: str
    variant: str
    sample_period: float
    horizon: float
    dt: float
    extras: dict = field(default_factory=dict)

    @property
    def n_agents(self):
        return self.followers.shape[1]


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def run(cfg: ScenarioConfig, seed=None, built: Built = None) -> Trace:
    """Simulate ``cfg`` (seed defaults to ``cfg.seed``)."""
    if seed is not None and seed != cfg.seed:
        cfg = cfg.replace(seed=int(seed))
    b = build(cfg) if built is None else built
    r_mode, r_noise, r_delay, r_fault, r_unc = _streams(cfg.seed)

    dt, n_steps, sps = cfg.dt, b.n_steps, b.steps_per_sample
    n = b.followers0.shape[0]
    mm0 = b.mode_mats[0]
    n_x, n_u = mm0.n_x, mm0.n_u
    variant = cfg.controller.variant
    g, tc = b.gains, b.trigger
    times_all = np.arange(n_steps + 1) * dt

    if cfg.horizon > 0:
        mtraj = md.sample_trajectory(b.process, cfg.horizon, cfg.modes.initial_mode, r_mode)
    else:
        mtraj = md.ModeTrajectory(np.zeros(1), np.array([cfg.modes.initial_mode]), 0.0)
    epoch = mtraj.epoch_index(times_all)
    mode_grid = mtraj.modes[epoch]
    elapsed_grid = times_all - mtraj.switch_times[epoch]

    n_noise = 1 if cfg.plant.shared_noise else n + 1
    dw = r_noise.standard_normal((n_steps, n_noise)) * np.sqrt(dt)
    if cfg.plant.shared_noise:
        dw = np.repeat(dw, n + 1, axis=1)
    f_grid = b.uncertainty.series(times_all, mm0.m_mat.shape[1], r_unc)

    fs = cfg.fault
    if fs.enabled and fs.onset <= cfg.horizon:
        fault = pl.random_fault_profile(n, fs.onset, cfg.horizon, r_fault, fs.low, fs.high,
                                        fs.period, fs.bias_amplitude)
    else:
        fault = pl.no_fault()
    eta_grid = np.ones((n_steps + 1, n))
    bias_grid = np.zeros((n_steps + 1, n_u))
    if fault.active:
        on = times_all >= fault.onset
        k = np.searchsorted(fault.breakpoints, times_all[on], side="right") - 1
        eta_grid[on] = np.where((k >= 0)[:, None], fault.efficiency[np.maximum(k, 0)], 1.0)
        ph = np.where(np.arange(n_u) % 2 == 0, 0.0, np.pi / 2)
        bias_grid[on] = fault.bias_amplitude * np.sin(times_all[on, None] + ph)
    lead_u = cfg.leader.amplitude * np.sin(cfg.leader.frequency * times_all)

    terms = [mode_terms(g, mm, i) for i, mm in enumerate(b.mode_mats)]
    w_invs = [t.w_inv for t in terms]
    h_mats = [c.h_matrix for c in b.couplings]
    exp_laws = all(l.kind == "exponential" for l in b.process.sojourn_laws)
    const_rows = [md.hazard_row(b.process, i, 0.0) for i in range(b.process.n_modes)]
    b_pinv = [np.linalg.pinv(mm.b_mat) for mm in b.mode_mats]
    e_inv = [mm.e_inverse() for mm in b.mode_mats]
    e_is_eye = [np.array_equal(ei, np.eye(n_x)) for ei in e_inv]
    nl_kind, kappa = cfg.nonlinearity.kind, cfg.nonlinearity.kappa
    offsets = b.formation.offsets

    def hrow(mode, m):
        return const_rows[mode] if exp_laws else md.hazard_row(b.process, mode, elapsed_grid[m])

    x = np.vstack([b.leader0[None, :], b.followers0])
    y = x[1:] - x[0] - offsets
    s_acc = np.zeros((n, n_u))
    s = y @ terms[mode_grid[0]].btpe.T

    rec_idx = list(range(0, n_steps + 1, cfg.record_every))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    n_rec = len(rec_idx)
    rec_set = np.zeros(n_steps + 1, dtype=bool)
    rec_set[rec_idx] = True
    R = dict(leader=np.empty((n_rec, n_x)), followers=np.empty((n_rec, n, n_x)),
             y=np.empty((n_rec, n, n_x)), u=np.empty((n_rec, n, n_u)),
             ua=np.empty((n_rec, n, n_u)), s=np.empty((n_rec, n, n_u)),
             held=np.empty((n_rec, n)))
    n_samp = n_steps // sps + 1
    samp_y = np.empty((n_samp, n, n_x))
    samp_s = np.empty((n_samp, n, n_u))
    samp_mode = np.empty(n_samp, dtype=int)
    released = np.zeros((n_samp, n), dtype=bool)

    ts = initial_trigger_state(y, s) if variant == "event-triggered" else None
    held_y, held_s = y.copy(), s.copy()
    held_arr = np.zeros(n)
    events = list(ts.log) if ts is not None else []
    u_cmd = None
    last_mode = -1
    r = 0
    last_good = 0.0
    for m in range(n_steps + 1):
        t = m * dt
        # (1) mode
        mode = mode_grid[m]
        mm, tm, hmat = b.mode_mats[mode], terms[mode], h_mats[mode]
        stale = mode != last_mode or not exp_laws
        last_mode = mode
        # (2) sampling / trigger
        if m % sps == 0:
            k = m // sps
            samp_y[k] = y
            samp_s[k] = s
            samp_mode[k] = mode
            if variant == "event-triggered":
                if k == 0:
                    released[0] = True
                else:
                    released[k] = process_sample(t, y, s, ts, tc, mode, r_delay)
            else:
                released[k] = True
                if variant == "sampled":
                    held_y, held_s = y.copy(), s.copy()
                    held_arr[:] = t
                    stale = True
        # (3) delivery
        if variant == "event-triggered":
            arrivals = ts.pending_arrival.copy()
            due = deliver(ts, t)
            if due.any():
                held_arr[due] = arrivals[due]
                stale = True
            if m == 0:
                stale = True
        # (4) control
        if variant == "continuous":
            u_cmd = smc_law(y, s, g, mode, tm, hmat, mm, hrow(mode, m))
            held_arr[:] = t
        elif stale:
            if variant == "sampled":
                u_cmd = smc_law(held_y, held_s, g, mode, tm, hmat, mm, hrow(mode, m))
            else:
                v = v_gain(ts.held_y, tc, mode, tm, hmat, g.theta_reach[mode])
                u_cmd = event_smc_law(ts.held_y, ts.held_s, v, g, mode, tm, hmat,
                                      hrow(mode, m), w_invs)
        # (5) actuator fault
        u_f = eta_grid[m][:, None] * u_cmd + bias_grid[m]
        if rec_set[m]:
            if _diverged(x, u_f):
                raise NonFiniteState(f"state diverged before t={t:.6g}", last_good_time=last_good)
            last_good = t
            R["leader"][r] = x[0]
            R["followers"][r] = x[1:]
            R["y"][r] = y
            R["u"][r] = u_cmd
            R["ua"][r] = u_f
            R["s"][r] = s
            R["held"][r] = held_arr
            r += 1
        if m == n_steps:
            break
        # (6) plant, Euler-Maruyama on the stacked state
        a_eff = mm.a_mat + mm.m_mat @ (f_grid[m][:, None] * mm.n_mat)
        forcing = np.empty((n + 1, n_u))
        forcing[0] = lead_u[m]
        forcing[1:] = u_f
        if nl_kind != "zero":
            forcing += pl.nonlinearity(nl_kind, t, x @ b_pinv[mode].T, kappa)
        incr = (x @ a_eff.T + forcing @ mm.b_mat.T) * dt + (x @ mm.d_mat.T) * dw[m][:, None]
        if not e_is_eye[mode]:
            incr = incr @ e_inv[mode].T
        x = x + incr
        y_next = x[1:] - x[0] - offsets
        # (7) surface: left rectangle on the integrand at y(t_m)
        s_acc += dt * (y @ tm.btpa.T + ((hmat @ y) @ tm.k_tilde.T) @ tm.w.T)
        y = y_next
        s = y @ tm.btpe.T - s_acc
    if _diverged(x):
        raise NonFiniteState("state diverged at the horizon", last_good_time=last_good)

    if ts is not None:
        events = ts.log
    elif variant == "sampled":
        st = np.arange(n_samp) * sps * dt
        events = [Packet(i, float(tk), float(tk), samp_y[k, i].copy(), samp_s[k, i].copy())
                  for k, tk in enumerate(st) for i in range(n)]
    return Trace(times_all[rec_idx], R["leader"], R["followers"], R["y"], R["u"], R["ua"],
                 R["s"], mode_grid[rec_idx], eta_grid[rec_idx], R["held"],
                 np.arange(n_samp) * sps * dt, samp_y, samp_mode, released, events, mtraj,
                 int(cfg.seed), config_hash(cfg), variant, tc.sample_period, cfg.horizon, dt,
                 {"fault": fault})
