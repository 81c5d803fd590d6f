"""Sample-based event generator, network delay, ZOH and the event-triggered law.

The trigger state keeps per-agent arrays so a single implementation serves
both the centralized trigger (one decision on the stacked vector, every agent
released together) and the per-agent trigger (each block tested alone).
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, PendingCollision
from .smc import ControllerGains, ModeTerms, hazard_gain, sgn


@dataclass(frozen=True)
class TriggerConfig:
    sample_period: float = 0.01
    sigma: Sequence[float] = (0.1,)
    phi: Sequence[np.ndarray] = (None,)
    delay_bound: float = 0.005
    v_margin_scale: float = 1.2
    per_agent: bool = False

    def __post_init__(self):
        if not self.sample_period > 0:
            raise ConfigError("sample period must be > 0")
        if len(self.sigma) != len(self.phi):
            raise ConfigError("sigma and phi must be given for every mode")
        for s in self.sigma:
            if not 0 <= s < 1:
                raise ConfigError("sigma must lie in [0, 1)")
        for p in self.phi:
            p = np.asarray(p, dtype=float)
            if not np.allclose(p, p.T, atol=1e-12) or np.linalg.eigvalsh(p).min() <= 0:
                raise ConfigError("phi must be symmetric positive definite")
        if not 0 <= self.delay_bound < self.sample_period:
            raise ConfigError("delay bound must satisfy 0 <= delay < sample period")
        if self.v_margin_scale < 1:
            raise ConfigError("v margin scale must be >= 1")


def quad(y, phi):
    """Per-agent y_i^T phi y_i."""
    return np.einsum("ai,ij,aj->a", y, phi, y)


def should_release(y_now, y_last, sigma, phi) -> bool:
    """True when [y_now - y_last]^T phi [.] > sigma y_now^T phi y_now (strict)."""
    y_now = np.asarray(y_now, dtype=float).reshape(-1)
    e = y_now - np.asarray(y_last, dtype=float).reshape(-1)
    return bool(e @ phi @ e > sigma * (y_now @ phi @ y_now))


def release_mask(y_now, y_last, sigma, phi, per_agent):
    """Which agents release at this sample; ``phi`` is the per-agent block."""
    e = y_now - y_last
    lhs = quad(e, phi)
    rhs = sigma * quad(y_now, phi)
    if per_agent:
        return lhs > rhs
    return np.full(y_now.shape[0], lhs.sum() > rhs.sum())


@dataclass
class Packet:
    agent: int
    release_time: float
    arrival_time: float
    y: np.ndarray
    s: np.ndarray


@dataclass
class TriggerState:
    last_released_y: np.ndarray
    last_released_s: np.ndarray
    last_release_time: np.ndarray
    held_y: np.ndarray
    held_s: np.ndarray
    pending_arrival: np.ndarray
    pending_y: np.ndarray
    pending_s: np.ndarray
    samples_seen: int = 0
    releases: np.ndarray = None
    log: List[Packet] = field(default_factory=list)

    @property
    def has_pending(self):
        return np.isfinite(self.pending_arrival)


def initial_trigger_state(y0, s0) -> TriggerState:
    """The t = 0 sample counts as released and arrives at once."""
    n = y0.shape[0]
    st = TriggerState(y0.copy(), s0.copy(), np.zeros(n), y0.copy(), s0.copy(),
                      np.full(n, np.inf), y0.copy(), s0.copy(), 1, np.ones(n, dtype=int))
    st.log = [Packet(i, 0.0, 0.0, y0[i].copy(), s0[i].copy()) for i in range(n)]
    return st


def process_sample(t, y_now, s_now, ts: TriggerState, tc: TriggerConfig, mode, rng):
    """Run the event generator on an on-grid sample; returns the release mask.

    Released packets get a delay drawn from Uniform[0, delay_bound] (one draw
    per release event when centralized, per agent otherwise) and are held in
    ``pending`` until ``deliver`` sees their arrival time.
    """
    phi = np.asarray(tc.phi[mode], dtype=float)
    mask = release_mask(y_now, ts.last_released_y, tc.sigma[mode], phi, tc.per_agent)
    ts.samples_seen += 1
    if not mask.any():
        return mask
    if (ts.has_pending & mask).any():
        raise PendingCollision(f"release at t={t} while a packet is still in flight")
    idx = np.flatnonzero(mask)
    if tc.delay_bound > 0:
        if tc.per_agent:
            delays = rng.uniform(0.0, tc.delay_bound, size=idx.size)
        else:
            delays = np.full(idx.size, rng.uniform(0.0, tc.delay_bound))
    else:
        delays = np.zeros(idx.size)
    ts.pending_arrival[idx] = t + delays
    ts.pending_y[idx] = y_now[idx]
    ts.pending_s[idx] = s_now[idx]
    ts.last_released_y[idx] = y_now[idx]
    ts.last_released_s[idx] = s_now[idx]
    ts.last_release_time[idx] = t
    ts.releases[idx] += 1
    for k, i in enumerate(idx):
        ts.log.append(Packet(int(i), t, t + delays[k], y_now[i].copy(), s_now[i].copy()))
    return mask


def deliver(ts: TriggerState, t, eps=1e-12):
    """Move every pending packet with arrival <= t into the hold."""
    due = ts.pending_arrival <= t + eps
    if due.any():
        ts.held_y[due] = ts.pending_y[due]
        ts.held_s[due] = ts.pending_s[due]
        ts.pending_arrival[due] = np.inf
    return due


def held_values(t, log: Sequence[Packet], n_agents, eps=1e-12):
    """Latest arrived payload per agent at time t, by scanning the packet log."""
    y = [None] * n_agents
    s = [None] * n_agents
    best = np.full(n_agents, -np.inf)
    for p in log:
        if p.arrival_time <= t + eps and p.arrival_time >= best[p.agent]:
            best[p.agent] = p.arrival_time
            y[p.agent] = p.y
            s[p.agent] = p.s
    if any(v is None for v in y):
        raise ValueError("no packet has arrived yet for some agent")
    return np.array(y), np.array(s)


def error_bound(y_held, sigma, phi):
    """Worst admissible ||e|| under the trigger rule: sqrt(sigma y^T phi y / lambda_min)."""
    lam = float(np.linalg.eigvalsh(phi).min())
    return float(np.sqrt(sigma * quad(y_held, phi).sum() / lam))


def v_gain(y_held, tc: TriggerConfig, mode, terms: ModeTerms, h_matrix, offset=0.0):
    """v = margin * ||H|| * ||B^T P B K|| * e_bound + offset.

    ||H|| ||W K|| = ||(I kron W)(H kron K)||, so the first term is the smallest
    v covering the worst sampling error; ``offset`` (the constant reaching
    gain) keeps the reaching term alive once y is small.
    """
    phi = np.asarray(tc.phi[mode], dtype=float)
    e = error_bound(y_held, tc.sigma[mode], phi)
    if e == 0:
        return float(offset)
    wk = terms.w @ terms.k_tilde
    return tc.v_margin_scale * float(np.linalg.norm(h_matrix, 2) * np.linalg.norm(wk, 2)) * e + offset


def event_smc_law(y_held, s_held, v, g: ControllerGains, mode, terms: ModeTerms, h_matrix,
                  hazard_row, w_invs):
    """Law evaluated on held values only.

    u = K H y_k - (c_M ||N|| ||y_k,i|| + 1/2 ||sum pi_ij W_j^-1|| ||s_k,i|| + alpha ||y_k,i|| + v) sgn(s_k,i)
    """
    yn = np.linalg.norm(y_held, axis=1)
    gain = (terms.c_m * terms.n_norm * yn
            + hazard_gain(hazard_row, mode, w_invs) * np.linalg.norm(s_held, axis=1)
            + g.alpha[mode] * yn + v)
    k = np.asarray(g.k_mats[mode], dtype=float)
    return (h_matrix @ y_held) @ k.T - gain[:, None] * sgn(s_held, g.boundary_layer)


def remark2_monitor(sample_times, sample_y, released, sigma, phi, per_agent=False):
    """Audit e^T phi e <= sigma y^T phi y on every sample that did not release.

    ``sample_y`` is (K, N, n_x), ``released`` (K, N) boolean, ``sigma``/``phi``
    per sample (sequences of length K) or scalars / a single matrix.
    """
    sample_y = np.asarray(sample_y, dtype=float)
    released = np.asarray(released, dtype=bool)
    k_total = sample_y.shape[0]
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (k_total,))
    phis = np.asarray(phi, dtype=float)
    if phis.ndim == 2:
        phis = np.broadcast_to(phis, (k_total,) + phis.shape)
    last = sample_y[0].copy()
    worst = 0.0
    n_viol = 0
    checked = 0
    for k in range(1, k_total):
        lhs = quad(sample_y[k] - last, phis[k])
        rhs = sig[k] * quad(sample_y[k], phis[k])
        quiet = ~released[k]
        if per_agent:
            gap = (lhs - rhs)[quiet]
        else:
            gap = np.array([lhs.sum() - rhs.sum()]) if quiet.all() else np.zeros(0)
        if gap.size:
            checked += gap.size
            worst = max(worst, float(gap.max()))
            n_viol += int((gap > 0).sum())
        last[released[k]] = sample_y[k][released[k]]
    return {"violations": n_viol, "max_violation": max(worst, 0.0), "checked": checked}
