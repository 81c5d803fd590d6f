"""Distributed integral sliding surface and the sliding-mode fault-tolerant law.

Arrays are per follower: tracking errors ``y`` are (N, n_x), surfaces and
controls (N, n_u).  The stacked coupling (H kron K) y is evaluated as
``(H @ y) @ K.T``.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .errors import ConfigError, NonsingularityLoss
from .plant import ModeMatrices

COND_CAP = 1e8


def sgn(s, delta: Optional[float] = None):
    """Componentwise sign with sgn(0) = 0, or the boundary layer s / (|s| + delta)."""
    if delta is None or delta == 0:
        return np.sign(s)
    return s / (np.abs(s) + delta)


@dataclass(frozen=True)
class ControllerGains:
    k_mats: Sequence[np.ndarray]
    p_hat: Sequence[np.ndarray]
    alpha: Sequence[float]
    theta_reach: Sequence[float]
    rho: float = 1.0
    kappa: float = 1.0
    boundary_layer: Optional[float] = None

    def __post_init__(self):
        n = len(self.k_mats)
        if not (len(self.p_hat) == len(self.alpha) == len(self.theta_reach) == n):
            raise ConfigError("gains must be given for every mode")
        for p in self.p_hat:
            p = np.asarray(p)
            if not np.allclose(p, p.T, atol=1e-12):
                raise ConfigError("P_hat must be symmetric")
            if np.linalg.eigvalsh(p).min() <= 0:
                raise ConfigError("P_hat must be positive definite")
        if any(a < 0 for a in self.alpha):
            raise ConfigError("alpha must be >= 0")
        if any(th < 0 for th in self.theta_reach):
            raise ConfigError("theta must be >= 0")
        if not self.rho > 0:
            raise ConfigError("rho must be > 0")

    @property
    def n_modes(self):
        return len(self.k_mats)


@dataclass(frozen=True)
class ModeTerms:
    """Per-mode matrices reused by the surface and the control laws."""

    btp: np.ndarray        # B^T P
    w: np.ndarray          # B^T P B
    w_inv: np.ndarray
    btpe: np.ndarray       # B^T P E
    btpa: np.ndarray       # B^T P A
    k_tilde: np.ndarray    # rho K
    c_m: float             # ||W^-1 B^T P M||
    n_norm: float          # ||N||


def mode_terms(g: ControllerGains, mm: ModeMatrices, mode: int) -> ModeTerms:
    p = np.asarray(g.p_hat[mode], dtype=float)
    btp = mm.b_mat.T @ p
    w = btp @ mm.b_mat
    if np.linalg.cond(w) > COND_CAP:
        raise NonsingularityLoss(f"B^T P B ill-conditioned in mode {mode}")
    w_inv = np.linalg.inv(w)
    return ModeTerms(btp, w, w_inv, btp @ mm.e_mat, btp @ mm.a_mat,
                     g.rho * np.asarray(g.k_mats[mode], dtype=float),
                     float(np.linalg.norm(w_inv @ btp @ mm.m_mat, 2)),
                     float(np.linalg.norm(mm.n_mat, 2)))


def bpd_residual(g: ControllerGains, mm: ModeMatrices, mode: int) -> float:
    return float(np.linalg.norm(mm.b_mat.T @ np.asarray(g.p_hat[mode]) @ mm.d_mat))


@dataclass
class SurfaceState:
    integral_acc: np.ndarray
    s_value: np.ndarray


def initial_surface(y0, terms: ModeTerms) -> SurfaceState:
    s = y0 @ terms.btpe.T
    return SurfaceState(np.zeros_like(s), s)


def surface_integrand(y, h_matrix, terms: ModeTerms):
    """B^T P A y_i + B^T P B K~ (H y)_i."""
    return y @ terms.btpa.T + ((h_matrix @ y) @ terms.k_tilde.T) @ terms.w.T


def surface_update(ss: SurfaceState, y, y_next, h_matrix, terms: ModeTerms, dt) -> SurfaceState:
    """Advance the integral with a left rectangle and re-evaluate s at ``y_next``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    acc = ss.integral_acc + dt * surface_integrand(y, h_matrix, terms)
    return SurfaceState(acc, y_next @ terms.btpe.T - acc)


def hazard_gain(hazard_row, mode, w_invs):
    """1/2 || sum_{j != i} pi_ij W_j^-1 ||."""
    acc = np.zeros_like(w_invs[0])
    for j, pij in enumerate(hazard_row):
        if j != mode:
            acc = acc + pij * w_invs[j]
    return 0.5 * float(np.linalg.norm(acc, 2))


def smc_law(y, s, g: ControllerGains, mode: int, terms: ModeTerms, h_matrix, mm: ModeMatrices,
            hazard_row):
    """Continuous-time law: u = K~ H y - rho (c_M ||N y_i|| + c_pi ||s_i|| + alpha ||y_i|| + theta) sgn(s_i)."""
    off = np.sum(hazard_row) - hazard_row[mode]
    c_pi = 0.5 * float(np.linalg.norm(off * terms.w_inv, 2))
    ny = np.linalg.norm(y @ mm.n_mat.T, axis=1)
    gain = g.rho * (terms.c_m * ny + c_pi * np.linalg.norm(s, axis=1)
                    + g.alpha[mode] * np.linalg.norm(y, axis=1) + g.theta_reach[mode])
    return (h_matrix @ y) @ terms.k_tilde.T - gain[:, None] * sgn(s, g.boundary_layer)


def equivalent_control(y, terms: ModeTerms, h_matrix, delta_a, f, u_b, eta):
    """u_eq = eta^-1 [K~ H y - W^-1 B^T P dA y - f - u_b] (analysis aid only)."""
    eta = np.asarray(eta, dtype=float).reshape(-1, 1)
    matched = (y @ delta_a.T) @ (terms.w_inv @ terms.btp).T
    return ((h_matrix @ y) @ terms.k_tilde.T - matched - f - u_b) / eta


def surface_rate(y, u_f, terms: ModeTerms, h_matrix, delta_a, f):
    """ds/dt = B^T P [(dA - B K~ H) y + B (u^f + f)], valid when B^T P D = 0."""
    cpl = (h_matrix @ y) @ terms.k_tilde.T
    return (y @ delta_a.T) @ terms.btp.T + (u_f + f - cpl) @ terms.w.T


def reaching_monitor(times, s_trace, w_inv=None, band=0.0):
    """Lyapunov V = 1/2 s^T W^-1 s along a surface trace of shape (T, N, n_u)."""
    times = np.asarray(times, dtype=float)
    s = np.asarray(s_trace, dtype=float).reshape(len(times), -1)
    if w_inv is None:
        v = 0.5 * np.einsum("ti,ti->t", s, s)
    else:
        n_u = w_inv.shape[0]
        blocks = s.reshape(len(times), -1, n_u)
        v = 0.5 * np.einsum("tai,ij,taj->t", blocks, w_inv, blocks)
    norms = np.linalg.norm(s, axis=1)
    inside = norms <= band
    hit = float(times[np.argmax(inside)]) if inside.any() else np.inf
    outside = ~inside[:-1]
    if outside.any():
        frac = float(np.mean(np.diff(v)[outside] < 0))
    else:
        frac = 1.0
    return {"V": v, "first_hit_time": hit, "fraction_decreasing": frac}


def stabilizing_gain(a, b, poles):
    """K with eig(A + B K) = poles (note the + sign convention of the laws)."""
    return -signal.place_poles(np.asarray(a), np.asarray(b), poles).gain_matrix


def closed_loop_abscissa(a, b, k, h_matrix):
    """Largest real part of eig(I kron A + H kron B K)."""
    n = h_matrix.shape[0]
    cl = np.kron(np.eye(n), a) + np.kron(h_matrix, b @ k)
    return float(np.linalg.eigvals(cl).real.max())
