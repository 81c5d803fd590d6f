"""Stochastic leader/follower dynamics with uncertainty, nonlinearity and faults.

Agent states are stacked row-wise: row 0 is the leader, rows 1..N the
followers.  Every agent obeys

    E dx = ((A + dA) x + B (u + f(t, x))) dt + D x dw

with the leader driven by an exogenous input instead of a feedback law.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatch, NonFiniteState, SingularMassMatrix,
                     UncertaintyNormViolation, ConfigError)

NONLINEARITIES = ("zero", "bounded-lipschitz", "exp-sine")


@dataclass(frozen=True)
class ModeMatrices:
    a_mat: np.ndarray
    b_mat: np.ndarray
    d_mat: np.ndarray
    e_mat: np.ndarray
    m_mat: np.ndarray
    n_mat: np.ndarray

    def __post_init__(self):
        for name in ("a_mat", "b_mat", "d_mat", "e_mat", "m_mat", "n_mat"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        nx = self.a_mat.shape[0]
        if self.a_mat.shape != (nx, nx):
            raise DimensionMismatch("A must be square")
        for name in ("d_mat", "e_mat"):
            if getattr(self, name).shape != (nx, nx):
                raise DimensionMismatch(f"{name} must be {nx}x{nx}")
        if self.b_mat.shape[0] != nx:
            raise DimensionMismatch("B must have n_x rows")
        if self.m_mat.shape[0] != nx or self.n_mat.shape[1] != nx:
            raise DimensionMismatch("M must be n_x x p and N must be q x n_x")
        sv = np.linalg.svd(self.b_mat, compute_uv=False)
        if sv.size < self.b_mat.shape[1] or sv.min() <= 1e-10 * max(sv.max(), 1.0):
            raise ConfigError("B must have full column rank")

    @property
    def n_x(self):
        return self.a_mat.shape[0]

    @property
    def n_u(self):
        return self.b_mat.shape[1]

    def e_inverse(self, tol=1e-10):
        """E^-1, refusing descriptor (singular E) systems."""
        sv = np.linalg.svd(self.e_mat, compute_uv=False)
        if sv.min() <= tol * max(sv.max(), 1.0):
            raise SingularMassMatrix(
                "E is singular; descriptor systems can only be certificate-checked")
        return np.linalg.inv(self.e_mat)


def double_integrator(n_axes=2, diffusion=0.05, uncertainty_gain=0.2):
    """Per-axis double integrator (p, v) with matched uncertainty.

    The diffusion enters the position rows driven by velocity, which keeps
    B^T P D = 0 for any diagonal P.
    """
    blk_a = np.array([[0.0, 1.0], [0.0, 0.0]])
    blk_b = np.array([[0.0], [1.0]])
    eye = np.eye(n_axes)
    a = np.kron(eye, blk_a)
    b = np.kron(eye, blk_b)
    d = diffusion * a
    return ModeMatrices(a, b, d, np.eye(2 * n_axes), uncertainty_gain * b, b.T.copy())


@dataclass(frozen=True)
class UncertaintyLaw:
    """Generator of F(t) with ||F(t)|| < 1 (spectral norm)."""

    kind: str = "sinusoidal"
    amplitude: float = 0.5

    def __post_init__(self):
        if self.kind not in ("zero", "sinusoidal", "random-walk-clipped"):
            raise ConfigError(f"unknown uncertainty law {self.kind!r}")
        if not 0 <= self.amplitude < 1:
            raise UncertaintyNormViolation("uncertainty amplitude must be in [0, 1)")

    def series(self, times, size, rng=None):
        """Diagonal entries of F at each time, shape (len(times), size)."""
        times = np.asarray(times, dtype=float)
        if self.kind == "zero" or self.amplitude == 0:
            return np.zeros((times.size, size))
        if self.kind == "sinusoidal":
            return np.repeat((self.amplitude * np.sin(times))[:, None], size, axis=1)
        if rng is None:
            raise ValueError("random-walk uncertainty needs an rng")
        dt = np.diff(times, prepend=times[0])
        walk = np.empty((times.size, size))
        cur = np.zeros(size)
        for k in range(times.size):
            cur = np.clip(cur + np.sqrt(dt[k]) * rng.standard_normal(size),
                          -self.amplitude, self.amplitude)
            walk[k] = cur
        return walk


@dataclass(frozen=True)
class FaultProfile:
    """Actuator efficiency eta_i(t) (piecewise constant) and bias u_b(t).

    ``breakpoints[k]`` is the time where ``efficiency[k]`` takes effect; the
    first breakpoint is the onset.  ``bias_amplitude`` scales
    ``[sin t, cos t, sin t, ...]``.
    """

    onset: float = np.inf
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    efficiency: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    bias_amplitude: float = 0.0

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        eff = np.asarray(self.efficiency, dtype=float)
        if eff.size == 0:
            eff = eff.reshape(0, 0)
        if bp.size != eff.shape[0]:
            raise DimensionMismatch("one efficiency row per breakpoint")
        if eff.size and ((eff <= 0).any() or (eff > 1).any()):
            raise ConfigError("efficiencies must lie in (0, 1]")
        if bp.size and (bp[0] < self.onset or np.any(np.diff(bp) <= 0)):
            raise ConfigError("breakpoints must be increasing and start at onset")
        if self.onset < 0:
            raise ConfigError("fault onset must be >= 0")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "efficiency", eff)

    @property
    def active(self):
        return np.isfinite(self.onset)

    def eta(self, t, n):
        if t < self.onset or self.breakpoints.size == 0:
            return np.ones(n)
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        if k < 0:
            return np.ones(n)
        return self.efficiency[k]

    def bias(self, t, n_u):
        if t < self.onset or self.bias_amplitude == 0:
            return np.zeros(n_u)
        phase = np.where(np.arange(n_u) % 2 == 0, np.sin(t), np.cos(t))
        return self.bias_amplitude * phase


def no_fault():
    return FaultProfile()


def random_fault_profile(n, onset, horizon, rng, low=0.5, high=1.0,
                         period=1.0, bias_amplitude=0.05):
    """Efficiencies redrawn uniformly from [low, high] every ``period`` seconds."""
    if not 0 < low <= high <= 1:
        raise ConfigError("efficiency bounds must satisfy 0 < low <= high <= 1")
    if onset > horizon:
        return FaultProfile(onset, [], np.zeros((0, n)), bias_amplitude)
    bp = np.arange(onset, horizon + period, period)
    eff = rng.uniform(low, high, size=(bp.size, n))
    return FaultProfile(onset, bp, eff, bias_amplitude)


def apply_fault(u, fp: FaultProfile, t):
    """u^f = eta(t) u + u_b(t); identity before the onset.  ``u`` is (N, n_u)."""
    u = np.asarray(u, dtype=float)
    if t < fp.onset:
        return u.copy()
    u2 = np.atleast_2d(u)
    out = fp.eta(t, u2.shape[0])[:, None] * u2 + fp.bias(t, u2.shape[1])
    return out.reshape(u.shape)


@dataclass
class WorldState:
    leader: np.ndarray
    followers: np.ndarray
    time: float = 0.0

    def stacked(self):
        return np.vstack([self.leader[None, :], self.followers])

    @classmethod
    def from_stacked(cls, x, time):
        return cls(x[0].copy(), x[1:].copy(), time)


@dataclass(frozen=True)
class FormationSpec:
    offsets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.atleast_2d(np.asarray(self.offsets, dtype=float)))


def tracking_error(w: WorldState, fs: FormationSpec):
    """y_i = x_i - x_0 - h_i, shape (N, n_x)."""
    f = np.atleast_2d(w.followers)
    if f.shape != fs.offsets.shape or w.leader.shape[-1] != f.shape[1]:
        raise DimensionMismatch(
            f"followers {f.shape}, leader {w.leader.shape}, offsets {fs.offsets.shape}")
    return f - w.leader[None, :] - fs.offsets


def nonlinearity(kind, t, x, kappa=1.0):
    x = np.asarray(x, dtype=float)
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "bounded-lipschitz":
        return kappa * np.tanh(x)
    if kind == "exp-sine":
        return np.full_like(x, np.exp(t) * np.sin(10.0 * t))
    raise ConfigError(f"unknown nonlinearity {kind!r}")


def delta_a(mm: ModeMatrices, f_diag):
    """dA = M F N with diagonal F; checks the norm bound."""
    f_diag = np.asarray(f_diag, dtype=float)
    if f_diag.size and np.abs(f_diag).max() >= 1:
        raise UncertaintyNormViolation("||F|| must be < 1")
    return mm.m_mat @ (f_diag[:, None] * mm.n_mat)


def stacked_rhs(x, u, a_eff, b, b_pinv, t, f_kind, kappa):
    """RHS of E dx/dt for stacked states x ((N+1), n_x) and inputs u ((N+1), n_u)."""
    if f_kind == "zero":
        forcing = u
    else:
        forcing = u + nonlinearity(f_kind, t, x @ b_pinv.T, kappa)
    return x @ a_eff.T + forcing @ b.T


def drift(w: WorldState, u_f, mm: ModeMatrices, f_diag=None, f_kind="zero", t=0.0,
          leader_input=None, kappa=1.0):
    """Deterministic part (A + dA) x + B (u + f) for the leader and every follower.

    Returns ``(leader_rhs, followers_rhs)``; equals dx/dt when E = I.
    """
    if f_diag is None:
        f_diag = np.zeros(mm.m_mat.shape[1])
    a_eff = mm.a_mat + delta_a(mm, f_diag)
    x = w.stacked()
    u0 = np.zeros(mm.n_u) if leader_input is None else np.asarray(leader_input, dtype=float)
    u = np.vstack([u0[None, :], np.atleast_2d(u_f)])
    rhs = stacked_rhs(x, u, a_eff, mm.b_mat, np.linalg.pinv(mm.b_mat), t, f_kind, kappa)
    return rhs[0], rhs[1:]


def brownian_increments(rng, n_steps, n_agents, dt, shared=True):
    if shared:
        return np.repeat(rng.standard_normal((n_steps, 1)) * np.sqrt(dt), n_agents, axis=1)
    return rng.standard_normal((n_steps, n_agents)) * np.sqrt(dt)


def step(w: WorldState, u_f, mm: ModeMatrices, dt, rng, f_diag=None, f_kind="zero",
         leader_input=None, kappa=1.0, shared_noise=True):
    """One Euler-Maruyama step x+ = x + E^-1 (rhs dt + D x dW)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    e_inv = mm.e_inverse()
    lead_rhs, foll_rhs = drift(w, u_f, mm, f_diag, f_kind, w.time, leader_input, kappa)
    x = w.stacked()
    dw = brownian_increments(rng, 1, x.shape[0], dt, shared_noise)[0]
    rhs = np.vstack([lead_rhs[None, :], foll_rhs])
    x_new = x + (rhs * dt + (x @ mm.d_mat.T) * dw[:, None]) @ e_inv.T
    if not np.isfinite(x_new).all():
        raise NonFiniteState(f"state diverged at t={w.time + dt}", last_good_time=w.time)
    return WorldState.from_stacked(x_new, w.time + dt)
