"""Semi-Markov switching signal r(t) with sojourn-time dependent rates."""
import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidMode, OutOfRange


@dataclass(frozen=True)
class SojournLaw:
    """Holding-time distribution of one mode.

    ``kind`` is ``"exponential"`` (uses ``rate``) or ``"weibull"`` (uses
    ``scale`` and ``shape``).
    """

    kind: str = "exponential"
    rate: float = 1.0
    scale: float = 1.0
    shape: float = 1.0

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.rate > 0:
                raise ConfigError("exponential rate must be > 0")
        elif self.kind == "weibull":
            if not (self.scale > 0 and self.shape > 0):
                raise ConfigError("weibull scale and shape must be > 0")
        else:
            raise ConfigError(f"unknown sojourn law {self.kind!r}")

    def hazard(self, h):
        """g(h) / (1 - G(h))."""
        h = np.asarray(h, dtype=float)
        if self.kind == "exponential":
            return np.full_like(h, self.rate)
        k, lam = self.shape, self.scale
        return (k / lam) * (h / lam) ** (k - 1)

    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        from math import gamma
        return self.scale * gamma(1.0 + 1.0 / self.shape)

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "exponential":
            return float(rng.exponential(1.0 / self.rate))
        return float(self.scale * rng.weibull(self.shape))


@dataclass(frozen=True)
class ModeProcess:
    embedded_chain: np.ndarray
    sojourn_laws: tuple

    def __post_init__(self):
        q = np.asarray(self.embedded_chain, dtype=float)
        n = q.shape[0]
        if n < 1 or q.shape != (n, n):
            raise ConfigError(f"embedded chain must be square, got {q.shape}")
        if len(self.sojourn_laws) != n:
            raise ConfigError(f"{len(self.sojourn_laws)} sojourn laws for {n} modes")
        if (q < 0).any():
            raise ConfigError("embedded chain has negative entries")
        if n > 1:
            if np.any(np.diag(q) != 0):
                raise ConfigError("embedded chain must have zero diagonal")
            if not np.allclose(q.sum(axis=1), 1.0, atol=1e-12):
                raise ConfigError("embedded chain rows must sum to 1")
        q = q.copy()
        q.setflags(write=False)
        object.__setattr__(self, "embedded_chain", q)
        object.__setattr__(self, "sojourn_laws", tuple(self.sojourn_laws))

    @property
    def n_modes(self) -> int:
        return self.embedded_chain.shape[0]

    def check_mode(self, i):
        if not (0 <= i < self.n_modes):
            raise InvalidMode(f"mode {i} outside 0..{self.n_modes - 1}")


def uniform_process(n_modes: int, law: SojournLaw = SojournLaw()) -> ModeProcess:
    q = np.full((n_modes, n_modes), 1.0 / max(n_modes - 1, 1))
    np.fill_diagonal(q, 0.0)
    if n_modes == 1:
        q[:] = 0.0
    return ModeProcess(q, (law,) * n_modes)


def hazard(p: ModeProcess, i: int, j: int, h: float) -> float:
    """Transition rate pi_ij(h); the diagonal carries minus the total hazard."""
    p.check_mode(i)
    p.check_mode(j)
    if h < 0:
        raise OutOfRange("elapsed time must be >= 0")
    if p.n_modes == 1:
        return 0.0
    lam = float(p.sojourn_laws[i].hazard(h))
    if i == j:
        return -lam
    return float(p.embedded_chain[i, j]) * lam


def hazard_row(p: ModeProcess, i: int, h) -> np.ndarray:
    """All pi_ij(h) for fixed i; ``h`` may be an array (result shape (..., n))."""
    h = np.asarray(h, dtype=float)
    if p.n_modes == 1:
        return np.zeros(h.shape + (1,))
    lam = p.sojourn_laws[i].hazard(h)[..., None]
    row = p.embedded_chain[i] * lam
    row[..., i] = -lam[..., 0]
    return row


@dataclass(frozen=True)
class ModeTrajectory:
    switch_times: np.ndarray
    modes: np.ndarray
    horizon: float

    def epoch_index(self, t):
        return np.searchsorted(self.switch_times, t, side="right") - 1


def sample_trajectory(p: ModeProcess, horizon: float, initial_mode: int,
                      rng: np.random.Generator) -> ModeTrajectory:
    p.check_mode(initial_mode)
    if not horizon > 0:
        raise OutOfRange("horizon must be > 0")
    times, modes = [0.0], [initial_mode]
    if p.n_modes > 1:
        t, i = 0.0, initial_mode
        while True:
            t += p.sojourn_laws[i].sample(rng)
            if t > horizon:
                break
            i = int(rng.choice(p.n_modes, p=p.embedded_chain[i]))
            times.append(t)
            modes.append(i)
    return ModeTrajectory(np.array(times), np.array(modes, dtype=int), float(horizon))


def mode_at(tr: ModeTrajectory, t: float) -> int:
    if not (0 <= t <= tr.horizon):
        raise OutOfRange(f"t={t} outside [0, {tr.horizon}]")
    return int(tr.modes[tr.epoch_index(t)])


def elapsed_at(tr: ModeTrajectory, t):
    """Time already spent in the current epoch (the h of pi_ij(h))."""
    t = np.asarray(t, dtype=float)
    return t - tr.switch_times[tr.epoch_index(t)]


def write_modes_csv(tr: ModeTrajectory, path, times: Sequence[float] = None):
    """Two-column (time, mode) export; one row per switch unless ``times`` given."""
    ts = tr.switch_times if times is None else np.asarray(times)
    ks = tr.modes[tr.epoch_index(ts)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "mode"])
        for t, k in zip(ts, ks):
            w.writerow([repr(float(t)), int(k)])
