"""Scalar summaries of a trace: settling, steady error, trigger economy."""
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class Metrics:
    settling_time: float
    steady_error: float
    release_counts: list
    sample_count: int
    release_ratio: float
    release_rate: list              # releases per agent per second, one entry per 1 s window
    window_counts: list
    theta_band: float
    fault: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    variant: str = ""

    def rate_between(self, t0, t1):
        """Mean per-agent release rate over whole windows inside [t0, t1]."""
        lo, hi = int(np.floor(t0)), int(np.ceil(t1))
        rates = self.release_rate[lo:hi]
        return float(np.mean(rates)) if rates else float("nan")

    def to_dict(self):
        d = asdict(self)
        d["settling_time"] = _enc(self.settling_time)
        return d


def _enc(v):
    return "inf" if np.isinf(v) else v


def settling_time(times, err_norm, band):
    """First t after which ``err_norm`` stays strictly below ``band`` (inf if never)."""
    err_norm = np.asarray(err_norm, dtype=float)
    bad = np.flatnonzero(err_norm >= band)
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == len(times) - 1:
        return float("inf")
    return float(times[bad[-1] + 1])


def steady_error(times, err_norm, tail=0.2):
    times = np.asarray(times, dtype=float)
    t0 = times[0] + (1 - tail) * (times[-1] - times[0])
    seg = np.asarray(err_norm)[times >= t0 - 1e-12]
    return float(seg.max()) if seg.size else 0.0


def release_windows(release_times, horizon, n_agents, width=1.0):
    """Per-window counts; the last window is closed on the right so counts partition all releases."""
    n_win = max(int(np.ceil(horizon / width - 1e-9)), 1)
    idx = np.minimum((np.asarray(release_times, dtype=float) / width).astype(int), n_win - 1)
    counts = np.bincount(idx, minlength=n_win)
    widths = np.full(n_win, width)
    widths[-1] = max(horizon - width * (n_win - 1), 1e-12) if horizon > 0 else width
    return counts, counts / widths / n_agents


def compute_metrics(tr, theta_band=1.0) -> Metrics:
    norms = np.linalg.norm(tr.y, axis=2).max(axis=1)
    n = tr.n_agents
    rel_times = [p.release_time for p in tr.events]
    counts = np.bincount([p.agent for p in tr.events], minlength=n)
    k = len(tr.sample_times)
    win_counts, rates = release_windows(rel_times, tr.horizon, n)
    fault = tr.extras.get("fault")
    fsum = {"active": bool(fault is not None and fault.active)}
    if fsum["active"]:
        fsum.update(onset=float(fault.onset),
                    eta_min=float(tr.eta.min()), eta_mean_after_onset=float(
                        tr.eta[tr.times >= fault.onset].mean()) if (tr.times >= fault.onset).any()
                    else 1.0, bias_amplitude=float(fault.bias_amplitude))
    return Metrics(settling_time(tr.times, norms, theta_band), steady_error(tr.times, norms),
                   counts.tolist(), k, float(counts.sum() / (k * n)) if k else 0.0,
                   rates.tolist(), win_counts.tolist(), float(theta_band), fsum, tr.seed,
                   tr.config_hash, tr.variant)
