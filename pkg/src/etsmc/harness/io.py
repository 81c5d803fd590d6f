"""Trace, event, mode and metrics files.

trace.csv is long format ``time,series,agent,value``; agent 0 is the leader,
1..N the followers, -1 marks run-wide series (the mode index).  Floats carry
17 significant digits so a read-back reproduces the arrays exactly.
"""
import csv
import json
import os
from collections import defaultdict

import numpy as np

from ..errors import IoFailure
from ..modes import write_modes_csv
from .config import ScenarioConfig, dump

TRACE_HEADER = "time,series,agent,value"
FILES = ("trace.csv", "events.csv", "modes.csv", "metrics.json", "config.yaml")


def state_names(n_x):
    if n_x % 2 == 0:
        return [f"{k}{ax}" for ax in "xyzw"[: n_x // 2] for k in ("p", "v")]
    return [f"x{i}" for i in range(n_x)]


def input_names(n_u):
    return list("xyzw"[:n_u]) if n_u <= 4 else [str(i) for i in range(n_u)]


def _blocks(tr):
    """(series name, agent ids, (R, n_agents) values) for every recorded series."""
    n_x = tr.leader.shape[1]
    n_u = tr.u.shape[2]
    n = tr.n_agents
    foll = list(range(1, n + 1))
    out = []
    for c, name in enumerate(state_names(n_x)):
        vals = np.concatenate([tr.leader[:, c:c + 1], tr.followers[:, :, c]], axis=1)
        out.append((name, [0] + foll, vals))
    for c, name in enumerate(state_names(n_x)):
        out.append((f"y_{name}", foll, tr.y[:, :, c]))
    for c, name in enumerate(input_names(n_u)):
        out.append((f"u_{name}", foll, tr.u[:, :, c]))
        out.append((f"uf_{name}", foll, tr.u_applied[:, :, c]))
        out.append((f"s_{name}", foll, tr.s[:, :, c]))
    out.append(("eta", foll, tr.eta))
    out.append(("mode", [-1], tr.mode[:, None].astype(float)))
    return out


def write_trace_csv(tr, path):
    lines = [TRACE_HEADER]
    blocks = _blocks(tr)
    for r, t in enumerate(tr.times):
        ts = f"{t:.17g}"
        for name, agents, vals in blocks:
            row = vals[r]
            for a, v in zip(agents, row):
                lines.append(f"{ts},{name},{a},{v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path):
    """{(series, agent): (times, values)} as float arrays."""
    acc = defaultdict(lambda: ([], []))
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if ",".join(header) != TRACE_HEADER:
            raise ValueError(f"unexpected header {header}")
        for t, name, a, v in rd:
            ts, vs = acc[(name, int(a))]
            ts.append(float(t))
            vs.append(float(v))
    return {k: (np.array(t), np.array(v)) for k, (t, v) in acc.items()}


def write_events_csv(tr, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "release_time", "arrival_time", "delay"])
        for p in tr.events:
            w.writerow([p.agent + 1, f"{p.release_time:.17g}", f"{p.arrival_time:.17g}",
                        f"{p.arrival_time - p.release_time:.17g}"])


def write_outputs(tr, m, out_dir, cfg: ScenarioConfig = None):
    """Write the five run files into ``out_dir`` (created if missing)."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        write_trace_csv(tr, os.path.join(out_dir, "trace.csv"))
        write_events_csv(tr, os.path.join(out_dir, "events.csv"))
        write_modes_csv(tr.modes, os.path.join(out_dir, "modes.csv"))
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            json.dump(m.to_dict(), fh, indent=2)
        cfg_path = os.path.join(out_dir, "config.yaml")
        if cfg is not None:
            dump(cfg, cfg_path)
        else:
            with open(cfg_path, "w") as fh:
                fh.write(f"# config not supplied\nconfig_hash: {tr.config_hash}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write outputs to {out_dir}: {exc}") from exc
    return [os.path.join(out_dir, f) for f in FILES]
