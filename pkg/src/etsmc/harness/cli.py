"""Command line entry point: run, batch, verify, presets.

Exit codes: 0 success, 1 certificate not verified, 2 configuration error,
3 divergence.  ETSMC_OUT_DIR replaces the default output root.
"""
import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import lmi
from ..errors import ConfigError, DimensionMismatch, EtsmcError, NonFiniteState
from . import config as C
from .io import write_outputs
from .metrics import compute_metrics
from .sim import run

OUT_ENV = "ETSMC_OUT_DIR"

PRESET_NOTES = {
    "paper-sec4": "event-triggered law, five followers, faults from 3 s",
    "no-fault": "as paper-sec4 with healthy actuators",
    "continuous-smc": "continuous sliding-mode law, faults from 3 s",
}


def _out_root():
    return os.environ.get(OUT_ENV, "runs")


def _label(ref):
    return os.path.splitext(os.path.basename(str(ref)))[0]


def _one(args):
    cfg_dict, seed, out_dir, band = args
    cfg = C.from_dict(cfg_dict).replace(seed=seed)
    tr = run(cfg)
    m = compute_metrics(tr, band)
    if out_dir:
        write_outputs(tr, m, out_dir, cfg)
    return m.to_dict()


def cmd_run(a):
    cfg = C.resolve(a.config)
    seed = cfg.seed if a.seed is None else a.seed
    cfg = cfg.replace(seed=seed)
    out = a.out or os.path.join(_out_root(), f"{_label(a.config)}-seed{seed}")
    tr = run(cfg)
    m = compute_metrics(tr, cfg.theta_band if a.theta_band is None else a.theta_band)
    write_outputs(tr, m, out, cfg)
    print(f"wrote {out}: settling_time={m.settling_time} steady_error={m.steady_error:.4g} "
          f"release_ratio={m.release_ratio:.3f}")
    return 0


def cmd_batch(a):
    cfg = C.resolve(a.config)
    C.build(cfg)
    out = a.out or os.path.join(_out_root(), f"{_label(a.config)}-batch")
    band = cfg.theta_band if a.theta_band is None else a.theta_band
    seeds = [cfg.seed + k for k in range(a.seeds)]
    jobs = [(cfg.to_dict(), s, None if a.no_files else os.path.join(out, f"seed_{s:04d}"), band)
            for s in seeds]
    workers = a.jobs or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    settle = np.array([float(r["settling_time"]) for r in results])
    summary = {
        "config_hash": C.config_hash(cfg),
        "seeds": seeds,
        "settled_within_8s": int((settle <= 8).sum()),
        "median_settling_time": float(np.median(settle)),
        "mean_steady_error": float(np.mean([r["steady_error"] for r in results])),
        "mean_release_ratio": float(np.mean([r["release_ratio"] for r in results])),
        "runs": results,
    }
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"{len(seeds)} runs -> {out}/summary.json; settled<=8s: "
          f"{summary['settled_within_8s']}/{len(seeds)}")
    return 0


def cmd_verify(a):
    cfg = C.resolve(a.config)
    b = C.build(cfg)
    try:
        cert = lmi.load_certificate(a.certificate)
    except (OSError, TypeError) as exc:
        raise ConfigError(f"cannot read certificate: {exc}") from exc
    h_mats = [c.h_matrix for c in b.couplings]
    rep = lmi.verify(cert, b.mode_mats, h_mats, b.process, a.tol)
    print(rep.to_json() if a.json else rep.to_text())
    return 0 if rep.passed else 1


def cmd_presets(a):
    for name in C.preset_names():
        print(f"{name:<16} {PRESET_NOTES.get(name, '')}")
    return 0


def parser():
    p = argparse.ArgumentParser(prog="etsmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", required=True, help="preset name or YAML file")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--theta-band", type=float)
    r.set_defaults(fn=cmd_run)
    b = sub.add_parser("batch", help="Monte Carlo over consecutive seeds")
    b.add_argument("--config", required=True)
    b.add_argument("--seeds", type=int, required=True)
    b.add_argument("--out")
    b.add_argument("--jobs", type=int)
    b.add_argument("--theta-band", type=float)
    b.add_argument("--no-files", action="store_true", help="only write summary.json")
    b.set_defaults(fn=cmd_batch)
    v = sub.add_parser("verify", help="check a stability certificate")
    v.add_argument("--certificate", required=True)
    v.add_argument("--config", required=True)
    v.add_argument("--tol", type=float, default=lmi.DEFAULT_TOL)
    v.add_argument("--json", action="store_true")
    v.set_defaults(fn=cmd_verify)
    ps = sub.add_parser("presets", help="list built-in scenarios")
    ps.set_defaults(fn=cmd_presets)
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DimensionMismatch, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteState as exc:
        print(f"diverged: {exc} (last finite state at t={exc.last_good_time})", file=sys.stderr)
        return 3
    except EtsmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
