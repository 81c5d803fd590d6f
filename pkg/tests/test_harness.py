import json
import os

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from etsmc.errors import AssumptionViolated, ConfigError, DimensionMismatch, NonFiniteState
from etsmc.harness import cli, io
from etsmc.harness import config as C
from etsmc.harness import metrics as M
from etsmc.harness import sim


@pytest.fixture(scope="module")
def short():
    cfg = C.preset("paper-sec4").replace(horizon=2.0, **{"fault.onset": 1.0})
    return cfg, sim.run(cfg)


def test_formation_offsets_examples():
    off = C.formation_offsets(10.0, 4)
    assert off.shape == (4, 4)
    assert np.allclose(off[3], [10, 0, 0, 0])
    assert np.allclose(off[0], [0, 0, 10, 0], atol=1e-12)
    assert not off[:, 1::2].any()
    with pytest.raises(ConfigError):
        C.formation_offsets(0.0, 3)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100), st.integers(1, 12))
def test_formation_offsets_lie_on_circle(r, n):
    off = C.formation_offsets(r, n)
    assert np.allclose(np.hypot(off[:, 0], off[:, 2]), r)
    assert np.allclose(off[:, [0, 2]].sum(axis=0), 0, atol=1e-9 * r) or n == 1


def test_presets_build():
    for name in C.preset_names():
        b = C.build(C.preset(name))
        assert b.n_steps == 10000 and b.steps_per_sample == 10
    with pytest.raises(ConfigError):
        C.preset("nope")


def test_config_round_trip_and_hash(tmp_path):
    cfg = C.preset("paper-sec4")
    path = tmp_path / "c.yaml"
    C.dump(cfg, path)
    back = C.load(path)
    assert back == cfg and C.config_hash(back) == C.config_hash(cfg)
    assert C.config_hash(cfg.replace(seed=1)) != C.config_hash(cfg)
    assert C.resolve(str(path)) == cfg


@pytest.mark.parametrize("changes, exc", [
    ({"controller.variant": "bang-bang"}, ConfigError),
    ({"dt": 0.003}, ConfigError),
    ({"trigger.delay_bound": 0.01}, ConfigError),
    ({"horizon": 1.0005}, ConfigError),
    ({"topologies": ["moebius"]}, ConfigError),
    ({"topologies": ["ring", "chain"]}, DimensionMismatch),
    ({"topologies": [{"adjacency": np.zeros((5, 5)).tolist(), "leader_gains": [1, 0, 0, 0, 0]}]},
     AssumptionViolated),
    ({"plant.diffusion_kind": "full"}, ConfigError),
    ({"fault.low": 0.0}, ConfigError),
    ({"formation.positions": [[0, 0]]}, DimensionMismatch),
    ({"trigger.phi_weights": [1, 1, 1]}, DimensionMismatch),
])
def test_build_validation(changes, exc):
    with pytest.raises(exc):
        C.build(C.preset("paper-sec4").replace(**changes))


def test_unknown_yaml_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("trigger:\n  sigmaa: 0.2\n")
    with pytest.raises(ConfigError):
        C.load(path)
    path.write_text("trigger: [1, 2\n")
    with pytest.raises(ConfigError):
        C.load(path)


def test_horizon_zero():
    tr = sim.run(C.preset("paper-sec4").replace(horizon=0.0))
    assert tr.times.tolist() == [0.0] and tr.y.shape == (1, 5, 4)
    assert len(tr.events) == 5 and tr.sample_times.tolist() == [0.0]
    m = M.compute_metrics(tr)
    assert m.sample_count == 1 and m.release_ratio == 1.0


def test_run_is_deterministic(short):
    cfg, tr = short
    again = sim.run(cfg)
    for name in ("times", "y", "u", "s", "mode", "eta"):
        assert np.array_equal(getattr(tr, name), getattr(again, name))
    assert [(p.agent, p.release_time, p.arrival_time) for p in tr.events] == \
        [(p.agent, p.release_time, p.arrival_time) for p in again.events]
    other = sim.run(cfg, seed=5)
    assert not np.array_equal(other.y, tr.y)


def test_step_order_audit(short):
    _, tr = short
    # the control at t only ever uses payloads that have already arrived
    assert (tr.held_arrival <= tr.times[:, None] + 1e-12).all()
    for p in tr.events:
        assert 0 <= p.arrival_time - p.release_time <= tr.sample_period / 2 + 1e-12
        k = p.release_time / tr.sample_period
        assert abs(k - round(k)) < 1e-9
    # sampled y matches the recorded trace on shared instants
    idx = np.searchsorted(tr.times, tr.sample_times[:50])
    assert np.allclose(tr.y[idx], tr.sample_y[:50])
    # fault acts only from its onset
    assert (tr.eta[tr.times < 1.0] == 1).all()
    assert not (tr.eta[tr.times >= 1.0] == 1).all()


def test_sample_releases_satisfy_trigger_condition(short):
    from etsmc.trigger import remark2_monitor
    cfg, tr = short
    out = remark2_monitor(tr.sample_times, tr.sample_y, tr.released, cfg.trigger.sigma, np.eye(4))
    assert out["violations"] == 0 and out["checked"] > 0


def test_settling_time_examples():
    t = np.linspace(0, 5, 5001)
    assert M.settling_time(t, np.exp(-t), 0.1) == pytest.approx(np.log(10), abs=1e-3)
    assert M.settling_time(t, np.zeros_like(t), 0.1) == 0.0
    assert M.settling_time(t, np.ones_like(t), 0.1) == np.inf
    assert M.steady_error(t, np.exp(-t)) == pytest.approx(np.exp(-4.0), rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10, exclude_max=True), max_size=200), st.integers(1, 5))
def test_release_windows_partition(times, n_agents):
    counts, rates = M.release_windows(times, 10.0, n_agents)
    assert counts.sum() == len(times) and len(counts) == 10
    assert np.allclose(rates * n_agents, counts)


def test_theta_band_monotone(short):
    _, tr = short
    vals = [M.compute_metrics(tr, b).settling_time for b in (0.5, 1.0, 2.0, 5.0, 50.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_metrics_fields(short):
    cfg, tr = short
    m = M.compute_metrics(tr)
    assert sum(m.release_counts) == len(tr.events) == sum(m.window_counts)
    assert m.config_hash == C.config_hash(cfg) and m.variant == "event-triggered"
    assert m.fault["active"] and 0.5 <= m.fault["eta_min"] <= 1.0
    assert 0 < m.release_ratio <= 1
    json.dumps(m.to_dict())


def test_trace_csv_round_trip(short, tmp_path):
    _, tr = short
    path = tmp_path / "trace.csv"
    io.write_trace_csv(tr, path)
    assert path.read_text().splitlines()[0] == io.TRACE_HEADER
    data = io.read_trace_csv(path)
    t, v = data[("y_px", 3)]
    assert np.array_equal(t, tr.times) and np.array_equal(v, tr.y[:, 2, 0])
    assert np.array_equal(data[("vy", 0)][1], tr.leader[:, 3])
    assert np.array_equal(data[("mode", -1)][1], tr.mode)
    assert np.array_equal(data[("uf_y", 5)][1], tr.u_applied[:, 4, 1])


def test_empty_trace_csv(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(io.TRACE_HEADER + "\n")
    assert io.read_trace_csv(path) == {}
    path.write_text("a,b\n")
    with pytest.raises(ValueError):
        io.read_trace_csv(path)


def test_write_outputs(short, tmp_path):
    cfg, tr = short
    m = M.compute_metrics(tr)
    files = io.write_outputs(tr, m, tmp_path / "run", cfg)
    assert [os.path.basename(f) for f in files] == list(io.FILES)
    assert all(os.path.getsize(f) > 0 for f in files)
    assert C.load(tmp_path / "run" / "config.yaml") == cfg
    ev = (tmp_path / "run" / "events.csv").read_text().splitlines()
    assert ev[0] == "agent,release_time,arrival_time,delay" and len(ev) == len(tr.events) + 1
    assert json.loads((tmp_path / "run" / "metrics.json").read_text())["seed"] == cfg.seed


def test_cli_presets(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in C.preset_names())


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "short.yaml"
    C.dump(C.preset("no-fault").replace(horizon=1.0), cfg_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path), "--seed", "3", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == sorted(io.FILES)
    assert C.load(out / "config.yaml").seed == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--config", str(cfg_path), "--bogus"])
    assert exc.value.code == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(out)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("dt: 0.003\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(out)]) == 2
    div = tmp_path / "div.yaml"
    div.write_text("horizon: 2.0\ncontroller:\n  gains: [-200.0, -200.0]\n")
    with np.errstate(all="ignore"):
        assert cli.main(["run", "--config", str(div), "--out", str(out)]) == 3
    err = capsys.readouterr().err
    assert "diverged" in err and "config error" in err


def test_out_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ETSMC_OUT_DIR", str(tmp_path))
    cfg_path = tmp_path / "tiny.yaml"
    C.dump(C.preset("paper-sec4").replace(horizon=0.5), cfg_path)
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "tiny-seed0" / "trace.csv").exists()


def test_cli_batch_distinct_seeds(tmp_path):
    cfg_path = tmp_path / "b.yaml"
    C.dump(C.preset("paper-sec4").replace(horizon=1.0), cfg_path)
    out = tmp_path / "batch"
    assert cli.main(["batch", "--config", str(cfg_path), "--seeds", "3", "--out", str(out),
                     "--jobs", "1", "--no-files"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2]
    counts = [tuple(r["release_counts"]) for r in summary["runs"]]
    assert len(set(counts)) > 1


def test_cli_verify(tmp_path, capsys):
    from etsmc import lmi
    cfg_path = tmp_path / "one.yaml"
    cfg = C.preset("paper-sec4").replace(**{"modes.n_modes": 1, "topologies": ["ring"]})
    C.dump(cfg, cfg_path)
    b = C.build(cfg)
    n = 5 * 4
    cert = lmi.Certificate(p_tilde=[np.eye(n)], p_hat=[np.eye(4)], q_mat=np.eye(4), r_mat=np.eye(4),
                           eps1=[1.0], eps2=[1.0], k_mats=b.gains.k_mats)
    cpath = tmp_path / "cert.yaml"
    lmi.save_certificate(cert, cpath)
    code = cli.main(["verify", "--certificate", str(cpath), "--config", str(cfg_path), "--json"])
    rep = json.loads(capsys.readouterr().out)
    assert code == (0 if rep["passed"] else 1) and code == 1
    assert cli.main(["verify", "--certificate", str(tmp_path / "x.yaml"),
                     "--config", str(cfg_path)]) == 2


def test_sampled_variant_releases_every_sample():
    tr = sim.run(C.preset("paper-sec4").replace(horizon=0.5, **{"controller.variant": "sampled"}))
    assert tr.released.all()
    assert len(tr.events) == tr.released.size


def test_explicit_plant_matrices_match_default():
    from etsmc import plant as pl
    mm = pl.double_integrator()
    entry = {k: getattr(mm, f"{k}_mat").tolist() for k in ("a", "b", "d", "e", "m", "n")}
    base = C.preset("paper-sec4").replace(horizon=1.0)
    explicit = base.replace(**{"plant.matrices": [entry]})
    assert np.array_equal(sim.run(base).y, sim.run(explicit).y)
    per_mode = [entry, {**entry, "d": (0.5 * np.asarray(entry["d"])).tolist()}, entry]
    tr = sim.run(base.replace(**{"plant.matrices": per_mode}))
    assert np.isfinite(tr.y).all()
    with pytest.raises(ConfigError):
        C.build(base.replace(**{"plant.matrices": [{"a": entry["a"]}]}))
    with pytest.raises(DimensionMismatch):
        C.build(base.replace(**{"plant.matrices": [entry, entry]}))
