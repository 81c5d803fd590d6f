import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from etsmc import plant as pl
from etsmc import smc
from etsmc import trigger as tg
from etsmc.errors import ConfigError, PendingCollision

finite = st.floats(-10, 10, allow_nan=False)


def test_should_release_examples():
    assert tg.should_release([1.0], [0.0], 0.1, np.eye(1))
    # equality is not a release
    assert not tg.should_release([2.0], [1.0], 0.25, np.eye(1))
    assert tg.should_release([2.0], [0.9], 0.25, np.eye(1))
    assert not tg.should_release([1.0, 1.0], [1.0, 1.0], 0.0, np.eye(2))
    assert tg.should_release([1.0, 1.0], [1.0, 1.0 + 1e-9], 0.0, np.eye(2))


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, (4,), elements=finite), hnp.arrays(np.float64, (4,), elements=finite),
       st.floats(0, 0.99), hnp.arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_should_release_matches_direct_formula(y, yl, sigma, g):
    phi = g @ g.T + 0.1 * np.eye(4)
    e = y - yl
    lhs = sum(e[i] * phi[i, j] * e[j] for i in range(4) for j in range(4))
    rhs = sigma * sum(y[i] * phi[i, j] * y[j] for i in range(4) for j in range(4))
    if abs(lhs - rhs) > 1e-9 * (1 + abs(lhs)):
        assert tg.should_release(y, yl, sigma, phi) == (lhs > rhs)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, (3, 2), elements=finite), hnp.arrays(np.float64, (3, 2), elements=finite),
       st.floats(0, 0.99))
def test_centralized_mask_is_stacked_rule(y, yl, sigma):
    phi = np.diag([1.0, 2.0])
    mask = tg.release_mask(y, yl, sigma, phi, per_agent=False)
    stacked = tg.should_release(y.reshape(-1), yl.reshape(-1), sigma, np.kron(np.eye(3), phi))
    assert mask.all() == stacked and (mask.all() or not mask.any())
    per = tg.release_mask(y, yl, sigma, phi, per_agent=True)
    for i in range(3):
        assert per[i] == tg.should_release(y[i], yl[i], sigma, phi)


def run_sequence(ys, tc, seed=0):
    """Drive the generator over samples ys (K, N, n) and deliver on a fine grid."""
    rng = np.random.default_rng(seed)
    h = tc.sample_period
    ts = tg.initial_trigger_state(ys[0], ys[0][:, :1])
    released = [np.ones(ys.shape[1], dtype=bool)]
    held_checks = []
    for k in range(1, ys.shape[0]):
        t = k * h
        tg.deliver(ts, t)
        released.append(tg.process_sample(t, ys[k], ys[k][:, :1], ts, tc, 0, rng))
        tg.deliver(ts, t)
        for frac in (0.25, 0.5, 0.75):
            tg.deliver(ts, t + frac * h)
            held_checks.append((t + frac * h, ts.held_y.copy()))
    return ts, np.array(released), held_checks


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.booleans(), st.floats(0, 0.5))
def test_hold_matches_packet_log_and_delays_are_bounded(seed, per_agent, sigma):
    ys = np.cumsum(np.random.default_rng(seed).normal(size=(30, 3, 2)), axis=0)
    tc = tg.TriggerConfig(0.01, (sigma,), (np.eye(2),), delay_bound=0.006, per_agent=per_agent)
    ts, released, checks = run_sequence(ys, tc, seed)
    for t, held in checks:
        y, _ = tg.held_values(t, ts.log, 3)
        assert np.array_equal(held, y)
    for p in ts.log:
        assert 0 <= p.arrival_time - p.release_time <= 0.006
    assert np.array_equal(ts.releases, released.sum(axis=0))
    out = tg.remark2_monitor(np.arange(30) * 0.01, ys, released, sigma, np.eye(2), per_agent)
    assert out["violations"] == 0


def test_remark2_monitor_flags_a_missed_release():
    ys = np.array([[[1.0]], [[5.0]], [[5.0]]])
    released = np.array([[True], [False], [False]])
    out = tg.remark2_monitor([0, 1, 2], ys, released, 0.1, np.eye(1))
    assert out["violations"] == 2 and out["checked"] == 2
    assert out["max_violation"] == pytest.approx(16 - 2.5)


def test_sigma_zero_releases_on_every_change():
    ys = np.arange(10, dtype=float).reshape(10, 1, 1)
    tc = tg.TriggerConfig(0.01, (0.0,), (np.eye(1),), delay_bound=0.0)
    ts, released, _ = run_sequence(ys, tc)
    assert released.all()
    assert ts.releases[0] == 10


def test_pending_collision():
    tc = tg.TriggerConfig(0.01, (0.0,), (np.eye(1),), delay_bound=0.009)
    ts = tg.initial_trigger_state(np.zeros((1, 1)), np.zeros((1, 1)))
    rng = np.random.default_rng(0)
    tg.process_sample(0.01, np.ones((1, 1)), np.ones((1, 1)), ts, tc, 0, rng)
    ts.pending_arrival[:] = 1.0
    with pytest.raises(PendingCollision):
        tg.process_sample(0.02, 2 * np.ones((1, 1)), np.ones((1, 1)), ts, tc, 0, rng)


def test_held_values_without_packets():
    with pytest.raises(ValueError):
        tg.held_values(0.0, [], 1)


def test_trigger_config_validation():
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.0, (0.1,), (np.eye(1),))
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.01, (1.0,), (np.eye(1),))
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.01, (0.1,), (-np.eye(1),))
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.01, (0.1,), (np.eye(1),), delay_bound=0.01)
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.01, (0.1,), (np.eye(1),), v_margin_scale=0.5)
    with pytest.raises(ConfigError):
        tg.TriggerConfig(0.01, (0.1, 0.2), (np.eye(1),))


def test_error_bound_and_v_gain():
    phi = np.diag([1.0, 4.0])
    y = np.array([[1.0, 1.0]])
    assert tg.error_bound(y, 0.2, phi) == pytest.approx(np.sqrt(0.2 * 5.0))
    mm = pl.double_integrator()
    g = smc.ControllerGains([-np.kron(np.eye(2), [[2.0, 5.0]])], [np.eye(4)], [0.3], [3.0])
    terms = smc.mode_terms(g, mm, 0)
    tc = tg.TriggerConfig(0.01, (0.1,), (np.eye(4),), v_margin_scale=1.0)
    assert tg.v_gain(np.zeros((2, 4)), tc, 0, terms, np.eye(2), offset=3.0) == 3.0
    y = np.array([[1.0, 0, 0, 0], [0, 0, 0, 0]])
    wk = np.linalg.norm([2.0, 5.0])
    assert tg.v_gain(y, tc, 0, terms, 2 * np.eye(2)) == pytest.approx(2 * wk * np.sqrt(0.1))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (3, 2), elements=finite),
       st.floats(0, 5))
def test_event_law_matches_continuous_law_without_uncertainty(y, s, lam):
    mm = pl.double_integrator(uncertainty_gain=0.0)
    g = smc.ControllerGains([-np.kron(np.eye(2), [[2.0, 5.0]])] * 2, [np.eye(4)] * 2, [0.3] * 2,
                            [3.0] * 2, boundary_layer=0.2)
    terms = smc.mode_terms(g, mm, 0)
    h = np.array([[1.0, 0, 0], [-1, 1, 0], [0, -1, 2]])
    row = [-lam, lam]
    w_invs = [terms.w_inv, terms.w_inv]
    cont = smc.smc_law(y, s, g, 0, terms, h, mm, row)
    evt = tg.event_smc_law(y, s, 3.0, g, 0, terms, h, row, w_invs)
    assert np.allclose(cont, evt, atol=1e-9)
