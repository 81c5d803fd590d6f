import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etsmc import modes as md
from etsmc.errors import ConfigError, InvalidMode, OutOfRange


def two_mode(law):
    return md.ModeProcess(np.array([[0.0, 1.0], [1.0, 0.0]]), (law, law))


def test_exponential_hazard_is_constant_rate():
    p = two_mode(md.SojournLaw("exponential", rate=2.0))
    for h in (0.0, 0.3, 5.0):
        assert md.hazard(p, 0, 1, h) == pytest.approx(2.0)
        assert md.hazard(p, 0, 0, h) == pytest.approx(-2.0)
    # against g / (1 - G) evaluated directly
    h = 0.7
    g = 2.0 * np.exp(-2.0 * h)
    big_g = 1 - np.exp(-2.0 * h)
    assert md.hazard(p, 0, 1, h) == pytest.approx(g / (1 - big_g), rel=1e-12)


def test_weibull_hazard_vanishes_at_zero_for_shape_above_one():
    p = two_mode(md.SojournLaw("weibull", scale=1.0, shape=2.0))
    assert md.hazard(p, 0, 0, 0.0) == 0.0
    h, k, lam = 0.8, 2.0, 1.0
    g = (k / lam) * (h / lam) ** (k - 1) * np.exp(-(h / lam) ** k)
    surv = np.exp(-(h / lam) ** k)
    assert md.hazard(p, 0, 1, h) == pytest.approx(g / surv, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.floats(1e-3, 20), st.floats(0.2, 3), st.floats(0.3, 4))
def test_hazard_rows_sum_to_zero(n, h, scale, shape):
    rng = np.random.default_rng(n)
    q = rng.random((n, n))
    np.fill_diagonal(q, 0)
    q /= q.sum(axis=1, keepdims=True)
    p = md.ModeProcess(q, (md.SojournLaw("weibull", scale=scale, shape=shape),) * n)
    for i in range(n):
        row = md.hazard_row(p, i, h)
        assert abs(row.sum()) <= 1e-12 * max(1.0, np.abs(row).max())
        assert row == pytest.approx([md.hazard(p, i, j, h) for j in range(n)])


def test_invalid_inputs():
    p = md.uniform_process(3)
    with pytest.raises(InvalidMode):
        md.hazard(p, 3, 0, 1.0)
    with pytest.raises(OutOfRange):
        md.hazard(p, 0, 1, -1.0)
    with pytest.raises(ConfigError):
        md.SojournLaw("exponential", rate=0.0)
    with pytest.raises(ConfigError):
        md.ModeProcess(np.array([[0.5, 0.5], [1.0, 0.0]]), (md.SojournLaw(),) * 2)


def test_single_mode_never_jumps():
    p = md.uniform_process(1)
    tr = md.sample_trajectory(p, 10.0, 0, np.random.default_rng(0))
    assert list(tr.switch_times) == [0.0] and list(tr.modes) == [0]
    assert md.hazard(p, 0, 0, 1.0) == 0.0


def test_fast_process_switches():
    p = two_mode(md.SojournLaw(rate=1000.0))
    tr = md.sample_trajectory(p, 1.0, 0, np.random.default_rng(1))
    assert len(tr.switch_times) > 1


def test_trajectory_invariants_and_determinism():
    p = md.uniform_process(3)
    a = md.sample_trajectory(p, 50.0, 1, np.random.default_rng(5))
    b = md.sample_trajectory(p, 50.0, 1, np.random.default_rng(5))
    assert np.array_equal(a.switch_times, b.switch_times) and np.array_equal(a.modes, b.modes)
    assert a.switch_times[0] == 0 and np.all(np.diff(a.switch_times) > 0)
    assert np.all(a.modes[1:] != a.modes[:-1])


def test_mode_at_conventions():
    tr = md.ModeTrajectory(np.array([0.0, 1.0, 2.5]), np.array([0, 2, 1]), 4.0)
    assert md.mode_at(tr, 0.0) == 0
    assert md.mode_at(tr, 1.0) == 2          # right-continuous
    assert md.mode_at(tr, 2.4999) == 2
    assert md.mode_at(tr, 4.0) == 1
    with pytest.raises(OutOfRange):
        md.mode_at(tr, 4.1)
    assert md.elapsed_at(tr, 3.0) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 30))
def test_mode_at_matches_linear_scan(t):
    tr = md.sample_trajectory(md.uniform_process(3), 30.0, 0, np.random.default_rng(3))
    expected = tr.modes[0]
    for s, m in zip(tr.switch_times, tr.modes):
        if s <= t:
            expected = m
    assert md.mode_at(tr, t) == expected


def test_modes_csv(tmp_path):
    tr = md.ModeTrajectory(np.array([0.0, 1.5]), np.array([0, 1]), 3.0)
    md.write_modes_csv(tr, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == ["time,mode", "0.0,0", "1.5,1"]
