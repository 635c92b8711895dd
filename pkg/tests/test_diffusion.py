import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scdm.diffusion import (NoiseSchedule, ScheduleError, combine_noise, default_candidates, denoise_step,
                            forward_pair, q_sample, sample, schedule_search, shared_noise, wasserstein_1d)
from scdm.signals import standardize

from oracles import w1_cdf_oracle


def test_schedule_construction():
    s = NoiseSchedule.linear(50, 1e-4, 0.02)
    assert s.T == 50 and np.all(np.diff(s.alpha_bar) < 0)
    assert s.check_step(50) == 50
    for bad in (0, 51, 2.5):
        with pytest.raises(ScheduleError):
            s.check_step(bad)
    with pytest.raises(ScheduleError):
        NoiseSchedule(np.array([0.1, 1.0]))
    with pytest.raises(ScheduleError):
        NoiseSchedule(np.array([0.0, 0.1]))
    assert NoiseSchedule.from_dict(s.to_dict()).beta.tolist() == s.beta.tolist()
    assert NoiseSchedule.linear(1000).accepted and not NoiseSchedule.linear(10).accepted


def test_q_sample_special_cases(rng):
    degenerate = NoiseSchedule(np.zeros(3), strict=False)
    x0 = rng.standard_normal((2, 3, 4))
    assert np.array_equal(q_sample(x0, 2, rng.standard_normal(x0.shape), degenerate), x0)
    s = NoiseSchedule.linear(20, 1e-3, 0.1)
    t = 13
    out = q_sample(np.zeros((1, 2, 3)), t, np.ones((1, 2, 3)), s)
    assert np.allclose(out, math.sqrt(1 - s.alpha_bar[t - 1]))
    with pytest.raises(ScheduleError):
        q_sample(x0, 0, x0, s)
    per_sample = q_sample(x0, np.array([1, 20]), np.zeros_like(x0), s)
    assert np.allclose(per_sample[1], math.sqrt(s.alpha_bar[-1]) * x0[1])


def test_closed_form_matches_recursion():
    s = NoiseSchedule.linear(50, 1e-4, 0.02)
    g = np.random.default_rng(5)
    e0, f0 = g.standard_normal((2, 30, 400)), g.standard_normal((2, 36, 256))
    e_t, f_t, steps_e, steps_f = forward_pair(e0, f0, 50, s, np.random.default_rng(9), return_noise=True)
    assert np.max(np.abs(q_sample(f0, 50, combine_noise(steps_f, s), s) - f_t)) <= 1e-5
    assert np.max(np.abs(q_sample(e0, 50, combine_noise(steps_e, s), s) - e_t)) <= 1e-5


def test_shared_noise_equal_shapes(rng):
    s = NoiseSchedule.linear(30, 1e-4, 0.05)
    x0 = rng.standard_normal((3, 4, 16))
    for t in (1, 7, 30):
        e_t, f_t = forward_pair(x0, x0.copy(), t, s, np.random.default_rng(2))
        assert np.array_equal(e_t, f_t)
    e_t, f_t = forward_pair(x0, x0.copy(), 5, s, np.random.default_rng(2), method="closed")
    assert np.array_equal(e_t, f_t)


def test_shared_noise_prefix(rng):
    a, b = shared_noise(np.random.default_rng(0), (2, 3, 10), (2, 2, 5))
    assert np.array_equal(a.reshape(2, -1)[:, :10], b.reshape(2, -1))
    with pytest.raises(ScheduleError):
        shared_noise(None, (1, 2))


def test_forward_pair_seeds_and_errors(rng):
    s = NoiseSchedule.linear(10)
    x = rng.standard_normal((2, 3, 8))
    a = forward_pair(x, x, 5, s, np.random.default_rng(1))[1]
    b = forward_pair(x, x, 5, s, np.random.default_rng(2))[1]
    assert not np.array_equal(a, b)
    with pytest.raises(ScheduleError):
        forward_pair(x, x, 5, s, None)


def test_terminal_gaussian(reference):
    s = NoiseSchedule.linear(1000)
    assert s.accepted
    e0, f0 = standardize(reference.eeg.epochs)[0], standardize(reference.fnirs.epochs)[0]
    _, f_T = forward_pair(e0, f0, s.T, s, np.random.default_rng(3), method="closed")
    flat = f_T.transpose(1, 0, 2).reshape(36, -1)
    assert np.all(np.abs(flat.mean(axis=1)) < 0.05)
    assert np.all((flat.var(axis=1) >= 0.9) & (flat.var(axis=1) <= 1.1))


# --- Wasserstein ----------------------------------------------------------------------


def test_w1_basic(rng):
    x = rng.standard_normal(500)
    assert wasserstein_1d(x, rng.permutation(x)) == 0.0
    assert wasserstein_1d([2.0], [-1.5]) == 3.5
    with pytest.raises(ValueError):
        wasserstein_1d([], [1.0])


def test_w1_shifted_gaussians():
    g = np.random.default_rng(0)
    assert abs(wasserstein_1d(g.standard_normal(100_000), 1 + g.standard_normal(100_000)) - 1.0) <= 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 30))
def test_w1_unequal_sizes_match_cdf_oracle(seed, n, m):
    g = np.random.default_rng(seed)
    p, q = g.standard_normal(n), 0.5 + 2 * g.standard_normal(m)
    assert abs(wasserstein_1d(p, q) - w1_cdf_oracle(p, q)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_w1_triangle(seed):
    g = np.random.default_rng(seed)
    a, b, c = g.standard_normal(20), g.exponential(size=15), g.uniform(-2, 2, 25)
    assert wasserstein_1d(a, c) <= wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-9


# --- schedule search -----------------------------------------------------------------


@pytest.fixture(scope="module")
def standardized(mini):
    return standardize(mini.eeg.epochs)[0], standardize(mini.fnirs.epochs)[0]


def test_search_monotone_in_T(standardized):
    e0, f0 = standardized
    grid = [NoiseSchedule.linear(T, 1e-4, 0.02) for T in (10, 100, 1000)]
    rep = schedule_search(e0, f0, grid, seed=0)
    totals = [c.total for c in rep.candidates]
    assert totals[0] >= totals[1] >= totals[2]
    for c in rep.candidates:
        assert abs(c.total - (c.w_f_ref + c.w_e_ref + c.w_f_e)) <= 1e-12
    assert rep.chosen == int(np.argmin(totals))


def test_search_single_candidate(standardized):
    e0, f0 = standardized
    only = NoiseSchedule.cosine(50)
    rep = schedule_search(e0, f0, [only])
    assert rep.chosen == 0 and rep.best is only
    with pytest.raises(ScheduleError):
        schedule_search(e0, f0, [])


def test_search_report_json(standardized, tmp_path):
    import json
    e0, f0 = standardized
    rep = schedule_search(e0, f0, default_candidates()[:4], max_values=5000)
    rep.save(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert [r["chosen"] for r in d["candidates"]].count(True) == 1
    assert d["candidates"][d["chosen"]]["chosen"]


def test_default_grid():
    grid = default_candidates()
    assert {c.T for c in grid} == {50, 100, 200, 500, 1000}
    assert {c.family for c in grid} == {"linear", "cosine"}


# --- reverse process ----------------------------------------------------------------


def test_denoise_step_hand_value():
    s = NoiseSchedule(np.array([0.1]))  # alpha_bar_1 = 0.9
    out = denoise_step(np.array(2.0), np.array(1.0), 1, s)
    assert out == pytest.approx((2 - 0.1 / math.sqrt(0.1)) / math.sqrt(0.9), abs=1e-15)


def test_denoise_identity_step(rng):
    s = NoiseSchedule(np.array([0.0, 0.1]), strict=False)
    f = rng.standard_normal(5)
    assert np.array_equal(denoise_step(f, np.zeros(5), 1, s), f)
    with pytest.raises(ScheduleError):
        denoise_step(f, f, 3, s)


def test_oracle_noise_round_trip(rng):
    s = NoiseSchedule.linear(10, 1e-3, 0.2)
    x0 = rng.standard_normal((3, 36, 32))
    f = q_sample(x0, s.T, rng.standard_normal(x0.shape), s)
    for t in range(s.T, 0, -1):
        ab = s.alpha_bar[t - 1]
        eps_true = (f - math.sqrt(ab) * x0) / math.sqrt(1 - ab)
        f = denoise_step(f, eps_true, t, s)
    assert np.max(np.abs(f - x0)) <= 1e-4


class ZeroNet(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.w = torch.nn.Parameter(torch.zeros(()))

    def forward(self, e_t, f_t, maps, t):
        return self.w * f_t


def test_sample_deterministic_and_errors(rng):
    s = NoiseSchedule.linear(5, 1e-3, 0.2)
    e0 = rng.standard_normal((2, 3, 8))
    a = sample(ZeroNet(), e0, {}, s, np.random.default_rng(4), fnirs_shape=(2, 4))
    b = sample(ZeroNet(), e0, {}, s, np.random.default_rng(4), fnirs_shape=(2, 4))
    assert a.shape == (2, 2, 4) and np.array_equal(a, b)
    c = sample(ZeroNet(), e0, {}, s, np.random.default_rng(4), fnirs_shape=(2, 4), e_mode="trajectory")
    assert np.array_equal(a, c)  # the zero net ignores e_t
    with pytest.raises(ScheduleError):
        sample(ZeroNet(), e0, {}, s, None, fnirs_shape=(2, 4))
    with pytest.raises(ValueError):
        sample(ZeroNet(), e0, {}, s, 1, fnirs_shape=(2, 4), e_mode="other")
