import math

import numpy as np
import pytest

from gradets import diffusion as df
from gradets.diffusion import InferenceConfig, NoiseSchedule

SCHED = NoiseSchedule()


class ZeroNoise:
    def standard_normal(self, shape):
        return np.zeros(shape)


def rng(seed=0):
    return np.random.default_rng(seed)


def pair(seed, shape=(6, 5)):
    r = rng(seed)
    return r.normal(size=shape), r.normal(size=shape)


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule(0.0, 1.0)
    with pytest.raises(ValueError):
        NoiseSchedule(2.0, 1.0)


@pytest.mark.parametrize("t, expected", [(0.0, 0.0), (1.0, 10.025), (0.5, 2.51875)])
def test_schedule_integral_values(t, expected):
    assert df.schedule_integral(SCHED, t) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("t", [0.1, 0.37, 0.5, 1.0])
def test_schedule_integral_matches_quadrature(t):
    grid = np.linspace(0.0, t, 20001)
    rates = np.array([SCHED.rate(u) for u in grid])
    quad = float(np.sum(0.5 * (rates[1:] + rates[:-1]) * np.diff(grid)))
    assert df.schedule_integral(SCHED, t) == pytest.approx(quad, abs=1e-8)


def test_time_out_of_range():
    for t in (-0.1, 1.5):
        with pytest.raises(ValueError):
            df.schedule_integral(SCHED, t)


def test_eta_values_and_monotonicity():
    assert df.eta(SCHED, 0.0) == 0.0
    assert df.eta(SCHED, 1.0) == pytest.approx(1.0 - math.exp(-10.025), rel=1e-14)
    assert 1.0 - df.eta(SCHED, 1.0) < 5e-5
    grid = [df.eta(SCHED, k / 10) for k in range(1, 11)]
    assert all(b > a for a, b in zip(grid, grid[1:]))
    assert grid[-1] < 1.0
    for t in np.linspace(0, 1, 11):
        assert 1.0 - df.eta(SCHED, t) == pytest.approx(math.exp(-df.schedule_integral(SCHED, t)), rel=1e-12)


def test_marginal_at_small_time_is_clean_data():
    x0, x_mu = pair(0)
    x_t, g = df.forward_marginal_sample(SCHED, x0, x_mu, 1e-12, rng())
    np.testing.assert_allclose(x_t, x0, atol=1e-5)
    assert np.max(np.abs(g)) < 1e-5


def test_marginal_is_reproducible_and_checks_shapes():
    x0, x_mu = pair(1)
    a = df.forward_marginal_sample(SCHED, x0, x_mu, 0.4, rng(7))
    b = df.forward_marginal_sample(SCHED, x0, x_mu, 0.4, rng(7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        df.forward_marginal_sample(SCHED, x0, x_mu[:-1], 0.4, rng())
    with pytest.raises(ValueError):
        df.forward_marginal_sample(SCHED, x0, x_mu, 0.0, rng())


def test_sde_step_fixed_point_and_drift_sign():
    x_mu = np.array([1.0, -2.0])
    assert np.array_equal(df.forward_sde_step(SCHED, x_mu, x_mu, 0.3, 0.01, ZeroNoise()), x_mu)
    x = x_mu - 1.0
    moved = df.forward_sde_step(SCHED, x, x_mu, 0.3, 0.01, ZeroNoise())
    assert np.all(moved > x) and np.all(moved < x_mu)


def test_sde_step_rejects_bad_steps():
    x = np.zeros(2)
    with pytest.raises(ValueError):
        df.forward_sde_step(SCHED, x, x, 0.95, 0.1, rng())
    with pytest.raises(ValueError):
        df.forward_sde_step(SCHED, x, x, 0.5, 0.0, rng())


def test_score_zero_at_mean():
    x0, x_mu = pair(2)
    a_mu, a_0, _ = df.marginal_coefficients(SCHED, 0.6)
    assert np.max(np.abs(df.score_oracle(SCHED, a_mu * x_mu + a_0 * x0, x0, x_mu, 0.6))) < 1e-12


def test_score_consistent_with_sampled_noise():
    x0, x_mu = pair(3)
    for t in (0.01, 0.3, 1.0):
        x_t, g = df.forward_marginal_sample(SCHED, x0, x_mu, t, rng(4))
        eta = df.eta(SCHED, t)
        np.testing.assert_allclose(df.score_oracle(SCHED, x_t, x0, x_mu, t), -g / eta,
                                   rtol=0, atol=1e-12 / eta)


def test_score_is_gradient_of_log_density():
    x0, x_mu = pair(5, (3, 2))
    t = 0.35
    a_mu, a_0, var = df.marginal_coefficients(SCHED, t)
    mu = a_mu * x_mu + a_0 * x0

    def logp(x):
        return -0.5 * np.sum((x - mu) ** 2) / var - 0.5 * x.size * math.log(2 * math.pi * var)

    x = mu + rng(6).normal(size=mu.shape)
    fd = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = 1e-5
        e = e.reshape(x.shape)
        fd.flat[k] = (logp(x + e) - logp(x - e)) / 2e-5
    np.testing.assert_allclose(df.score_oracle(SCHED, x, x0, x_mu, t), fd, atol=1e-5)


def test_score_degenerate_time():
    x = np.zeros(3)
    with pytest.raises(ValueError):
        df.score_oracle(SCHED, x, x, x, 1e-15)


def test_loss_with_oracle_is_zero():
    for seed in range(20):
        x0, x_mu = pair(seed)
        loss = df.diffusion_loss(df.oracle_score_fn(SCHED, x0), SCHED, x0, x_mu, rng(seed))
        assert abs(loss) < 1e-10


def test_zero_score_loss_matches_expected_inverse_eta():
    # with f = 0 the per-element loss is (g/eta)^2, whose mean over t and g is E[1/eta]
    t_min = 0.1
    x0, x_mu = pair(8, (4, 5))
    r = rng(9)
    draws = np.array([df.diffusion_loss(lambda x, m, t: np.zeros_like(x), SCHED, x0, x_mu, r, t_min=t_min)
                      for _ in range(4000)])
    grid = np.linspace(t_min, 1.0, 200001)
    inv = 1.0 / np.array([df.eta(SCHED, t) for t in grid])
    expected = float(np.sum(0.5 * (inv[1:] + inv[:-1]) * np.diff(grid))) / (1.0 - t_min)
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - expected) < 3.5 * se


def test_loss_of_oracle_plus_residual_is_residual_energy():
    x0, x_mu = pair(10)
    resid = rng(11).normal(size=x0.shape)
    oracle = df.oracle_score_fn(SCHED, x0)
    loss = df.diffusion_loss(lambda x, m, t: oracle(x, m, t) + resid, SCHED, x0, x_mu, rng(12), t=0.42)
    assert loss == pytest.approx(float(np.mean(resid ** 2)), rel=1e-9)


def test_eta_weighting_scales_loss():
    x0, x_mu = pair(13)
    fn = lambda x, m, t: np.ones_like(x)
    plain = df.diffusion_loss(fn, SCHED, x0, x_mu, rng(1), t=0.3)
    weighted = df.diffusion_loss(fn, SCHED, x0, x_mu, rng(1), weighting="eta", t=0.3)
    assert weighted == pytest.approx(plain * df.eta(SCHED, 0.3), rel=1e-14)


def test_loss_argument_errors():
    x0, x_mu = pair(14)
    with pytest.raises(ValueError):
        df.diffusion_loss(lambda x, m, t: x[:1], SCHED, x0, x_mu, rng())
    with pytest.raises(ValueError):
        df.diffusion_loss(lambda x, m, t: x, SCHED, x0, x_mu, rng(), weighting="snr")


def test_inference_config_validation():
    InferenceConfig()
    for kwargs in ({"steps": 0}, {"temperature": 0.0}, {"t_min": 0.0}, {"t_min": 1.0}):
        with pytest.raises(ValueError):
            InferenceConfig(**kwargs)


def test_initial_sample_limits():
    x_mu = rng(15).normal(size=(4, 3))
    assert np.max(np.abs(df.init_sample_temperature(x_mu, 1e12, rng()) - x_mu)) < 1e-5
    with pytest.raises(ValueError):
        df.init_sample_temperature(x_mu, 0.0, rng())


def test_time_grid():
    cfg = InferenceConfig(steps=4, t_min=0.2)
    np.testing.assert_allclose(df.time_grid(cfg), [1.0, 0.8, 0.6, 0.4], rtol=0, atol=1e-15)


def test_single_step_with_zero_score_at_conditioner():
    x_mu = rng(16).normal(size=(3, 4))
    cfg = InferenceConfig(steps=1, temperature=1e12)
    zero = lambda x, m, t: np.zeros_like(x)
    assert np.array_equal(df.reverse_ode(zero, SCHED, x_mu, cfg, rng(), x_init=x_mu), x_mu)
    assert np.max(np.abs(df.reverse_ode(zero, SCHED, x_mu, cfg, rng()) - x_mu)) < 1e-4


def _recovery(steps, t_min=1e-3, seeds=range(20)):
    errs = []
    for s in seeds:
        x0, x_mu = pair(100 + s, (20, 16))
        cfg = InferenceConfig(steps=steps, temperature=1.0, t_min=t_min)
        out = df.reverse_ode(df.oracle_score_fn(SCHED, x0), SCHED, x_mu, cfg, rng(s))
        errs.append(np.linalg.norm(out - x0) / np.linalg.norm(x0))
    return float(np.mean(errs))


def test_oracle_recovery_improves_with_smaller_t_min():
    assert _recovery(1000, 1e-3, range(5)) < _recovery(1000, 1e-2, range(5))


def test_reverse_ode_reports_divergence():
    bad = lambda x, m, t: np.full_like(x, 1e308)
    with pytest.raises(FloatingPointError, match="step 0"):
        df.reverse_ode(bad, SCHED, np.zeros((2, 2)), InferenceConfig(steps=3), rng())


def test_joint_loss():
    assert df.joint_loss(2.0, 3.0, 1.0) == 5.0
    assert df.joint_loss(2.5, 0.0, 1.0) == 2.5
    assert df.joint_loss(2.5, 7.0, 0.0) == 2.5
    with pytest.raises(ValueError):
        df.joint_loss(1.0, 1.0, -1.0)
