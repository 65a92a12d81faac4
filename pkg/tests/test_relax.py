import math

import numpy as np
import pytest
from scipy import signal

from liftlab.lattice import DomainError, collapse_gap
from liftlab.relax import (
    EstimationFailure,
    Observable,
    PathBatch,
    RelaxationEstimate,
    SamplerConfig,
    autocorr_groups,
    estimate_from_groups,
    estimate_relaxation,
    fit_relaxation,
    gamma_preset,
    lower_bound_from_collapse,
    lower_bound_value,
    power_law_fit,
    read_results_csv,
    scaling_fit,
    write_results_csv,
)
from liftlab.srw import RefreshKind


def _lam(n, k):
    return 2 * (1 - math.cos(2 * math.pi * k / n))


def _est(n, t, se):
    return RelaxationEstimate(1.0 / t, se / t**2, (0.0, 1.0), "StationaryAutocorr", n, 0.0, "synthetic")


def test_fit_exact_exponential():
    lags = np.arange(0, 20, 0.05)
    fit = fit_relaxation(lags, np.exp(-0.5 * lags))
    assert fit.rate == pytest.approx(0.5, abs=1e-10)
    assert math.exp(-0.5 * fit.window[0]) <= 0.8 + 1e-9
    assert math.exp(-0.5 * fit.window[1]) >= 0.1 - 1e-9


def test_synthetic_ar1_trajectory():
    # exact correlation exp(-0.5 t) on a grid of 0.2
    dt, rate = 0.2, 0.5
    phi = math.exp(-rate * dt)
    rng = np.random.default_rng(3)
    paths = []
    for _ in range(8):
        w = rng.standard_normal(750_000) * math.sqrt(1 - phi**2)
        w[0] = rng.standard_normal()
        paths.append(signal.lfilter([1.0], [1.0, -phi], w))
    values = np.stack(paths)
    batch = PathBatch(np.arange(values.shape[1]) * dt, values, 0.0, 0.0)
    fit, se = estimate_from_groups(autocorr_groups(batch, 100, 10), oscillation_aware=False)
    assert fit.rate == pytest.approx(0.5, abs=0.01)
    assert 0 < se < 0.005


def test_oscillation_aware_envelope():
    lags = np.arange(0, 60, 0.05)
    rho = np.exp(-0.1 * lags) * np.cos(2.0 * lags)
    fit = fit_relaxation(lags, rho, oscillation_aware=True)
    assert fit.rate == pytest.approx(0.1, rel=0.02)
    naive = fit_relaxation(lags, rho, oscillation_aware=False)
    assert abs(naive.rate - 0.1) > abs(fit.rate - 0.1)


def test_estimation_failure_diagnostics():
    lags = np.arange(50.0)
    with pytest.raises(EstimationFailure) as info:
        fit_relaxation(lags, np.full(50, 0.95))
    assert "window" in info.value.diagnostics
    with pytest.raises(EstimationFailure):
        fit_relaxation(lags, np.where(lags == 0, 1.0, 0.01))


def test_scaling_fit_exact_power():
    ests = [_est(n, 3.0 * n**2, 0.0) for n in (8, 16, 32, 64)]
    exp, se = scaling_fit(ests)
    assert exp == pytest.approx(2.0, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-10)


def test_scaling_fit_noisy_three_halves():
    rng = np.random.default_rng(17)
    ns = np.array([8, 16, 32, 64, 128])
    hits = 0
    for _ in range(200):
        t = 2.0 * ns**1.5 * np.exp(0.05 * rng.standard_normal(ns.size))
        exp, _ = scaling_fit([_est(int(n), ti, 0.05 * ti) for n, ti in zip(ns, t)])
        hits += 1.35 <= exp <= 1.65
    assert hits / 200 >= 0.95


def test_scaling_fit_flags_mixed_scale():
    ests = [_est(n, t, 0.01 * t) for n, t in zip((8, 16, 32, 64), (10.0, 2000.0, 30.0, 5e4))]
    _, se = scaling_fit(ests)
    assert se > 0.5


def test_scaling_fit_needs_four_sizes():
    with pytest.raises(DomainError):
        scaling_fit([_est(n, n**2, 1.0) for n in (8, 16, 32)])
    with pytest.raises(DomainError):
        scaling_fit([_est(8, 64.0, 1.0)] * 5)


def test_power_law_unweighted():
    fit = power_law_fit([1, 2, 4, 8], [3, 6, 12, 24])
    assert fit.exponent == pytest.approx(1.0) and fit.prefactor == pytest.approx(3.0)


def test_lower_bound_values():
    assert lower_bound_value(100) == pytest.approx(100.6, abs=0.05)
    assert lower_bound_from_collapse(1.0) == pytest.approx(0.447, abs=5e-4)
    for n in range(3, 300):
        assert lower_bound_value(n) <= lower_bound_from_collapse(1.0 / collapse_gap(n)) * (1 + 1e-12)


def test_gamma_presets():
    assert gamma_preset(16, RefreshKind.uniform(1.0)) == 0.0625
    assert gamma_preset(16, "neighbor") == pytest.approx(1 / 64)
    assert gamma_preset(16, "uniform", c=2.0) == 0.125
    for variant in ("uniform", "neighbor"):
        vals = [gamma_preset(n, variant) for n in (4, 8, 16, 32, 64)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        gamma_preset(16, RefreshKind.none())


def test_observable_parsing():
    assert Observable.parse("mode(2)") == Observable.fourier_mode(2)
    assert Observable.parse("potential").tag == "potential"
    assert Observable.parse("position(1)") == Observable.position_indicator(1)
    with pytest.raises(DomainError):
        Observable.parse("bogus")


def test_observable_centering():
    n = 6
    obs = Observable.position_indicator(2)
    x = np.arange(n)
    vals = obs.evaluate(np.zeros((n, 0)), np.zeros(n), x, n)
    assert abs(vals.mean()) < 1e-15
    pot = Observable.potential().evaluate(np.zeros((1, 0)), np.array([(n - 1) / 2]), None, n)
    assert pot[0] == pytest.approx(0.0)


def test_sampler_config_parsing():
    c = SamplerConfig.parse("hmc-verlet(0.2)", 16, 0.1)
    assert c.eta == 0.2 and c.step_size == 0.2
    assert SamplerConfig.parse("hmc-verlet", 16, 0.1).step_size == pytest.approx(0.5)
    assert SamplerConfig.parse("ecmc(quartic)", 8, 0.1).potential == "quartic"
    assert SamplerConfig.parse("ou", 8).reversible
    with pytest.raises(DomainError):
        SamplerConfig.parse("srw-uniform", 8, 0.0)
    with pytest.raises(DomainError):
        SamplerConfig.parse("gibbs", 8)


@pytest.mark.parametrize("n", [8, 16])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_ou_mode_rates(n, k):
    cfg = SamplerConfig.parse("ou", n)
    est = estimate_relaxation(cfg, Observable.fourier_mode(k), 4, 1000 * cfg.anticipated_t_rel(), seed=1)
    assert est.rate == pytest.approx(_lam(n, k) / (2 * n), rel=0.10)


def test_ou_ensemble_decay_method():
    cfg = SamplerConfig.parse("ou", 8)
    est = estimate_relaxation(cfg, Observable.fourier_mode(1), 20_000, 3 * cfg.anticipated_t_rel(), seed=2,
                              method="EnsembleDecay", check_horizon=False)
    assert est.rate == pytest.approx(_lam(8, 1) / 16, rel=0.10)


def test_stderr_shrinks_with_replicas():
    cfg = SamplerConfig.parse("ou", 8)
    h = 500 * cfg.anticipated_t_rel()
    obs = Observable.fourier_mode(1)
    se4 = np.mean([estimate_relaxation(cfg, obs, 4, h, s).stderr for s in range(8)])
    se8 = np.mean([estimate_relaxation(cfg, obs, 8, h, s).stderr for s in range(8)])
    assert 1.25 <= se4 / se8 <= 1.6


def test_horizon_guard():
    cfg = SamplerConfig.parse("srw", 8)
    with pytest.raises(DomainError):
        estimate_relaxation(cfg, Observable.fourier_mode(1), 2, cfg.anticipated_t_rel(), 0)


def test_estimation_is_deterministic():
    cfg = SamplerConfig.parse("srw-uniform", 8, 1 / 8)
    a = estimate_relaxation(cfg, Observable.fourier_mode(1), 2, 100 * cfg.anticipated_t_rel(), 5)
    b = estimate_relaxation(cfg, Observable.fourier_mode(1), 2, 100 * cfg.anticipated_t_rel(), 5)
    assert a.rate == b.rate and a.stderr == b.stderr


def test_results_csv_roundtrip(tmp_path):
    ests = [_est(n, n**2, 1.0) for n in (8, 16, 32, 64)]
    path = write_results_csv(tmp_path / "r.csv", ests, scaling_fit(ests))
    rows = read_results_csv(path)
    assert len(rows) == 5
    assert list(rows[0])[:12] == ["sampler", "n", "gamma", "observable", "method", "rate", "stderr", "lag_lo",
                                  "lag_hi", "replicas", "horizon", "seed"]
    assert float(rows[1]["rate"]) == 1 / 256
    assert rows[-1]["method"] == "scaling_fit" and float(rows[-1]["rate"]) == pytest.approx(2.0)
