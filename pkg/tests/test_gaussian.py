import numpy as np
import pytest

from liftlab.gaussian import (
    GaussianTarget,
    OuSchedule,
    euler_maruyama,
    ou_propagate,
    ou_propagate_modes,
    potential,
    sample_mu,
    sample_mu_array,
)
from liftlab.lattice import CircleLattice, DomainError, MeanZeroProfile, build_spectral_table, laplacian_apply, \
    stationary_covariance


def test_mode_std():
    t = GaussianTarget.for_size(9)
    s = t.mode_std
    assert s[0] == 0.0
    np.testing.assert_allclose(s[1:] ** 2 * t.table.eigenvalues[1:], 1.0)


def test_schedule_rates():
    table = build_spectral_table(4)
    np.testing.assert_allclose(OuSchedule.SLOWED.rates(table), [2 / 8, 4 / 8, 2 / 8])
    np.testing.assert_allclose(OuSchedule.UNIT.rates(table), [1.0, 2.0, 1.0])


def test_sample_covariance_n4(rng):
    target = GaussianTarget.for_size(4)
    x = sample_mu_array(target, rng, size=100_000)
    C = stationary_covariance(target.table)
    prod = x[:, :, None] * x[:, None, :]
    est, se = prod.mean(axis=0), prod.std(axis=0) / np.sqrt(x.shape[0])
    assert np.all(np.abs(est - C) <= 3 * se + 1e-12)
    assert np.all(np.abs(x.mean(axis=0)) <= 3 * x.std(axis=0) / np.sqrt(x.shape[0]))
    assert np.abs(x.sum(axis=1)).max() < 1e-9 * 4


def test_sample_mu_profile(rng):
    z = sample_mu(GaussianTarget.for_size(6), rng)
    assert isinstance(z, MeanZeroProfile)


def test_potential_values(rng):
    assert potential(np.array([1.0, 0.0, -1.0])) == pytest.approx(3.0)
    assert potential(np.zeros(5)) == 0.0
    assert potential(np.array([1.0, 0.0, -1.0, 0.0])) == pytest.approx(2.0)
    l = sample_mu_array(GaussianTarget.for_size(7), rng, size=20)
    np.testing.assert_allclose(potential(l), -0.5 * np.sum(l * laplacian_apply(l, 7), axis=1), atol=1e-10)


def test_potential_stationary_mean(rng):
    # E[U] = (1/2) sum_k lambda_k / lambda_k = (n-1)/2
    l = sample_mu_array(GaussianTarget.for_size(10), rng, size=200_000)
    U = potential(l)
    assert abs(U.mean() - 4.5) < 3 * U.std() / np.sqrt(U.size)


def test_propagate_identity_and_errors(rng):
    z = sample_mu(GaussianTarget.for_size(5), rng)
    assert ou_propagate(z, 0.0, OuSchedule.SLOWED, rng) is z
    with pytest.raises(DomainError):
        ou_propagate(z, -1.0, OuSchedule.SLOWED, rng)


def test_propagate_mean_decay_against_euler_maruyama():
    n = 4
    table = build_spectral_table(n)
    z0 = 3.0 * table.modes[1]
    t = 2.0
    em = euler_maruyama(np.tile(z0, (4000, 1)), t, OuSchedule.SLOWED, np.random.default_rng(5), dt=1e-4 * 50)
    em_mean = table.to_modes(em.mean(axis=0))[1]
    exact = 3.0 * np.exp(-0.25 * t)
    draws = np.array([ou_propagate(MeanZeroProfile(z0, CircleLattice(n)), t, OuSchedule.SLOWED,
                                   np.random.default_rng(i)).entries for i in range(4000)])
    assert table.to_modes(draws.mean(axis=0))[1] == pytest.approx(exact, abs=0.02)
    assert em_mean == pytest.approx(exact, abs=0.02)


def test_propagate_mean_noise_free_em():
    # the mean of the linear SDE solves the deterministic ODE; EM with dt=1e-4 matches within 1e-3
    n = 4
    table = build_spectral_table(n)
    z0 = table.modes[1].copy()
    z = z0.copy()
    for _ in range(int(4.0 / 1e-4)):
        z += laplacian_apply(z, n) / (2 * n) * 1e-4
    assert table.to_modes(z)[1] == pytest.approx(np.exp(-0.25 * 4.0), abs=1e-3)


def test_long_time_variances(rng):
    n = 6
    table = build_spectral_table(n)
    c = ou_propagate_modes(np.zeros((10_000, n - 1)), 400.0, OuSchedule.SLOWED, table, rng)
    v = c.var(axis=0)
    se = v * np.sqrt(2.0 / c.shape[0])
    assert np.all(np.abs(v - 1.0 / table.eigenvalues[1:]) <= 3 * se)
