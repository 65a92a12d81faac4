"""The invariant Gaussian measure on the mean-zero subspace and its OU collapse.

All sampling is done in mode coordinates with mode 0 structurally absent, so
outputs are mean-zero by construction rather than by re-projection.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .lattice import (
    DomainError,
    MeanZeroProfile,
    SpectralTable,
    build_spectral_table,
    laplacian_apply,
)


class OuSchedule(Enum):
    SLOWED = "slowed"  # dZ = (1/2n) Delta Z dt + n^{-1/2} dW
    UNIT = "unit"      # dZ = (1/2) Delta Z dt + dB

    def rates(self, table: SpectralTable) -> np.ndarray:
        """Mode decay rates r_k for k >= 1."""
        lam = table.eigenvalues[1:]
        return lam / (2.0 * table.n) if self is OuSchedule.SLOWED else lam / 2.0


@dataclass(frozen=True)
class GaussianTarget:
    table: SpectralTable

    @classmethod
    def for_size(cls, n: int) -> "GaussianTarget":
        return cls(build_spectral_table(n))

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def mode_std(self) -> np.ndarray:
        """sigma_k = lambda_k^{-1/2}, with sigma_0 = 0."""
        s = np.zeros(self.n)
        s[1:] = self.table.eigenvalues[1:] ** -0.5
        return s


def sample_mu_array(target: GaussianTarget, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Raw draws from N(0, (-Delta)^+) as an array of shape ``(n,)`` or ``(size, n)``."""
    shape = (target.n - 1,) if size is None else (size, target.n - 1)
    xi = rng.standard_normal(shape)
    return (xi * target.mode_std[1:]) @ target.table.modes[1:]


def sample_mu(target: GaussianTarget, rng: np.random.Generator) -> MeanZeroProfile:
    return MeanZeroProfile(sample_mu_array(target, rng), target.table.lattice)


def potential(l) -> float | np.ndarray:
    """U(l) = (1/2) sum_i (l[i+1] - l[i])^2, batched over leading axes."""
    l = l.entries if isinstance(l, MeanZeroProfile) else np.asarray(l, dtype=float)
    d = np.roll(l, -1, axis=-1) - l
    return 0.5 * np.sum(d * d, axis=-1)


def ou_propagate_modes(c: np.ndarray, t: float, schedule: OuSchedule, table: SpectralTable,
                       rng: np.random.Generator) -> np.ndarray:
    """Exact OU transition on mode coordinates ``c`` (shape ``(..., n-1)``, modes 1..n-1)."""
    if t < 0:
        raise DomainError(f"negative propagation time {t}")
    r = schedule.rates(table)
    decay = np.exp(-r * t)
    sd = table.eigenvalues[1:] ** -0.5 * np.sqrt(-np.expm1(-2.0 * r * t))
    return decay * c + sd * rng.standard_normal(np.shape(c))


def ou_propagate(z: MeanZeroProfile, t: float, schedule: OuSchedule, rng: np.random.Generator) -> MeanZeroProfile:
    if t < 0:
        raise DomainError(f"negative propagation time {t}")
    if t == 0:
        return z
    table = build_spectral_table(z.lattice)
    c = table.to_modes(z.entries)[1:]
    c = ou_propagate_modes(c, t, schedule, table, rng)
    return MeanZeroProfile(c @ table.modes[1:], z.lattice)


def euler_maruyama(z: np.ndarray, t: float, schedule: OuSchedule, rng: np.random.Generator,
                   dt: float = 1e-4) -> np.ndarray:
    """Discretized reference path for the OU dynamics (test oracle only).

    ``z`` may be a batch of shape ``(m, n)``; noise is projected onto the
    mean-zero subspace.
    """
    z = np.array(z, dtype=float)
    n = z.shape[-1]
    drift, noise = (1.0 / (2 * n), n ** -0.5) if schedule is OuSchedule.SLOWED else (0.5, 1.0)
    steps = int(round(t / dt))
    for _ in range(steps):
        dB = rng.standard_normal(z.shape) * np.sqrt(dt)
        dB -= dB.mean(axis=-1, keepdims=True)
        z += drift * laplacian_apply(z, n) * dt + noise * dB
    return z
