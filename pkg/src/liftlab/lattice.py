"""Geometry and closed-form spectral data of the discrete circle Laplacian.

Sites are indexed ``0..n-1`` with periodic wrap. The eigenbasis is the real
Fourier basis, normalized so that the modes are orthonormal:

* mode 0 is the constant vector ``1/sqrt(n)``;
* for ``0 < k < n/2`` mode ``k`` is ``sqrt(2/n) cos(2 pi k i / n)``;
* for ``n/2 < k < n`` mode ``k`` is ``sqrt(2/n) sin(2 pi (n-k) i / n)``;
* for even ``n`` mode ``n/2`` is ``(-1)^i / sqrt(n)``.

With this labelling mode ``k`` has eigenvalue ``lambda_k = 2(1 - cos(2 pi k/n))``
for every ``k``, so eigenvalues come out in plain index order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class DimensionError(ValueError):
    """Vector length does not match the lattice size."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


@dataclass(frozen=True)
class CircleLattice:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise DomainError(f"circle lattice needs an integer n >= 3, got {self.n!r}")


@dataclass(frozen=True)
class MeanZeroProfile:
    """A vector in the mean-zero subspace of R^n."""

    entries: np.ndarray
    lattice: CircleLattice

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (self.lattice.n,):
            raise DimensionError(f"expected length {self.lattice.n}, got shape {entries.shape}")
        if abs(entries.sum()) > 1e-9 * self.lattice.n * max(1.0, np.abs(entries).max(initial=0.0)):
            raise DomainError(f"profile is not mean-zero (sum = {entries.sum():.3e})")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class SpectralTable:
    lattice: CircleLattice
    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)  # modes[k] is the k-th unit eigenvector

    @property
    def n(self) -> int:
        return self.lattice.n

    def to_modes(self, v: np.ndarray) -> np.ndarray:
        """Coordinates of ``v`` (shape ``(..., n)``) in the mode basis."""
        return np.asarray(v) @ self.modes.T

    def from_modes(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c) @ self.modes


def _as_lattice(lattice: CircleLattice | int) -> CircleLattice:
    return lattice if isinstance(lattice, CircleLattice) else CircleLattice(int(lattice))


def laplacian_apply(l: np.ndarray, lattice: CircleLattice | int) -> np.ndarray:
    """Periodic second difference ``l[i+1] - 2 l[i] + l[i-1]``.

    Works on the last axis, so a batch of profiles of shape ``(m, n)`` is fine.
    """
    lattice = _as_lattice(lattice)
    l = np.asarray(l, dtype=float)
    if l.shape[-1] != lattice.n:
        raise DimensionError(f"expected last axis of length {lattice.n}, got {l.shape[-1]}")
    return np.roll(l, -1, axis=-1) - 2.0 * l + np.roll(l, 1, axis=-1)


def laplacian_matrix(lattice: CircleLattice | int) -> np.ndarray:
    """Dense n x n periodic Laplacian (used by tests and small-n verifiers)."""
    n = _as_lattice(lattice).n
    D = -2.0 * np.eye(n)
    idx = np.arange(n)
    D[idx, (idx + 1) % n] += 1.0
    D[idx, (idx - 1) % n] += 1.0
    return D


def project_to_S(v: np.ndarray) -> MeanZeroProfile:
    v = np.asarray(v, dtype=float)
    return MeanZeroProfile(v - v.mean(), CircleLattice(v.shape[0]))


def eigenvalues(n: int) -> np.ndarray:
    k = np.arange(n)
    return 2.0 * (1.0 - np.cos(2.0 * np.pi * k / n))


@lru_cache(maxsize=64)
def _cached_table(n: int) -> SpectralTable:
    lattice = CircleLattice(n)
    i = np.arange(n)
    modes = np.empty((n, n))
    modes[0] = 1.0 / np.sqrt(n)
    for k in range(1, n):
        if 2 * k < n:
            modes[k] = np.sqrt(2.0 / n) * np.cos(2.0 * np.pi * k * i / n)
        elif 2 * k > n:
            modes[k] = np.sqrt(2.0 / n) * np.sin(2.0 * np.pi * (n - k) * i / n)
        else:
            modes[k] = (-1.0) ** i / np.sqrt(n)
    lam = eigenvalues(n)
    lam[0] = 0.0
    lam.setflags(write=False)
    modes.setflags(write=False)
    return SpectralTable(lattice, lam, modes)


def build_spectral_table(lattice: CircleLattice | int) -> SpectralTable:
    return _cached_table(_as_lattice(lattice).n)


def collapse_gap(lattice: CircleLattice | int) -> float:
    """Spectral gap of the slowed heat-equation generator, ``(1 - cos(2 pi/n))/n``."""
    n = _as_lattice(lattice).n
    return (1.0 - np.cos(2.0 * np.pi / n)) / n


def stationary_covariance(table: SpectralTable) -> np.ndarray:
    """Pseudo-inverse of ``-Delta_n``: sum over k >= 1 of ``mode_k mode_k^T / lambda_k``."""
    m = table.modes[1:]
    return (m.T / table.eigenvalues[1:]) @ m
