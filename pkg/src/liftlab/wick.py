"""Polynomials in a centered Gaussian vector and their exact moments.

A :class:`GaussPoly` is a sum of terms ``coef * prod_j (u_j . l)``; products
just concatenate factor lists, and expectations under ``N(0, C)`` are taken by
summing over pair partitions (Isserlis/Wick).  Odd-degree terms integrate to
zero exactly; even degrees above four are rejected.
"""
from __future__ import annotations

import numpy as np

MAX_DEGREE = 4


class UnsupportedDegree(ValueError):
    pass


class GaussPoly:
    def __init__(self, n: int, terms=None):
        self.n = n
        # degree -> (coefs (T,), factors (T, d, n))
        self.terms: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for d, (c, F) in (terms or {}).items():
            self._add(d, np.asarray(c, float), np.asarray(F, float))

    def _add(self, d, c, F):
        if c.size == 0:
            return
        if d in self.terms:
            c0, F0 = self.terms[d]
            c, F = np.concatenate([c0, c]), np.concatenate([F0, F])
        self.terms[d] = (c, F.reshape(c.size, d, self.n))

    # constructors
    @classmethod
    def constant(cls, n: int, c: float) -> "GaussPoly":
        return cls(n, {0: ([c], np.zeros((1, 0, n)))}) if c != 0 else cls(n)

    @classmethod
    def linear(cls, v) -> "GaussPoly":
        v = np.asarray(v, float)
        return cls(v.size, {1: ([1.0], v[None, None, :])})

    @classmethod
    def quadratic(cls, A, tol: float = 1e-14) -> "GaussPoly":
        """``l^T A l`` for symmetric ``A``, stored through its eigendecomposition."""
        A = np.asarray(A, float)
        A = 0.5 * (A + A.T)
        w, U = np.linalg.eigh(A)
        keep = np.abs(w) > tol * max(1.0, np.abs(w).max(initial=0.0))
        w, U = w[keep], U[:, keep]
        F = np.stack([U.T, U.T], axis=1)
        return cls(A.shape[0], {2: (w, F)})

    @classmethod
    def centered_quadratic(cls, A, C) -> "GaussPoly":
        """``l^T A l - tr(A C)``, mean zero under N(0, C)."""
        return cls.quadratic(A) + cls.constant(np.shape(A)[0], -float(np.trace(np.asarray(A) @ C)))

    @property
    def degree(self) -> int:
        return max(self.terms, default=0)

    # algebra
    def __add__(self, other: "GaussPoly") -> "GaussPoly":
        out = GaussPoly(self.n, self.terms)
        for d, (c, F) in other.terms.items():
            out._add(d, c, F)
        return out

    def __neg__(self) -> "GaussPoly":
        return self.scale(-1.0)

    def __sub__(self, other: "GaussPoly") -> "GaussPoly":
        return self + (-other)

    def scale(self, a: float) -> "GaussPoly":
        return GaussPoly(self.n, {d: (a * c, F) for d, (c, F) in self.terms.items()})

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(float(other))
        out = GaussPoly(self.n)
        for d1, (c1, F1) in self.terms.items():
            for d2, (c2, F2) in other.terms.items():
                c = np.outer(c1, c2).ravel()
                T1, T2 = c1.size, c2.size
                A = np.repeat(F1, T2, axis=0)
                B = np.tile(F2, (T1, 1, 1))
                out._add(d1 + d2, c, np.concatenate([A, B], axis=1))
        return out

    __rmul__ = __mul__

    def derivative(self, w) -> "GaussPoly":
        """Directional derivative along the constant vector ``w``."""
        w = np.asarray(w, float)
        out = GaussPoly(self.n)
        for d, (c, F) in self.terms.items():
            if d == 0:
                continue
            dots = F @ w  # (T, d)
            for j in range(d):
                rest = np.delete(F, j, axis=1)
                out._add(d - 1, c * dots[:, j], rest)
        return out

    # evaluation
    def __call__(self, l: np.ndarray) -> np.ndarray:
        l = np.atleast_2d(np.asarray(l, float))
        total = np.zeros(l.shape[0])
        for d, (c, F) in self.terms.items():
            if d == 0:
                total += c.sum()
                continue
            proj = np.einsum("mi,tdi->mtd", l, F)
            total += np.prod(proj, axis=2) @ c
        return total

    def expectation(self, C: np.ndarray) -> float:
        total = 0.0
        for d, (c, F) in self.terms.items():
            if d % 2:
                continue
            if d > MAX_DEGREE:
                raise UnsupportedDegree(f"Gaussian moments of degree {d} are not supported (max {MAX_DEGREE})")
            if d == 0:
                total += c.sum()
                continue
            G = np.einsum("tai,ij,tbj->tab", F, C, F)
            if d == 2:
                total += c @ G[:, 0, 1]
            else:
                total += c @ (G[:, 0, 1] * G[:, 2, 3] + G[:, 0, 2] * G[:, 1, 3] + G[:, 0, 3] * G[:, 1, 2])
        return float(total)

    def simplify(self) -> "GaussPoly":
        """Merge constant and linear terms and drop zero coefficients."""
        out = GaussPoly(self.n)
        for d, (c, F) in self.terms.items():
            if d == 0:
                s = c.sum()
                if s != 0:
                    out._add(0, np.array([s]), np.zeros((1, 0, self.n)))
                continue
            if d == 1:
                v = c @ F[:, 0, :]
                if np.any(v != 0):
                    out._add(1, np.array([1.0]), v[None, None, :])
                continue
            keep = c != 0
            out._add(d, c[keep], F[keep])
        return out


def product_moment(polys, C) -> float:
    """E[prod(polys)] under N(0, C)."""
    acc = polys[0]
    for p in polys[1:]:
        acc = acc * p
    return acc.expectation(C)

