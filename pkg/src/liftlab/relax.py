"""Relaxation-time estimation from correlation decay, and power-law fits over n.

A relaxation estimate is the decay rate of ``rho(t) = E[f(X_t) f(X_0)] / E[f^2]``
for one centered observable.  It lower-bounds the worst case over all of
``L^2_0``, since only one direction is probed.

Correlations are assembled from groups (replicas or path chunks) as
``rho = sum_g C_g / sum_g V_g``.  Standard errors come from a leave-one-group-out
jackknife with the fit window frozen at its full-data position.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .gaussian import GaussianTarget, OuSchedule, sample_mu_array
from .lattice import DomainError, build_spectral_table, stationary_covariance
from .oscillators import (
    EcmcState,
    HmcState,
    chain_energy,
    ecmc_simulate,
    hmc_exact_flow,
    hmc_verlet_flow,
    potential_from_tag,
    refresh_velocity,
)
from .rng import UniformStream, cell_seed, generator
from .srw import LiftedState, Observer, RefreshKind, simulate

RHO_HI = 0.8
RHO_LO = 0.1
E_INV = 1.0 - math.exp(-1.0)


class EstimationFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --- observables ----------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Centered observable on (profile, position).

    ``kind`` is one of ``mode``, ``potential``, ``position``, ``linear``,
    ``quadratic``.  Linear forms are projected onto the mean-zero subspace;
    quadratic forms are centered by ``tr(A C)``.
    """

    kind: str
    k: int = 1
    j: int = 0
    name: str = ""
    vector: tuple | None = None
    matrix: tuple | None = None

    @classmethod
    def fourier_mode(cls, k: int) -> "Observable":
        return cls("mode", k=k)

    @classmethod
    def potential(cls) -> "Observable":
        return cls("potential")

    @classmethod
    def position_indicator(cls, j: int) -> "Observable":
        return cls("position", j=j)

    @classmethod
    def custom_linear(cls, name: str, v) -> "Observable":
        return cls("linear", name=name, vector=tuple(float(a) for a in v))

    @classmethod
    def custom_quadratic(cls, name: str, A) -> "Observable":
        A = np.asarray(A, float)
        return cls("quadratic", name=name, matrix=tuple(map(tuple, 0.5 * (A + A.T))))

    @classmethod
    def parse(cls, tag: str) -> "Observable":
        """``mode(k)``, ``potential``, ``position(j)``."""
        name, _, arg = tag.strip().partition("(")
        arg = arg.rstrip(")")
        if name == "mode":
            return cls.fourier_mode(int(arg or 1))
        if name == "potential":
            return cls.potential()
        if name == "position":
            return cls.position_indicator(int(arg or 0))
        raise DomainError(f"unknown observable {tag!r}")

    @property
    def tag(self) -> str:
        if self.kind == "mode":
            return f"mode({self.k})"
        if self.kind == "position":
            return f"position({self.j})"
        if self.kind == "potential":
            return "potential"
        return self.name or self.kind

    def projections(self, n: int) -> np.ndarray:
        """Linear functionals of the profile the path generator must record."""
        if self.kind == "mode":
            if not 1 <= self.k < n:
                raise DomainError(f"mode index {self.k} outside 1..{n - 1}")
            return build_spectral_table(n).modes[[self.k]]
        if self.kind == "linear":
            v = np.asarray(self.vector, float)
            if v.size != n:
                raise DomainError(f"linear observable has length {v.size}, lattice has {n}")
            return (v - v.mean())[None, :]
        if self.kind == "quadratic":
            return np.eye(n)
        return np.zeros((0, n))

    def evaluate(self, obs: np.ndarray, potential: np.ndarray, x: np.ndarray | None, n: int) -> np.ndarray:
        if self.kind in ("mode", "linear"):
            return obs[:, 0]
        if self.kind == "potential":
            return potential - 0.5 * (n - 1)
        if self.kind == "position":
            if x is None:
                raise DomainError("position observable needs a sampler with an active site")
            return (x == self.j) - 1.0 / n
        A = np.asarray(self.matrix, float)
        C = stationary_covariance(build_spectral_table(n))
        return np.einsum("mi,ij,mj->m", obs, A, obs) - float(np.trace(A @ C))


# --- sampler configurations -----------------------------------------------------

STARTS = ("cold", "stationary")
SAMPLER_KINDS = ("ou", "srw", "srw-uniform", "srw-neighbor", "ecmc", "hmc-exact", "hmc-verlet")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str
    n: int
    gamma: float = 0.0
    potential: str = "harmonic"
    eta: float | None = None
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise DomainError(f"unknown sampler {self.kind!r}")
        if self.n < 3:
            raise DomainError(f"n must be at least 3, got {self.n}")
        if self.kind in ("srw-uniform", "srw-neighbor", "hmc-exact", "hmc-verlet") and not self.gamma > 0:
            raise DomainError(f"{self.kind} needs a positive refresh rate")
        if self.kind == "srw" and self.gamma != 0:
            raise DomainError("plain srw has no refresh; use srw-uniform or srw-neighbor")
        if self.gamma < 0:
            raise DomainError(f"negative refresh rate {self.gamma}")

    @classmethod
    def parse(cls, tag: str, n: int, gamma: float = 0.0, beta: float = 1.0) -> "SamplerConfig":
        """``ou``, ``srw``, ``srw-uniform``, ``srw-neighbor``, ``ecmc(W)``, ``hmc-exact``, ``hmc-verlet(eta)``."""
        tag = tag.strip()
        name, _, arg = tag.partition("(")
        arg = arg[:-1] if arg.endswith(")") else arg
        if name == "ecmc":
            pot = arg or "harmonic"
            potential_from_tag(pot)
            return cls("ecmc", n, gamma, potential=pot, beta=beta)
        if name == "hmc-verlet":
            return cls(name, n, gamma, eta=float(arg) if arg else None, beta=beta)
        if arg:
            raise DomainError(f"sampler {name!r} takes no argument")
        return cls(name, n, gamma, beta=beta)

    @property
    def tag(self) -> str:
        if self.kind == "ecmc":
            return f"ecmc({self.potential})"
        if self.kind == "hmc-verlet" and self.eta is not None:
            return f"hmc-verlet({self.eta:g})"
        return self.kind

    @property
    def step_size(self) -> float:
        return self.eta if self.eta is not None else self.n ** -0.25

    @property
    def reversible(self) -> bool:
        return self.kind == "ou"

    @property
    def refresh(self) -> RefreshKind:
        if self.kind == "srw-neighbor":
            return RefreshKind.neighbor(self.gamma)
        if self.kind == "srw-uniform" or (self.kind == "ecmc" and self.gamma > 0):
            return RefreshKind.uniform(self.gamma)
        return RefreshKind.none()

    def anticipated_t_rel(self) -> float:
        """Order-of-magnitude relaxation time used to size horizons and lag grids."""
        n = self.n
        if self.kind == "ou":
            return 2.0 * n / build_spectral_table(n).eigenvalues[1]
        if self.kind in ("srw", "srw-uniform", "ecmc"):
            return n * n / 8.0
        if self.kind == "srw-neighbor":
            return n ** 2.5 / 16.0
        return 2.0 / self.gamma


def gamma_preset(n: int, variant: RefreshKind | str, c: float = 1.0) -> float:
    """c/n for uniform refresh, c/n^{3/2} for the neighbour walk."""
    name = variant.variant if isinstance(variant, RefreshKind) else str(variant)
    if name == "uniform":
        return c / n
    if name == "neighbor":
        return c / n ** 1.5
    raise DomainError(f"no refresh-rate preset for variant {name!r}")


def lower_bound_value(n: int) -> float:
    """(1 - e^{-1}) / (2 pi) * n^{3/2}."""
    if n < 3:
        raise DomainError(f"n must be at least 3, got {n}")
    return E_INV / (2.0 * math.pi) * n ** 1.5


def lower_bound_from_collapse(t_rel_collapse: float) -> float:
    """General form (1 - e^{-1}) / sqrt(2) * sqrt(t_rel of the collapse)."""
    return E_INV / math.sqrt(2.0) * math.sqrt(t_rel_collapse)


# --- path generation ------------------------------------------------------------

@dataclass
class PathBatch:
    """Observable series on a common grid, one row per replica."""

    t: np.ndarray
    values: np.ndarray
    work: float = 0.0  # events (ECMC/SRW) or gradient evaluations (HMC), summed over replicas
    time: float = 0.0  # simulated time, summed over replicas


def replica_seeds(seed: int, config: SamplerConfig, replicas: int) -> list[int]:
    return [cell_seed(seed, config.tag, config.n, config.gamma, r) for r in range(replicas)]


def sample_paths(config: SamplerConfig, observable: Observable, replicas: int, horizon: float, dt: float,
                 seed: int) -> PathBatch:
    """Stationary-start paths of ``observable`` on the grid ``0, dt, ..., <= horizon``."""
    proj = observable.projections(config.n)
    rows, work, t = [], 0.0, None
    for s in replica_seeds(seed, config, replicas):
        p = raw_path(config, proj, horizon, dt, s)
        rows.append(observable.evaluate(p.obs, p.potential, p.x, config.n))
        work += p.work
        t = p.t
    return PathBatch(t, np.array(rows), work, replicas * horizon)


@dataclass
class RawPath:
    t: np.ndarray
    obs: np.ndarray  # (M, K) projections of the profile
    potential: np.ndarray
    x: np.ndarray | None  # active site, for samplers that have one
    work: float  # events or gradient evaluations
    events: np.ndarray | None = None  # event log (SRW and ECMC), when requested


def raw_path(cfg: SamplerConfig, proj: np.ndarray, horizon: float, dt: float, seed: int,
             log_events: int = 0, start: str = "stationary") -> RawPath:
    """One path recording ``proj @ l`` and ``U`` on the grid ``k dt <= horizon``.

    ``start="cold"`` begins from the flat profile (zero velocity field for the
    oscillator chains, fresh velocities for HMC) at site 0 instead of a
    stationary draw.
    """
    if not horizon > 0 or not dt > 0:
        raise DomainError("horizon and grid spacing must be positive")
    if start not in STARTS:
        raise DomainError(f"unknown start {start!r}; expected one of {', '.join(STARTS)}")
    cold = start == "cold"
    n = cfg.n
    proj = np.asarray(proj, float).reshape(-1, n)
    m = int(math.floor(horizon / dt + 1e-9)) + 1
    t = np.arange(m) * dt
    if cfg.kind == "ou":
        obs, U = _ou_path(cfg, proj, dt, m, seed, cold)
        return RawPath(t, obs, U, None, 0.0)
    if cfg.kind in ("srw", "srw-uniform", "srw-neighbor"):
        state = LiftedState.cold(n) if cold else LiftedState.stationary(n, generator(seed, 0))
        rec = simulate(state, horizon, cfg.refresh, Observer(dt, proj), UniformStream(seed, 1),
                       log_events=log_events)
        return RawPath(t, rec.obs[:m], rec.potential[:m], rec.x[:m], float(rec.n_events), rec.events)
    if cfg.kind == "ecmc":
        pot = potential_from_tag(cfg.potential)
        draw = sample_mu_array(GaussianTarget.for_size(n), generator(seed, 0))
        stiffness = cfg.beta * (pot.slope if pot.is_harmonic else 1.0)
        state = EcmcState(0.0 * draw if cold else draw / math.sqrt(stiffness), beta=cfg.beta, refresh=cfg.refresh)
        stream = UniformStream(seed, 1)
        if not pot.is_harmonic and not cold:
            # no exact stationary sampler: burn in from the harmonic approximation
            burn = 10.0 * cfg.anticipated_t_rel()
            ecmc_simulate(state, pot, burn, Observer(burn, np.zeros((0, n))), stream)
            state.t = 0.0
        rec = ecmc_simulate(state, pot, horizon, Observer(dt, proj), stream, log_events=log_events)
        return RawPath(t, rec.obs[:m], rec.potential[:m], rec.x[:m], float(rec.n_events), rec.events)
    obs, U, work = _hmc_path(cfg, proj, dt, m, seed, cold)
    return RawPath(t, obs, U, None, work)


def _ou_path(cfg, proj, dt, m, s, cold=False):
    n = cfg.n
    table = build_spectral_table(n)
    rng = generator(s, 0)
    r = OuSchedule.SLOWED.rates(table)
    sd = table.eigenvalues[1:] ** -0.5
    a = np.exp(-r * dt)
    xi = rng.standard_normal((m, n - 1))
    drive = xi * (sd * np.sqrt(-np.expm1(-2.0 * r * dt)))
    drive[0] = 0.0 if cold else xi[0] * sd
    c = np.empty_like(drive)
    for k in range(n - 1):
        c[:, k] = signal.lfilter([1.0], [1.0, -a[k]], drive[:, k])
    obs = c @ (table.modes[1:] @ proj.T)
    U = 0.5 * (c * c) @ table.eigenvalues[1:]
    return obs, U


def _hmc_path(cfg, proj, dt, m, s, cold=False):
    """Refresh-segment loop; grid values inside a segment come from the exact rotation
    (exact flow) or from the first Verlet step ending at or after the grid time (lag < eta)."""
    n = cfg.n
    rng = generator(s, 0)
    state = HmcState.stationary(n, cfg.gamma, rng, cfg.beta)
    if cold:
        state = HmcState(np.zeros(n), state.v, cfg.gamma, beta=cfg.beta)
    pot = state.potential
    exact = cfg.kind == "hmc-exact"
    out_obs = np.zeros((m, proj.shape[0]))
    out_U = np.zeros(m)
    horizon = (m - 1) * dt
    j = 0

    def record(q, upto):
        nonlocal j
        while j < m and j * dt <= upto:
            out_obs[j] = proj @ q
            out_U[j] = chain_energy(q, pot)
            j += 1

    record(state.q, 0.0)
    if exact:
        table = build_spectral_table(n)
        modes = table.modes[1:]
        omega = np.sqrt(pot.slope * table.eigenvalues[1:])
    while state.t < horizon and j < m:
        T = rng.exponential(1.0 / cfg.gamma)
        t0 = state.t
        if exact:
            g = np.arange(j, m) * dt
            g = g[g <= t0 + T]
            if g.size:
                qk, vk = modes @ state.q, modes @ state.v
                tau = (g - t0)[:, None]
                qg = (qk * np.cos(omega * tau) + vk / omega * np.sin(omega * tau)) @ modes
                out_obs[j:j + g.size] = qg @ proj.T
                out_U[j:j + g.size] = pot.W(np.roll(qg, -1, axis=1) - qg).sum(axis=1)
                j += g.size
            hmc_exact_flow(state, T)
        else:
            eta = cfg.step_size
            k = int(math.ceil(T / eta - 1e-9))
            for i in range(k):
                h = eta if i < k - 1 else T - (k - 1) * eta
                hmc_verlet_flow(state, h, eta)
                record(state.q, state.t)
                if j >= m:
                    break
            state.t = t0 + T
        refresh_velocity(state, rng)
    return out_obs, out_U, float(state.work_counter)


# --- correlation estimators -----------------------------------------------------

@dataclass
class CorrelationGroups:
    lags: np.ndarray
    C: np.ndarray  # (G, K)
    V: np.ndarray  # (G,)

    def rho(self, drop: int | None = None) -> np.ndarray:
        if drop is None:
            return self.C.sum(axis=0) / self.V.sum()
        return (self.C.sum(axis=0) - self.C[drop]) / (self.V.sum() - self.V[drop])


def ensemble_groups(batch: PathBatch, groups: int = 20) -> CorrelationGroups:
    """E[f(X_t) f(X_0)] over replicas, time origin 0."""
    F = batch.values
    groups = max(2, min(groups, F.shape[0]))
    idx = np.array_split(np.arange(F.shape[0]), groups)
    C = np.array([(F[i] * F[i, :1]).sum(axis=0) for i in idx])
    V = np.array([(F[i, 0] ** 2).sum() for i in idx])
    return CorrelationGroups(batch.t - batch.t[0], C, V)


def autocorr_groups(batch: PathBatch, max_lag: int, chunks_per_path: int = 1) -> CorrelationGroups:
    """Time-averaged autocovariance per chunk via FFT; observables are centered analytically."""
    F = batch.values
    R, M = F.shape
    L = M // chunks_per_path
    if max_lag >= L:
        raise DomainError(f"max lag {max_lag} does not fit in chunks of {L} samples")
    X = F[:, : L * chunks_per_path].reshape(R * chunks_per_path, L)
    nfft = 1 << int(math.ceil(math.log2(2 * L)))
    fx = np.fft.rfft(X, nfft, axis=1)
    ac = np.fft.irfft(fx * fx.conj(), nfft, axis=1)[:, : max_lag + 1]
    C = ac / (L - np.arange(max_lag + 1))
    V = (X * X).mean(axis=1)
    dt = batch.t[1] - batch.t[0]
    return CorrelationGroups(np.arange(max_lag + 1) * dt, C, V)


# --- fitting --------------------------------------------------------------------

@dataclass
class FitResult:
    rate: float
    intercept: float
    window: tuple[float, float]
    points: np.ndarray  # indices used


def fit_window(rho: np.ndarray) -> tuple[int, int]:
    """Index range where the decay envelope of |rho| lies inside [RHO_LO, RHO_HI]."""
    env = np.maximum.accumulate(np.abs(rho)[::-1])[::-1]
    inside = np.nonzero(env <= RHO_HI)[0]
    if inside.size == 0:
        return 0, -1
    lo = int(inside[0])
    below = np.nonzero(env < RHO_LO)[0]
    hi = int(below[0]) - 1 if below.size else rho.size - 1
    return lo, hi


def envelope_points(rho: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Local maxima of |rho| in [lo, hi] that also dominate every later value."""
    a = np.abs(rho)
    later = np.append(np.maximum.accumulate(a[::-1])[::-1][1:], 0.0)
    idx = np.arange(lo, hi + 1)
    left = np.where(idx > 0, a[np.maximum(idx - 1, 0)], -np.inf)
    right = np.where(idx + 1 < a.size, a[np.minimum(idx + 1, a.size - 1)], -np.inf)
    keep = (a[idx] >= left) & (a[idx] >= right) & (a[idx] >= later[idx])
    return idx[keep]


def select_points(rho: np.ndarray, oscillation_aware: bool) -> tuple[np.ndarray, tuple[int, int]]:
    lo, hi = fit_window(rho)
    pts = np.arange(lo, hi + 1)
    if oscillation_aware and hi >= lo:
        env = envelope_points(rho, lo, hi)
        if env.size >= 4:
            pts = env
    pts = pts[np.abs(rho[pts]) > 0]
    return pts, (lo, hi)


def _line_fit(lags, rho, pts):
    y = np.log(np.abs(rho[pts]))
    slope, intercept = np.polyfit(lags[pts], y, 1)
    return -float(slope), float(intercept)


def fit_relaxation(lags, rho, oscillation_aware: bool = False) -> FitResult:
    """Least-squares fit of log|rho| on the [0.1, 0.8] window."""
    lags, rho = np.asarray(lags, float), np.asarray(rho, float)
    pts, (lo, hi) = select_points(rho, oscillation_aware)
    if pts.size < 2:
        raise EstimationFailure(
            "correlation never enters [0.1, 0.8] cleanly",
            {"rho_head": rho[:8].tolist(), "rho_tail": rho[-4:].tolist(), "window": (lo, hi),
             "max_lag": float(lags[-1])})
    rate, b = _line_fit(lags, rho, pts)
    if not rate > 0:
        raise EstimationFailure("fitted correlation does not decay", {"rate": rate, "window": (lo, hi)})
    return FitResult(rate, b, (float(lags[lo]), float(lags[hi])), pts)


@dataclass
class RelaxationEstimate:
    rate: float
    stderr: float
    fit_window: tuple[float, float]
    method: str
    n: int
    gamma: float
    sampler: str
    observable: str = ""
    replicas: int = 0
    horizon: float = 0.0
    seed: int = 0
    work_rate: float = float("nan")
    failed: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def t_rel(self) -> float:
        return 1.0 / self.rate

    @property
    def t_rel_stderr(self) -> float:
        return self.stderr / self.rate ** 2


def estimate_from_groups(groups: CorrelationGroups, oscillation_aware: bool) -> tuple[FitResult, float]:
    fit = fit_relaxation(groups.lags, groups.rho(), oscillation_aware)
    G = groups.V.size
    reps = np.array([_line_fit(groups.lags, groups.rho(drop=g), fit.points)[0] for g in range(G)])
    se = math.sqrt((G - 1) / G * float(np.sum((reps - reps.mean()) ** 2)))
    return fit, se


def estimate_relaxation(config: SamplerConfig, observable: Observable, replicas: int, horizon: float,
                        seed: int, *, method: str = "StationaryAutocorr", dt: float | None = None,
                        chunks_per_path: int | None = None, max_lag: float | None = None,
                        check_horizon: bool = True) -> RelaxationEstimate:
    """Decay rate of the observable's correlation under ``config``.

    ``StationaryAutocorr`` cuts each stationary path into chunks and averages
    lagged products within chunks; ``EnsembleDecay`` correlates every replica's
    state at time t with its own start.
    """
    t_ant = config.anticipated_t_rel()
    if check_horizon and horizon < 10 * t_ant:
        raise DomainError(f"horizon {horizon:g} is below 10x the anticipated relaxation time {t_ant:g}")
    if replicas < 1:
        raise DomainError("need at least one replica")
    dt = dt or t_ant / 25.0
    batch = sample_paths(config, observable, replicas, horizon, dt, seed)
    if method == "EnsembleDecay":
        if replicas < 2:
            raise DomainError("ensemble decay needs at least two replicas")
        groups = ensemble_groups(batch)
    elif method == "StationaryAutocorr":
        M = batch.t.size
        if chunks_per_path is None:
            chunks_per_path = max(1, int(horizon // (50 * t_ant)))
            if replicas * chunks_per_path < 10:
                chunks_per_path = max(chunks_per_path, min(-(-10 // replicas), M // 8))
        k = int(round((max_lag or 10 * t_ant) / dt))
        k = max(2, min(k, M // chunks_per_path // 2))
        groups = autocorr_groups(batch, k, chunks_per_path)
    else:
        raise DomainError(f"unknown estimation method {method!r}")
    base = dict(method=method, n=config.n, gamma=config.gamma, sampler=config.tag, observable=observable.tag,
                replicas=replicas, horizon=horizon, seed=seed,
                work_rate=batch.work / batch.time if batch.time else float("nan"))
    fit, se = estimate_from_groups(groups, not config.reversible)
    return RelaxationEstimate(fit.rate, se, fit.window, **base)


def failed_estimate(config: SamplerConfig, observable: Observable, replicas, horizon, seed, method,
                    exc: EstimationFailure) -> RelaxationEstimate:
    return RelaxationEstimate(float("nan"), float("nan"), (float("nan"), float("nan")), method, config.n,
                              config.gamma, config.tag, observable.tag, replicas, horizon, seed, failed=True,
                              diagnostics=exc.diagnostics)


# --- power-law fits -------------------------------------------------------------

@dataclass
class PowerLawFit:
    exponent: float
    stderr: float
    prefactor: float
    chi2_per_dof: float


def power_law_fit(x, y, yerr=None) -> PowerLawFit:
    """Weighted least squares of log y on log x; stderr inflated by the reduced chi-square when it exceeds 1."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2:
        raise DomainError("need at least two points")
    X = np.column_stack([np.ones_like(x), np.log(x)])
    Y = np.log(y)
    dof = max(x.size - 2, 1)
    if yerr is None or np.any(np.asarray(yerr) <= 0) or not np.all(np.isfinite(yerr)):
        coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
        r = Y - X @ coef
        s2 = float(r @ r) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        chi2 = float("nan")
    else:
        s = np.asarray(yerr, float) / y
        w = 1.0 / s ** 2
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        coef = cov @ XtW @ Y
        r = Y - X @ coef
        chi2 = float(np.sum(w * r * r)) / dof
        cov = cov * max(1.0, chi2)
    return PowerLawFit(float(coef[1]), float(math.sqrt(cov[1, 1])), float(math.exp(coef[0])), chi2)


def scaling_fit(estimates: list[RelaxationEstimate]) -> tuple[float, float]:
    """Exponent (and stderr) of t_rel against n over at least four distinct sizes."""
    good = [e for e in estimates if not e.failed and np.isfinite(e.rate) and np.isfinite(e.stderr)]
    if len({e.n for e in good}) < 4:
        raise DomainError(f"scaling fit needs at least 4 distinct n, got {sorted({e.n for e in good})}")
    fit = power_law_fit([e.n for e in good], [e.t_rel for e in good], [e.t_rel_stderr for e in good])
    return fit.exponent, fit.stderr


# --- results table --------------------------------------------------------------

RESULT_COLUMNS = ("sampler", "n", "gamma", "observable", "method", "rate", "stderr", "lag_lo", "lag_hi",
                  "replicas", "horizon", "seed", "status")


def estimate_row(e: RelaxationEstimate) -> list:
    return [e.sampler, e.n, repr(float(e.gamma)), e.observable, e.method, repr(float(e.rate)),
            repr(float(e.stderr)), repr(float(e.fit_window[0])), repr(float(e.fit_window[1])), e.replicas,
            repr(float(e.horizon)), e.seed, "failed" if e.failed else "ok"]


def results_rows(estimates: list[RelaxationEstimate], exponent: tuple[float, float] | None = None) -> list[list]:
    """One row per estimate; an optional footer row carries the fitted exponent in rate/stderr."""
    rows = [estimate_row(e) for e in estimates]
    if exponent is not None and estimates:
        e0 = estimates[0]
        rows.append([e0.sampler, "", "", e0.observable, "scaling_fit", repr(float(exponent[0])),
                     repr(float(exponent[1])), "", "", "", "", "", "ok"])
    return rows


def write_results_csv(path: str | Path, estimates: list[RelaxationEstimate],
                      exponent: tuple[float, float] | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(results_rows(estimates, exponent))
    return path


def read_results_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))

