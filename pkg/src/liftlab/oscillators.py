"""Event Chain Monte Carlo and randomized HMC on a ring of oscillators.

ECMC moves one coordinate at unit speed; the active index hops to a neighbour
at rate ``beta * (W'(y_nb - y_x))_-``.  For a linear ``W'`` the hazards are the
same ramps as for the self-repellent walk and are inverted in closed form;
otherwise first arrivals come from Poisson thinning under a piecewise-constant
envelope whose lookahead doubles on survival.

HMC runs Hamiltonian dynamics between full velocity refreshes at rate gamma,
either exactly (harmonic chain, per-mode rotation) or by velocity Verlet.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import DomainError, build_spectral_table
from .rng import UniformStream
from .srw import (
    EVENT_DTYPE,
    STRIDE_UNIFORMS,
    EventKind,
    EventRecord,
    LiftedState,
    Observer,
    RefreshKind,
    TrajectoryRecord,
    clock_time,
    run_kernel,
)


class UnsupportedError(ValueError):
    pass


class EnvelopeViolation(RuntimeError):
    """The true event rate exceeded the thinning bound."""


@dataclass(frozen=True)
class InteractionPotential:
    """Even pair interaction W with derivative W_prime.

    ``slope`` is set when ``W'(y) = slope * y`` (exact clock inversion and
    exact HMC flow apply).  ``envelope(rate, s0, s1)`` must bound ``rate`` on
    ``[s0, s1]``; the default takes the larger endpoint value, which is valid
    whenever the rate is monotone along the stretch (convex W).
    """

    name: str
    W: Callable
    W_prime: Callable
    slope: float | None = None
    envelope: Callable | None = None

    def bound(self, rate: Callable[[float], float], s0: float, s1: float) -> float:
        if self.envelope is not None:
            return self.envelope(rate, s0, s1)
        return max(rate(s0), rate(s1))

    def check(self, grid: np.ndarray | None = None) -> None:
        y = np.linspace(-5, 5, 1001) if grid is None else np.asarray(grid)
        w, wm = self.W(y), self.W(-y)
        if not np.allclose(w, wm, rtol=0, atol=1e-10):
            raise DomainError(f"{self.name}: W is not even")
        if np.any(w < 0):
            raise DomainError(f"{self.name}: W takes negative values")

    @property
    def is_harmonic(self) -> bool:
        return self.slope is not None


def harmonic(kappa: float = 1.0) -> InteractionPotential:
    """W(y) = kappa y^2 / 2.  ``kappa = 1`` reproduces the self-repellent walk rates."""
    return InteractionPotential(f"harmonic({kappa:g})", lambda y: 0.5 * kappa * np.square(y),
                                lambda y: kappa * y, slope=float(kappa))


def quartic() -> InteractionPotential:
    """W(y) = y^4 / 4."""
    return InteractionPotential("quartic", lambda y: 0.25 * np.power(y, 4), lambda y: np.power(y, 3))


def anharmonic(c4: float = 1.0) -> InteractionPotential:
    """W(y) = y^2/2 + c4 y^4/4 (convex, so endpoint envelopes are valid)."""
    return InteractionPotential(f"anharmonic({c4:g})", lambda y: 0.5 * np.square(y) + 0.25 * c4 * np.power(y, 4),
                                lambda y: y + c4 * np.power(y, 3))


POTENTIALS = {"harmonic": harmonic, "quartic": quartic, "anharmonic": anharmonic}


def potential_from_tag(tag: str) -> InteractionPotential:
    """Parse ``harmonic``, ``harmonic(2)``, ``quartic``, ``anharmonic(0.5)``."""
    tag = tag.strip()
    name, _, arg = tag.partition("(")
    if name not in POTENTIALS:
        raise DomainError(f"unknown interaction potential {tag!r}")
    if arg:
        return POTENTIALS[name](float(arg.rstrip(")")))
    return POTENTIALS[name]()


# --- Event Chain Monte Carlo --------------------------------------------------

@dataclass
class EcmcState:
    Y: np.ndarray
    t: float = 0.0
    x: int = 0
    beta: float = 1.0
    refresh: RefreshKind = field(default_factory=RefreshKind.none)

    def __post_init__(self):
        self.Y = np.array(self.Y, dtype=float)
        self.x = int(self.x) % self.n
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def configuration(self) -> np.ndarray:
        return self.Y - self.Y.mean()

    def copy(self) -> "EcmcState":
        return EcmcState(self.Y.copy(), self.t, self.x, self.beta, self.refresh)

    @classmethod
    def from_lifted(cls, s: LiftedState, beta: float = 1.0, refresh: RefreshKind | None = None) -> "EcmcState":
        return cls(s.L.copy(), s.t, s.x, beta, refresh or RefreshKind.none())


def thinning_first_arrival(rate: Callable[[float], float], potential: InteractionPotential, e: float,
                           stream: UniformStream, lookahead: float = 1.0,
                           log: list | None = None) -> float:
    """First arrival of a clock with hazard ``rate(s)`` by thinning.

    ``e`` is the first Exp(1) variate; the residual of an unused exponential is
    carried across window boundaries.  Each proposal is accepted with
    probability ``rate/bound``; ``log`` (if given) collects those ratios.
    """
    s, width = 0.0, lookahead
    while True:
        M = potential.bound(rate, s, s + width)
        if M > 0 and e <= M * width:
            s_prop = s + e / M
            r = rate(s_prop)
            if r > M * (1 + 1e-9) + 1e-300:
                raise EnvelopeViolation(
                    f"{potential.name}: rate {r:.6g} exceeds bound {M:.6g} on interval [{s:.6g}, {s + width:.6g}]")
            if log is not None:
                log.append(r / M)
            if stream.uniform() * M < r:
                return s_prop
            width = s + width - s_prop
            s = s_prop
            e = stream.exponential()
        else:
            e -= M * width
            s += width
            width *= 2.0


def ecmc_step(state: EcmcState, potential: InteractionPotential, rng_stream: UniformStream,
              thinning_log: list | None = None) -> tuple[EcmcState, EventRecord]:
    """Advance to and apply the next ECMC event, in place.

    Uniform usage matches :func:`liftlab.srw.step` (plus, minus, refresh,
    destination); thinning draws any further variates after those four.
    """
    n, x, Y, beta = state.n, state.x, state.Y, state.beta
    xp, xm = (x + 1) % n, (x - 1) % n
    u = rng_stream.take(STRIDE_UNIFORMS)
    e_plus, e_minus = -math.log1p(-u[0]), -math.log1p(-u[1])
    d_plus = Y[xp] - Y[x]   # shrinks at unit rate
    d_minus = Y[xm] - Y[x]  # shrinks at unit rate
    if potential.is_harmonic:
        scale = beta * potential.slope
        tp = clock_time(-d_plus, e_plus / scale)
        tm = clock_time(-d_minus, e_minus / scale)
    else:
        Wp = potential.W_prime

        def rate_plus(s):
            return beta * max(-float(Wp(d_plus - s)), 0.0)

        def rate_minus(s):
            return beta * max(-float(Wp(d_minus - s)), 0.0)

        tp = thinning_first_arrival(rate_plus, potential, e_plus, rng_stream, log=thinning_log)
        tm = thinning_first_arrival(rate_minus, potential, e_minus, rng_stream, log=thinning_log)
    refresh = state.refresh
    tr = -math.log1p(-u[2]) / refresh.gamma if refresh.active else math.inf
    if tp <= tm and tp <= tr:
        kind, tau, new_x = EventKind.JUMP_RIGHT, tp, xp
    elif tm <= tr:
        kind, tau, new_x = EventKind.JUMP_LEFT, tm, xm
    else:
        kind, tau = EventKind.REFRESH, tr
        if refresh.variant == "uniform":
            new_x = min(int(u[3] * n), n - 1)
        else:
            new_x = xp if u[3] < 0.5 else xm
    Y[x] += tau
    state.t += tau
    state.x = new_x
    return state, EventRecord(state.t, kind, new_x)


def ecmc_simulate(state: EcmcState, potential: InteractionPotential, horizon: float, observer: Observer,
                  rng_stream: UniformStream, *, log_events: int = 0) -> TrajectoryRecord:
    """Run ECMC to ``horizon`` with grid emission; linear forces use the compiled engine."""
    if potential.is_harmonic:
        lifted = LiftedState(state.Y, state.t, state.x)
        rec = run_kernel(lifted, horizon, state.refresh, observer, rng_stream,
                         rate_scale=state.beta * potential.slope, log_events=log_events)
        state.Y = lifted.L + lifted.offset_correction
        state.t, state.x = lifted.t, lifted.x
        return rec
    n = state.n
    n_grid = int(math.floor((horizon - observer.t0) / observer.dt + 1e-9)) + 1 if observer.dt > 0 else 0
    proj = np.asarray(observer.projections, dtype=float).reshape(-1, n)
    out_t, out_x = np.zeros(n_grid), np.zeros(n_grid, dtype=np.int64)
    out_obs, out_U = np.zeros((n_grid, proj.shape[0])), np.zeros(n_grid)
    events = []
    j, n_events = 0, 0
    while True:
        before = state.copy()
        state, ev = ecmc_step(state, potential, rng_stream)
        t_end = min(ev.time, horizon)
        while j < n_grid and observer.t0 + j * observer.dt <= t_end:
            g = observer.t0 + j * observer.dt
            Y = before.Y.copy()
            Y[before.x] += g - before.t
            y = Y - Y.mean()
            out_t[j], out_x[j] = g, before.x
            out_obs[j] = proj @ y
            out_U[j] = float(np.sum(potential.W(np.roll(y, -1) - y)))
            j += 1
        if ev.time > horizon:
            state = before
            state.Y[state.x] += horizon - state.t
            state.t = horizon
            break
        n_events += 1
        if len(events) < log_events:
            events.append((ev.time, ev.kind.value, ev.new_position))
    ev_arr = np.array(events, dtype=EVENT_DTYPE) if log_events else None
    final = LiftedState(state.Y, state.t, state.x)
    return TrajectoryRecord(out_t[:j], out_x[:j], out_obs[:j], out_U[:j], observer.column_names(), n,
                            n_events, final, ev_arr)


# --- randomized Hamiltonian Monte Carlo ---------------------------------------

def chain_force(q: np.ndarray, potential: InteractionPotential) -> np.ndarray:
    """-grad U for U(q) = sum_i W(q[i+1] - q[i]); sums to zero."""
    d = np.roll(q, -1, axis=-1) - q
    wp = potential.W_prime(d)
    return wp - np.roll(wp, 1, axis=-1)


def chain_energy(q: np.ndarray, potential: InteractionPotential) -> float:
    return float(np.sum(potential.W(np.roll(q, -1) - q)))


@dataclass
class HmcState:
    q: np.ndarray
    v: np.ndarray
    gamma: float
    t: float = 0.0
    beta: float = 1.0
    potential: InteractionPotential = field(default_factory=harmonic)
    work_counter: int = 0
    partial_steps: int = 0
    refreshes: int = 0
    _force: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.v = np.array(self.v, dtype=float)
        tol = 1e-9 * self.n * max(1.0, float(np.abs(self.q).max()), float(np.abs(self.v).max()))
        if abs(self.q.sum()) > tol or abs(self.v.sum()) > tol:
            raise DomainError("HMC positions and velocities must be mean-zero")
        if not self.gamma > 0:
            raise DomainError(f"refresh rate must be positive, got {self.gamma}")
        if self._force is None:
            self._force = chain_force(self.q, self.potential)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def energy(self) -> float:
        return chain_energy(self.q, self.potential) + 0.5 * float(self.v @ self.v)

    def copy(self) -> "HmcState":
        return HmcState(self.q.copy(), self.v.copy(), self.gamma, self.t, self.beta, self.potential,
                        self.work_counter, self.partial_steps, self.refreshes, self._force.copy())

    @classmethod
    def stationary(cls, n: int, gamma: float, rng: np.random.Generator, beta: float = 1.0) -> "HmcState":
        """Harmonic-chain draw from mu_beta x N(0, beta^{-1} I_S)."""
        table = build_spectral_table(n)
        m = table.modes[1:]
        sd = (beta * table.eigenvalues[1:]) ** -0.5
        q = (sd * rng.standard_normal(n - 1)) @ m
        v = (beta ** -0.5 * rng.standard_normal(n - 1)) @ m
        return cls(q, v, gamma, beta=beta)


def hmc_exact_flow(state: HmcState, dt: float) -> HmcState:
    """Exact harmonic-chain flow: each mode rotates at omega_k = sqrt(kappa lambda_k)."""
    if not state.potential.is_harmonic:
        raise UnsupportedError(f"exact Hamiltonian flow needs a harmonic chain, got {state.potential.name}")
    if dt < 0:
        raise DomainError(f"negative flow time {dt}")
    if dt == 0:
        return state
    table = build_spectral_table(state.n)
    m = table.modes[1:]
    omega = np.sqrt(state.potential.slope * table.eigenvalues[1:])
    qk, vk = m @ state.q, m @ state.v
    c, s = np.cos(omega * dt), np.sin(omega * dt)
    state.q = (qk * c + vk / omega * s) @ m
    state.v = (-qk * omega * s + vk * c) @ m
    state.t += dt
    state._force = chain_force(state.q, state.potential)
    return state


def hmc_verlet_flow(state: HmcState, dt: float, step_size: float) -> HmcState:
    """Velocity Verlet for time ``dt``; one force evaluation per step.

    ``ceil(dt/step_size)`` steps are taken, the last one shortened when
    ``dt`` is not a multiple of the step size (counted in ``partial_steps``).
    """
    if not step_size > 0:
        raise DomainError(f"step size must be positive, got {step_size}")
    if dt < 0:
        raise DomainError(f"negative flow time {dt}")
    k = int(math.ceil(dt / step_size - 1e-9))
    if k == 0:
        return state
    last = dt - (k - 1) * step_size
    if abs(last - step_size) > 1e-9 * step_size:
        state.partial_steps += 1
    q, v, f = state.q, state.v, state._force
    pot = state.potential
    for i in range(k):
        h = step_size if i < k - 1 else last
        v = v + 0.5 * h * f
        q = q + h * v
        f = chain_force(q, pot)
        v = v + 0.5 * h * f
    state.q, state.v, state._force = q, v, f
    state.work_counter += k
    state.t += dt
    return state


def refresh_velocity(state: HmcState, rng: np.random.Generator) -> HmcState:
    """Fresh v ~ N(0, beta^{-1} I_S), drawn in mode coordinates (mode 0 absent)."""
    m = build_spectral_table(state.n).modes[1:]
    state.v = (state.beta ** -0.5 * rng.standard_normal(state.n - 1)) @ m
    state.refreshes += 1
    return state


def hmc_step(state: HmcState, flow: str | tuple, rng: np.random.Generator) -> HmcState:
    """Flow for an Exp(gamma) time, then refresh the velocity.

    ``flow`` is ``"exact"`` or ``("verlet", step_size)``.
    """
    T = rng.exponential(1.0 / state.gamma)
    if flow == "exact":
        hmc_exact_flow(state, T)
    else:
        _, eta = flow
        hmc_verlet_flow(state, T, eta)
    return refresh_velocity(state, rng)
