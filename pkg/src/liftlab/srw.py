"""Exact event-driven simulation of the self-repellent walk and its local time.

The state keeps the raw local time ``L`` (only ``L[x]`` moves during the flow),
so a step costs O(1) in ``n``; the mean-zero profile ``l = L - t/n`` is only
materialized when an observable is emitted.

While the walker sits at ``x`` the increment ``L[x+1] - L[x]`` falls and
``L[x] - L[x-1]`` grows at unit rate, so both jump hazards are ramps
``max(c + s, 0)`` in the elapsed time ``s``.  Their first arrivals are drawn by
inverting the integrated hazard in closed form (see :func:`clock_time`).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels as K
from .gaussian import GaussianTarget, sample_mu_array
from .lattice import DomainError, MeanZeroProfile, build_spectral_table
from .rng import UniformStream

RENORM_THRESHOLD = float(2 ** 20)
STRIDE_UNIFORMS = K.STRIDE


class EventKind(Enum):
    JUMP_RIGHT = K.JUMP_RIGHT
    JUMP_LEFT = K.JUMP_LEFT
    REFRESH = K.REFRESH


@dataclass(frozen=True)
class RefreshKind:
    """Position refresh applied at rate ``gamma``.

    ``variant`` is ``"none"``, ``"uniform"`` (resample x uniformly) or
    ``"neighbor"`` (x -> x +/- 1 with probability 1/2 each).
    """

    variant: str = "none"
    gamma: float = 0.0

    def __post_init__(self):
        if self.variant not in ("none", "uniform", "neighbor"):
            raise DomainError(f"unknown refresh variant {self.variant!r}")
        if self.variant != "none" and not self.gamma > 0:
            raise DomainError(f"refresh variant {self.variant!r} needs a positive rate, got {self.gamma}")

    @classmethod
    def none(cls) -> "RefreshKind":
        return cls("none", 0.0)

    @classmethod
    def uniform(cls, gamma: float) -> "RefreshKind":
        return cls("uniform", float(gamma))

    @classmethod
    def neighbor(cls, gamma: float) -> "RefreshKind":
        return cls("neighbor", float(gamma))

    @property
    def active(self) -> bool:
        return self.variant != "none"

    @property
    def code(self) -> int:
        return {"none": K.REFRESH_NONE, "uniform": K.REFRESH_UNIFORM, "neighbor": K.REFRESH_NEIGHBOR}[self.variant]


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind
    new_position: int


@dataclass
class LiftedState:
    """Raw local time, wall clock, walker position and banked renormalization offset.

    ``sum(L) + n * offset_correction == t`` up to rounding.
    """

    L: np.ndarray
    t: float = 0.0
    x: int = 0
    offset_correction: float = 0.0
    _since_check: int = field(default=0, repr=False)

    def __post_init__(self):
        self.L = np.array(self.L, dtype=float)
        self.x = int(self.x) % self.n

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @classmethod
    def cold(cls, n: int) -> "LiftedState":
        return cls(np.zeros(n))

    @classmethod
    def stationary(cls, n: int, rng: np.random.Generator) -> "LiftedState":
        """Profile drawn from mu and position uniform on Z_n."""
        l = sample_mu_array(GaussianTarget.for_size(n), rng)
        return cls(l, 0.0, int(rng.integers(n)))

    @classmethod
    def from_profile(cls, profile: MeanZeroProfile | np.ndarray, x: int = 0) -> "LiftedState":
        l = profile.entries if isinstance(profile, MeanZeroProfile) else np.asarray(profile)
        return cls(l, 0.0, x)

    def copy(self) -> "LiftedState":
        return LiftedState(self.L.copy(), self.t, self.x, self.offset_correction, self._since_check)

    def profile(self) -> np.ndarray:
        """The projected profile ``L - mean(L)`` (equal to ``L_i - t/n`` up to the banked offset)."""
        return self.L - self.L.mean()

    def total_local_time(self) -> float:
        return float(self.L.sum() + self.n * self.offset_correction)


def jump_rates(state: LiftedState) -> tuple[float, float]:
    """(q_plus, q_minus) = ((L[x+1]-L[x])_-, (L[x]-L[x-1])_+)."""
    n, x, L = state.n, state.x, state.L
    q_plus = max(L[x] - L[(x + 1) % n], 0.0)
    q_minus = max(L[x] - L[(x - 1) % n], 0.0)
    return q_plus, q_minus


def deterministic_flow(state: LiftedState, dt: float) -> LiftedState:
    """Advance the flow by ``dt`` in place (no event may occur in between)."""
    if dt < 0:
        raise DomainError(f"negative flow time {dt}")
    state.L[state.x] += dt
    state.t += dt
    return state


def clock_time(c: float, e: float) -> float:
    """Invert the ramp hazard ``max(c + s, 0)`` at integrated level ``e``.

    Solves ``(1/2)[((c+tau)_+)^2 - (c_+)^2] = e``.  For ``c > 0`` the root is
    written as ``2e / (c + sqrt(2e + c^2))`` to avoid cancellation.
    """
    if c > 0.0:
        return 2.0 * e / (c + math.sqrt(2.0 * e + c * c))
    return -c + math.sqrt(2.0 * e)


def _clock_params(state: LiftedState) -> tuple[float, float]:
    n, x, L = state.n, state.x, state.L
    a = L[(x + 1) % n] - L[x]
    b = L[x] - L[(x - 1) % n]
    return -a, b


def next_jump_times(state: LiftedState, rng_stream: UniformStream) -> tuple[float, float]:
    c_plus, c_minus = _clock_params(state)
    u = rng_stream.take(2)
    return (clock_time(c_plus, -math.log1p(-u[0])),
            clock_time(c_minus, -math.log1p(-u[1])))


def _maybe_renormalize(state: LiftedState) -> None:
    state._since_check += 1
    if state._since_check >= state.n:
        state._since_check = 0
        m = state.L.min()
        if m > RENORM_THRESHOLD:
            c = math.floor(m)
            state.L -= c
            state.offset_correction += c


def step(state: LiftedState, refresh: RefreshKind, rng_stream: UniformStream) -> tuple[LiftedState, EventRecord]:
    """Advance to and apply the next event, in place.

    Reads four uniforms: plus clock, minus clock, refresh clock, refresh
    destination.  Ties go JumpRight > JumpLeft > Refresh.
    """
    n, x = state.n, state.x
    c_plus, c_minus = _clock_params(state)
    u = rng_stream.take(K.STRIDE)
    tp = clock_time(c_plus, -math.log1p(-u[0]))
    tm = clock_time(c_minus, -math.log1p(-u[1]))
    tr = -math.log1p(-u[2]) / refresh.gamma if refresh.active else math.inf
    if tp <= tm and tp <= tr:
        kind, tau, new_x = EventKind.JUMP_RIGHT, tp, (x + 1) % n
    elif tm <= tr:
        kind, tau, new_x = EventKind.JUMP_LEFT, tm, (x - 1) % n
    else:
        kind, tau = EventKind.REFRESH, tr
        if refresh.variant == "uniform":
            new_x = min(int(u[3] * n), n - 1)
        else:
            new_x = (x + 1) % n if u[3] < 0.5 else (x - 1) % n
    state.L[x] += tau
    state.t += tau
    state.x = new_x
    _maybe_renormalize(state)
    return state, EventRecord(state.t, kind, new_x)


@dataclass(frozen=True)
class Observer:
    """Deterministic emission grid plus the linear functionals of the profile to record.

    ``projections`` has shape ``(K, n)``; row ``k`` yields ``obs_k = projections[k] . l``.
    The potential ``U(l)`` and position are always recorded.
    """

    dt: float
    projections: np.ndarray
    names: tuple[str, ...] = ()
    t0: float = 0.0

    @classmethod
    def modes(cls, n: int, ks, dt: float) -> "Observer":
        table = build_spectral_table(n)
        ks = tuple(int(k) for k in ks)
        return cls(dt, table.modes[list(ks)] if ks else np.zeros((0, n)), tuple(f"mode_{k}" for k in ks))

    @classmethod
    def full_profile(cls, n: int, dt: float) -> "Observer":
        return cls(dt, np.eye(n), tuple(f"l_{i}" for i in range(n)))

    def column_names(self) -> tuple[str, ...]:
        if self.names:
            return self.names
        return tuple(f"obs_{k}" for k in range(self.projections.shape[0]))


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    x: np.ndarray
    obs: np.ndarray
    potential: np.ndarray
    names: tuple[str, ...]
    n: int
    n_events: int
    final: LiftedState
    events: np.ndarray | None = None  # structured array (time, kind, position)
    meta: dict = field(default_factory=dict)

    def event_records(self) -> list[EventRecord]:
        if self.events is None:
            return []
        return [EventRecord(float(e["time"]), EventKind(int(e["kind"])), int(e["position"])) for e in self.events]


EVENT_DTYPE = np.dtype([("time", "<f8"), ("kind", "u1"), ("position", "<i8")])


def run_kernel(state: LiftedState, horizon: float, refresh: RefreshKind, observer: Observer,
               stream: UniformStream, *, rate_scale: float = 1.0, log_events: int = 0) -> TrajectoryRecord:
    """Shared driver for the compiled kernel (used by the SRW and harmonic ECMC engines)."""
    n = state.n
    if observer.dt > 0:
        n_grid = int(math.floor((horizon - observer.t0) / observer.dt + 1e-9)) + 1
    else:
        n_grid = 0
    proj = np.ascontiguousarray(observer.projections, dtype=float).reshape(-1, n)
    out_t = np.zeros(n_grid)
    out_x = np.zeros(n_grid, dtype=np.int64)
    out_obs = np.zeros((n_grid, proj.shape[0]))
    out_U = np.zeros(n_grid)
    ev_t = np.zeros(log_events)
    ev_kind = np.zeros(log_events, dtype=np.int64)
    ev_pos = np.zeros(log_events, dtype=np.int64)
    fst = np.array([state.t, state.offset_correction])
    ist = np.array([state.x, 0, 0, 0, state._since_check, 0], dtype=np.int64)
    L = state.L
    gamma = refresh.gamma if refresh.active else 1.0
    while True:
        stream.ensure(K.STRIDE * 1024)
        ist[K.I_UPOS] = stream.pos
        start = stream.pos
        status = K.run(L, fst, ist, stream.buf, float(horizon), refresh.code, float(gamma), float(rate_scale),
                       float(observer.t0), float(observer.dt), n_grid, proj, out_t, out_x, out_obs, out_U,
                       ev_t, ev_kind, ev_pos, RENORM_THRESHOLD)
        stream.advance(int(ist[K.I_UPOS]) - start)
        if status == K.DONE:
            break
    state.t = float(fst[K.F_T])
    state.offset_correction = float(fst[K.F_OFFSET])
    state.x = int(ist[K.I_X])
    state._since_check = int(ist[K.I_SINCE_CHECK])
    events = None
    if log_events:
        m = int(ist[K.I_LOGGED])
        events = np.zeros(m, dtype=EVENT_DTYPE)
        events["time"], events["kind"], events["position"] = ev_t[:m], ev_kind[:m], ev_pos[:m]
    j = int(ist[K.I_GRID])
    return TrajectoryRecord(out_t[:j], out_x[:j], out_obs[:j], out_U[:j], observer.column_names(), n,
                            int(ist[K.I_EVENTS]), state, events)


def simulate(initial: LiftedState, horizon: float, refresh: RefreshKind, observer: Observer | None,
             rng_stream: UniformStream, *, log_events: int = 0) -> TrajectoryRecord:
    """Run the walk until ``horizon``, emitting observables on the observer grid.

    ``initial`` is advanced in place; pass a copy to keep it.  The default
    observer records modes 1 and n-1 every ``horizon/2048``.
    """
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if observer is None:
        observer = Observer.modes(initial.n, (1, initial.n - 1), horizon / 2048)
    return run_kernel(initial, horizon, refresh, observer, rng_stream, log_events=log_events)


# --- trajectory output -------------------------------------------------------

def write_trajectory_csv(record: TrajectoryRecord, path: str | Path, *, extra: dict[str, np.ndarray] | None = None,
                         meta: dict | None = None) -> Path:
    """CSV with header ``t,x,obs_0,...`` and a ``.meta.json`` sidecar naming the observable columns.

    The ``x`` column is left out when the record has no active site (``x is None``).
    """
    path = Path(path)
    k = record.obs.shape[1]
    has_x = record.x is not None
    cols = [record.t[:, None]] + ([record.x[:, None].astype(float)] if has_x else [])
    cols += [record.obs, record.potential[:, None]]
    header = ["t"] + (["x"] if has_x else []) + [f"obs_{i}" for i in range(k + 1)]
    observables = list(record.names) + ["potential"]
    for name, values in (extra or {}).items():
        cols.append(np.asarray(values, dtype=float)[:, None])
        header.append(name)
    data = np.hstack(cols) if record.t.size else np.zeros((0, len(header)))
    first = 2 if has_x else 1
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            lead = f"{float(row[0])!r},{int(row[1])}," if has_x else f"{float(row[0])!r},"
            fh.write(lead + ",".join(repr(float(v)) for v in row[first:]) + "\n")
    sidecar = {"columns": header, "observables": {f"obs_{i}": name for i, name in enumerate(observables)},
               "n": record.n, "n_events": record.n_events}
    sidecar.update(meta or {})
    path.with_suffix(".meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


EVENT_LOG_MAGIC = b"SRWPDMP1"
EVENT_LOG_VERSION = 1


def write_event_log(events: np.ndarray, path: str | Path, n: int) -> Path:
    """Binary event log: magic, uint32 version, uint32 n, uint64 count, then packed records."""
    path = Path(path)
    events = np.asarray(events, dtype=EVENT_DTYPE)
    with open(path, "wb") as fh:
        fh.write(EVENT_LOG_MAGIC)
        fh.write(struct.pack("<IIQ", EVENT_LOG_VERSION, n, events.size))
        fh.write(events.tobytes())
    return path


def read_event_log(path: str | Path) -> tuple[int, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != EVENT_LOG_MAGIC:
        raise ValueError(f"{path}: not an event log (bad magic)")
    version, n, count = struct.unpack_from("<IIQ", raw, 8)
    if version != EVENT_LOG_VERSION:
        raise ValueError(f"{path}: unsupported event log version {version}")
    events = np.frombuffer(raw, dtype=EVENT_DTYPE, count=count, offset=24)
    return n, events.copy()
