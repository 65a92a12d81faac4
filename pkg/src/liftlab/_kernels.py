"""Compiled inner loop for the local-time PDMP.

The kernel mutates its state arrays in place and returns when either the
horizon is reached (``DONE``) or the uniform buffer cannot cover another step
(``NEED_RNG``).  Each step reads exactly ``STRIDE`` uniforms, in the order
(plus clock, minus clock, refresh clock, refresh destination), whether or not
refresh is active, so replay is stable.
"""
import math

import numpy as np
from numba import njit

STRIDE = 4
DONE = 0
NEED_RNG = 1

JUMP_RIGHT = 0
JUMP_LEFT = 1
REFRESH = 2

REFRESH_NONE = 0
REFRESH_UNIFORM = 1
REFRESH_NEIGHBOR = 2

# float state slots
F_T = 0
F_OFFSET = 1
# int state slots
I_X = 0
I_UPOS = 1
I_GRID = 2
I_EVENTS = 3
I_SINCE_CHECK = 4
I_LOGGED = 5


@njit(cache=True)
def clock_time(c, e):
    """First time tau with (1/2)[((c+tau)_+)^2 - (c_+)^2] = e."""
    if c > 0.0:
        return 2.0 * e / (c + math.sqrt(2.0 * e + c * c))
    return -c + math.sqrt(2.0 * e)


@njit(cache=True)
def _emit(L, n, x, extra, g, offset, proj, out_t, out_x, out_obs, out_U, j):
    # state at grid time g: L[x] has accumulated an additional `extra`
    s = 0.0
    for i in range(n):
        s += L[i]
    s += extra
    mean = s / n
    K = proj.shape[0]
    for k in range(K):
        acc = 0.0
        for i in range(n):
            li = L[i] - mean
            if i == x:
                li += extra
            acc += proj[k, i] * li
        out_obs[j, k] = acc
    U = 0.0
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        d = L[ip] - L[i]
        if ip == x:
            d += extra
        if i == x:
            d -= extra
        U += d * d
    out_U[j] = 0.5 * U
    out_t[j] = g
    out_x[j] = x


@njit(cache=True)
def run(L, fst, ist, u, horizon, refresh, gamma, rate_scale,
        grid_t0, grid_dt, n_grid, proj, out_t, out_x, out_obs, out_U,
        ev_t, ev_kind, ev_pos, threshold):
    n = L.shape[0]
    t = fst[F_T]
    x = ist[I_X]
    upos = ist[I_UPOS]
    j = ist[I_GRID]
    nev = ist[I_EVENTS]
    since = ist[I_SINCE_CHECK]
    logged = ist[I_LOGGED]
    cap = ev_t.shape[0]
    nu = u.shape[0]
    status = DONE
    while True:
        if upos + STRIDE > nu:
            status = NEED_RNG
            break
        xp = x + 1 if x + 1 < n else 0
        xm = x - 1 if x > 0 else n - 1
        a = L[xp] - L[x]
        b = L[x] - L[xm]
        tp = clock_time(-a, -math.log1p(-u[upos]) / rate_scale)
        tm = clock_time(b, -math.log1p(-u[upos + 1]) / rate_scale)
        tr = np.inf
        if refresh != REFRESH_NONE:
            tr = -math.log1p(-u[upos + 2]) / gamma
        ud = u[upos + 3]
        upos += STRIDE
        if tp <= tm and tp <= tr:
            kind = JUMP_RIGHT
            tau = tp
        elif tm <= tr:
            kind = JUMP_LEFT
            tau = tm
        else:
            kind = REFRESH
            tau = tr
        t_ev = t + tau
        stop = t_ev > horizon
        t_end = horizon if stop else t_ev
        while j < n_grid:
            g = grid_t0 + j * grid_dt
            if g > t_end:
                break
            _emit(L, n, x, g - t, g, fst[F_OFFSET], proj, out_t, out_x, out_obs, out_U, j)
            j += 1
        if stop:
            L[x] += horizon - t
            t = horizon
            break
        L[x] += tau
        t = t_ev
        if kind == JUMP_RIGHT:
            x = xp
        elif kind == JUMP_LEFT:
            x = xm
        elif refresh == REFRESH_UNIFORM:
            x = min(int(ud * n), n - 1)
        else:
            x = xp if ud < 0.5 else xm
        nev += 1
        if logged < cap:
            ev_t[logged] = t
            ev_kind[logged] = kind
            ev_pos[logged] = x
            logged += 1
        since += 1
        if since >= n:
            since = 0
            m = L[0]
            for i in range(1, n):
                if L[i] < m:
                    m = L[i]
            if m > threshold:
                c = math.floor(m)
                for i in range(n):
                    L[i] -= c
                fst[F_OFFSET] += c
    fst[F_T] = t
    ist[I_X] = x
    ist[I_UPOS] = upos
    ist[I_GRID] = j
    ist[I_EVENTS] = nev
    ist[I_SINCE_CHECK] = since
    ist[I_LOGGED] = logged
    return status
