"""Optional numba-compiled Heun kernels for d = 2 paired-mode families.

The math mirrors the numpy kernels in flow.py exactly: phases of integer
wavevectors come from an angle-addition recurrence on (cos x_j, sin x_j),
pairs combine as amp (w_cos cos + w_sin sin) for the value factor and
amp (w_sin cos - w_cos sin) for the derivative factor.  State rows are
independent and prange parallelism cannot change any row's bits.  `wmap`
maps a state row to its noise/kick row, so P particles of one realization
share increments without copying them.  Without numba everything falls
back to the numpy path in flow.py.
"""

import math

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f

        return wrap

    prange = range

TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _step_batch(x, v_arr, J_arr, logg, dw, wmap, A, kick, z, dirs, amps, perm,
                mode, heun):
    """One Heun/Euler step for all rows, in place.

    mode: 0 positions only, 1 unit tangents (v_arr, logg), 2 tangent
    matrices (J_arr).  Euler (heun=False) applies to mode 0 only.
    """
    M = x.shape[0]
    npair = z.shape[0]
    span1 = 0
    span2 = 0
    for p in range(npair):
        if abs(z[p, 0]) > span1:
            span1 = abs(z[p, 0])
        if abs(z[p, 1]) > span2:
            span2 = abs(z[p, 1])
    # per-row power-table workspaces, row-private under prange
    c1w = np.empty((M, 2 * span1 + 1))
    s1w = np.empty((M, 2 * span1 + 1))
    c2w = np.empty((M, 2 * span2 + 1))
    s2w = np.empty((M, 2 * span2 + 1))
    for m in prange(M):
        c1 = c1w[m]
        s1 = s1w[m]
        c2 = c2w[m]
        s2 = s2w[m]
        r = wmap[m]
        x1 = x[m, 0]
        x2 = x[m, 1]
        kx = kick[r, 0]
        ky = kick[r, 1]
        v1x = 0.0
        v1y = 0.0
        if mode == 1:
            v1x = v_arr[m, 0]
            v1y = v_arr[m, 1]

        velx1 = vely1 = velx2 = vely2 = gv1x = gv1y = gvx = gvy = 0.0
        ja11 = ja12 = ja21 = ja22 = 0.0
        jb11 = jb12 = jb21 = jb22 = 0.0
        px1 = px2 = pv1x = pv1y = 0.0
        pJ11 = pJ12 = pJ21 = pJ22 = 0.0

        for stage in range(2):
            if stage == 0:
                ex1, ex2 = x1, x2
            else:
                ex1, ex2 = px1, px2
            c = math.cos(ex1)
            s = math.sin(ex1)
            c1[span1] = 1.0
            s1[span1] = 0.0
            for mm in range(1, span1 + 1):
                c1[span1 + mm] = c1[span1 + mm - 1] * c - s1[span1 + mm - 1] * s
                s1[span1 + mm] = s1[span1 + mm - 1] * c + c1[span1 + mm - 1] * s
                c1[span1 - mm] = c1[span1 + mm]
                s1[span1 - mm] = -s1[span1 + mm]
            c = math.cos(ex2)
            s = math.sin(ex2)
            c2[span2] = 1.0
            s2[span2] = 0.0
            for mm in range(1, span2 + 1):
                c2[span2 + mm] = c2[span2 + mm - 1] * c - s2[span2 + mm - 1] * s
                s2[span2 + mm] = s2[span2 + mm - 1] * c + c2[span2 + mm - 1] * s
                c2[span2 - mm] = c2[span2 + mm]
                s2[span2 - mm] = -s2[span2 + mm]

            velx = vely = gvx = gvy = 0.0
            jb11 = jb12 = jb21 = jb22 = 0.0
            for p in range(npair):
                wc = A * dw[r, perm[2 * p]]
                ws = A * dw[r, perm[2 * p + 1]]
                i1 = span1 + z[p, 0]
                i2 = span2 + z[p, 1]
                cc = c1[i1] * c2[i2] - s1[i1] * s2[i2]
                ss = s1[i1] * c2[i2] + c1[i1] * s2[i2]
                eff = amps[p] * (wc * cc + ws * ss)
                velx += eff * dirs[p, 0]
                vely += eff * dirs[p, 1]
                if mode == 1:
                    deff = amps[p] * (ws * cc - wc * ss)
                    if stage == 0:
                        zv = z[p, 0] * v1x + z[p, 1] * v1y
                    else:
                        zv = z[p, 0] * pv1x + z[p, 1] * pv1y
                    gvx += deff * zv * dirs[p, 0]
                    gvy += deff * zv * dirs[p, 1]
                elif mode == 2:
                    deff = amps[p] * (ws * cc - wc * ss)
                    if stage == 0:
                        zJ1 = z[p, 0] * J_arr[m, 0, 0] + z[p, 1] * J_arr[m, 1, 0]
                        zJ2 = z[p, 0] * J_arr[m, 0, 1] + z[p, 1] * J_arr[m, 1, 1]
                    else:
                        zJ1 = z[p, 0] * pJ11 + z[p, 1] * pJ21
                        zJ2 = z[p, 0] * pJ12 + z[p, 1] * pJ22
                    jb11 += deff * dirs[p, 0] * zJ1
                    jb12 += deff * dirs[p, 0] * zJ2
                    jb21 += deff * dirs[p, 1] * zJ1
                    jb22 += deff * dirs[p, 1] * zJ2

            if stage == 0:
                velx1, vely1 = velx, vely
                gv1x, gv1y = gvx, gvy
                ja11, ja12, ja21, ja22 = jb11, jb12, jb21, jb22
                if not heun:
                    break
                px1 = x1 + velx1 + kx
                px2 = x2 + vely1 + ky
                pv1x = v1x + gv1x
                pv1y = v1y + gv1y
                if mode == 2:
                    pJ11 = J_arr[m, 0, 0] + ja11
                    pJ12 = J_arr[m, 0, 1] + ja12
                    pJ21 = J_arr[m, 1, 0] + ja21
                    pJ22 = J_arr[m, 1, 1] + ja22
            else:
                velx2, vely2 = velx, vely

        if not heun:
            x[m, 0] = (x1 + velx1 + kx) % TWO_PI
            x[m, 1] = (x2 + vely1 + ky) % TWO_PI
            continue

        x[m, 0] = (x1 + 0.5 * (velx1 + velx2) + kx) % TWO_PI
        x[m, 1] = (x2 + 0.5 * (vely1 + vely2) + ky) % TWO_PI
        if mode == 1:
            wx = v1x + 0.5 * (gv1x + gvx)
            wy = v1y + 0.5 * (gv1y + gvy)
            growth = math.sqrt(wx * wx + wy * wy)
            v_arr[m, 0] = wx / growth
            v_arr[m, 1] = wy / growth
            logg[m] += math.log(growth)
        elif mode == 2:
            J_arr[m, 0, 0] += 0.5 * (ja11 + jb11)
            J_arr[m, 0, 1] += 0.5 * (ja12 + jb12)
            J_arr[m, 1, 0] += 0.5 * (ja21 + jb21)
            J_arr[m, 1, 1] += 0.5 * (ja22 + jb22)


_DUMMY_V = np.zeros((1, 2))
_DUMMY_J = np.zeros((1, 2, 2))
_DUMMY_G = np.zeros(1)


def kernel_args(plan):
    """Plan arrays in the layout the compiled kernel expects (cached on the plan)."""
    args = getattr(plan, "_kernel_args", None)
    if args is None:
        args = (
            plan.zint.astype(np.int64),
            np.ascontiguousarray(plan.dirs),
            np.ascontiguousarray(plan.amps),
            plan.perm.astype(np.int64),
        )
        plan._kernel_args = args
    return args


def supported(model_d: int, plan) -> bool:
    return HAVE_NUMBA and model_d == 2 and plan is not None and plan.zint is not None


def positions_step(x, dw, wmap, kick, A, plan, heun=True):
    z, dirs, amps, perm = kernel_args(plan)
    _step_batch(x, _DUMMY_V, _DUMMY_J, _DUMMY_G, dw, wmap, A, kick, z, dirs, amps,
                perm, 0, heun)


def unit_step(x, v, logg, dw, wmap, kick, A, plan):
    z, dirs, amps, perm = kernel_args(plan)
    _step_batch(x, v, _DUMMY_J, logg, dw, wmap, A, kick, z, dirs, amps, perm, 1, True)


def tangent_step(x, J, dw, wmap, kick, A, plan):
    z, dirs, amps, perm = kernel_args(plan)
    _step_batch(x, _DUMMY_V, J, _DUMMY_G, dw, wmap, A, kick, z, dirs, amps, perm, 2, True)
