"""Fused numba implementation of one primal-dual iteration.

The expression trees here mirror ``solver._step_numpy`` exactly (same
association order for every floating-point operation), so both engines
produce bit-identical iterates on finite data. Keep the two in sync when
changing either.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def pd_step(
    x,
    o,
    y1,
    y2,
    v1,
    v2,
    w11,
    w12,
    w21,
    w22,
    s31,
    s32,
    dx1,
    dx2,
    av1,
    av2,
    xn,
    yn1,
    yn2,
    vn1,
    vn2,
    avn1,
    avn2,
    dxn1,
    dxn2,
    t1,
    t2,
    mc,
    ms,
    msoa,
    mcoa,
    lam,
    gam,
    tau,
    sig,
    identity,
):  # pragma: no cover - exercised via solver tests
    hh, ww = x.shape
    tg = tau * gam
    sg = sig * gam
    half_sig = 0.5 * sig

    # pass A: dual-to-primal pullbacks, y/v updates, w1 dual update
    for r in range(hh):
        for c in range(ww):
            if identity:
                aw1 = w21[r, c]
                aw2 = w22[r, c]
                q1 = s31[r, c]
                q2 = s32[r, c]
            else:
                cc = mc[r, c]
                ss = ms[r, c]
                so = msoa[r, c]
                co = mcoa[r, c]
                aw1 = cc * w21[r, c] - so * w22[r, c]
                aw2 = ss * w21[r, c] + co * w22[r, c]
                q1 = cc * s31[r, c] + ss * s32[r, c]
                q2 = -so * s31[r, c] + co * s32[r, c]
            if gam > 0.0:
                t1[r, c] = gam * (aw1 - dx1[r, c]) + s31[r, c]
                t2[r, c] = gam * (aw2 - dx2[r, c]) + s32[r, c]
                yn1[r, c] = y1[r, c] - tg * (y1[r, c] - aw1)
                yn2[r, c] = y2[r, c] - tg * (y2[r, c] - aw2)
            else:
                t1[r, c] = s31[r, c]
                t2[r, c] = s32[r, c]
                yn1[r, c] = y1[r, c]
                yn2[r, c] = y2[r, c]
            a = v1[r, c] - tau * (w11[r, c] - q1)
            b = v2[r, c] - tau * (w12[r, c] - q2)
            vn1[r, c] = a
            vn2[r, c] = b
            if identity:
                avn1[r, c] = a
                avn2[r, c] = b
            else:
                avn1[r, c] = mc[r, c] * a - msoa[r, c] * b
                avn2[r, c] = ms[r, c] * a + mcoa[r, c] * b
            p1 = w11[r, c] + sig * (2.0 * a - v1[r, c])
            p2 = w12[r, c] + sig * (2.0 * b - v2[r, c])
            nr = np.sqrt(p1 * p1 + p2 * p2)
            den = nr if nr > 1.0 else 1.0
            w11[r, c] = p1 / den
            w12[r, c] = p2 / den

    # pass B: gradient-adjoint accumulation and the projected x step
    for r in range(hh):
        for c in range(ww):
            acc = 0.0
            if c < ww - 1:
                acc -= t1[r, c]
            if c > 0:
                acc += t1[r, c - 1]
            if r < hh - 1:
                acc -= t2[r, c]
            if r > 0:
                acc += t2[r - 1, c]
            g = tau * (lam * (x[r, c] - o[r, c]) + acc)
            val = x[r, c] - g
            if val < 0.0:
                val = 0.0
            elif val > 1.0:
                val = 1.0
            xn[r, c] = val

    # pass C: new gradient cache, w2/w3 dual updates, change accumulators
    dz2 = 0.0
    z2 = 0.0
    for r in range(hh):
        for c in range(ww):
            d1 = xn[r, c + 1] - xn[r, c] if c < ww - 1 else 0.0
            d2 = xn[r + 1, c] - xn[r, c] if r < hh - 1 else 0.0
            dxn1[r, c] = d1
            dxn2[r, c] = d2
            b1 = 2.0 * d1 - dx1[r, c]
            b2 = 2.0 * d2 - dx2[r, c]
            if gam > 0.0:
                e1 = b1 - (2.0 * yn1[r, c] - y1[r, c])
                e2 = b2 - (2.0 * yn2[r, c] - y2[r, c])
                if identity:
                    r1 = e1
                    r2 = e2
                else:
                    r1 = mc[r, c] * e1 + ms[r, c] * e2
                    r2 = -msoa[r, c] * e1 + mcoa[r, c] * e2
                k1 = w21[r, c] + sg * r1
                k2 = w22[r, c] + sg * r2
                nq = np.sqrt(k1 * k1 + k2 * k2)
                den = nq if nq > sig else sig
                sc = 1.0 - sig / den
                w21[r, c] = k1 * sc
                w22[r, c] = k2 * sc
            f1 = b1 - (2.0 * avn1[r, c] - av1[r, c])
            f2 = b2 - (2.0 * avn2[r, c] - av2[r, c])
            s31[r, c] = s31[r, c] + half_sig * f1
            s32[r, c] = s32[r, c] + half_sig * f2

            dxp = xn[r, c] - x[r, c]
            dy1 = yn1[r, c] - y1[r, c]
            dy2 = yn2[r, c] - y2[r, c]
            dv1 = vn1[r, c] - v1[r, c]
            dv2 = vn2[r, c] - v2[r, c]
            dz2 += dxp * dxp + dy1 * dy1 + dy2 * dy2 + dv1 * dv1 + dv2 * dv2
            z2 += (
                x[r, c] * x[r, c]
                + y1[r, c] * y1[r, c]
                + y2[r, c] * y2[r, c]
                + v1[r, c] * v1[r, c]
                + v2[r, c] * v2[r, c]
            )
    return dz2, z2
