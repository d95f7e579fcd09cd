"""Jitted numerical kernels: vector field, variational blocks, quadrature
integrands and the adaptive Fehlberg 7(8) driver.

Everything here works on flat float64 arrays so numba can cache the
compiled code.  The 20-entry parameter vector ``P`` is produced by
:meth:`hr4bp.hvo.HvoEval.kernel_params`:

    P[0] m, P[1] mu, P[2] ratio = m^2/a0^3, P[3] d(ratio)/dm,
    P[4:8]  cos coefficients of rho (harmonics 1..4),
    P[8:12] sin coefficients,
    P[12:16], P[16:20] their m-derivatives.

Augmented state layout: X(6) | Phi(36, row major) | Psi columns (6 each)
| quadrature accumulators.  Integration time is the physical epoch tau;
quadrature integrands that carry a forcing phase assume the run starts
at driver time 0 (the callers arrange this).
"""

from __future__ import annotations

from fractions import Fraction as Fr

import numpy as np
from numba import njit

# --- Fehlberg 7(8) tableau (13 stages) ----------------------------------

_ALPHA = [0, Fr(2, 27), Fr(1, 9), Fr(1, 6), Fr(5, 12), Fr(1, 2), Fr(5, 6),
          Fr(1, 6), Fr(2, 3), Fr(1, 3), 1, 0, 1]

_BETA = [
    [],
    [Fr(2, 27)],
    [Fr(1, 36), Fr(1, 12)],
    [Fr(1, 24), 0, Fr(1, 8)],
    [Fr(5, 12), 0, Fr(-25, 16), Fr(25, 16)],
    [Fr(1, 20), 0, 0, Fr(1, 4), Fr(1, 5)],
    [Fr(-25, 108), 0, 0, Fr(125, 108), Fr(-65, 27), Fr(125, 54)],
    [Fr(31, 300), 0, 0, 0, Fr(61, 225), Fr(-2, 9), Fr(13, 900)],
    [2, 0, 0, Fr(-53, 6), Fr(704, 45), Fr(-107, 9), Fr(67, 90), 3],
    [Fr(-91, 108), 0, 0, Fr(23, 108), Fr(-976, 135), Fr(311, 54),
     Fr(-19, 60), Fr(17, 6), Fr(-1, 12)],
    [Fr(2383, 4100), 0, 0, Fr(-341, 164), Fr(4496, 1025), Fr(-301, 82),
     Fr(2133, 4100), Fr(45, 82), Fr(45, 164), Fr(18, 41)],
    [Fr(3, 205), 0, 0, 0, 0, Fr(-6, 41), Fr(-3, 205), Fr(-3, 41),
     Fr(3, 41), Fr(6, 41), 0],
    [Fr(-1777, 4100), 0, 0, Fr(-341, 164), Fr(4496, 1025), Fr(-289, 82),
     Fr(2193, 4100), Fr(51, 82), Fr(33, 164), Fr(12, 41), 0, 1],
]

_C8 = [0, 0, 0, 0, 0, Fr(34, 105), Fr(9, 35), Fr(9, 35), Fr(9, 280),
       Fr(9, 280), 0, Fr(41, 840), Fr(41, 840)]

ALPHA = np.array([float(a) for a in _ALPHA])
BETA = np.zeros((13, 12))
for _i, _row in enumerate(_BETA):
    for _j, _v in enumerate(_row):
        BETA[_i, _j] = float(_v)
C8 = np.array([float(c) for c in _C8])
ERR_W = float(Fr(41, 840))  # error = h * 41/840 * (k0 + k10 - k11 - k12)

# driver status codes
OK = 0
SINGULAR = 2
STEP_UNDERFLOW = 3
MAX_STEPS = 4

GUARD_RADIUS = 1e-8

# quadrature integrand codes
Q_ONE = 0
Q_ZZP = 1
Q_G1V = 2
Q_H2V = 3
Q_H3V = 4
Q_H4V = 5
Q_B2 = 6
Q_B3 = 7
QP_MAX = 192


@njit(cache=True)
def _field(X, tau, P, want, acc, H, cm, cmu):
    """Acceleration, and optionally the position Hessian of the effective
    potential (want>=1) and the (m, mu) parameter columns (want>=2).

    Returns 0 on success, 2 if inside the singularity guard radius.
    """
    x, y, z = X[0], X[1], X[2]
    vx, vy, vz = X[3], X[4], X[5]
    m = P[0]
    mu = P[1]
    ratio = P[2]
    dratio = P[3]

    c2t = 1.0
    s2t = 0.0
    rx = 0.0
    ry = 0.0
    drx = 0.0
    dry = 0.0
    if m != 0.0 or want >= 2:
        c2t = np.cos(2.0 * tau)
        s2t = np.sin(2.0 * tau)
        cn = c2t
        sn = s2t
        for n in range(4):
            rx += P[4 + n] * cn
            ry += P[8 + n] * sn
            drx += P[12 + n] * cn
            dry += P[16 + n] * sn
            # advance cos/sin(2(n+1)tau) -> (2(n+2)tau)
            cn2 = cn * c2t - sn * s2t
            sn2 = sn * c2t + cn * s2t
            cn = cn2
            sn = sn2

    ex = 1.0 + rx
    ey = ry
    omu = 1.0 - mu
    r1x = x + mu * ex
    r1y = y + mu * ey
    r2x = x - omu * ex
    r2y = y - omu * ey

    r1s = r1x * r1x + r1y * r1y + z * z
    r2s = r2x * r2x + r2y * r2y + z * z
    r1 = np.sqrt(r1s)
    r2 = np.sqrt(r2s)
    if r1 < GUARD_RADIUS or r2 < GUARD_RADIUS:
        return 2
    r13 = r1s * r1
    r23 = r2s * r2
    r15 = r13 * r1s
    r25 = r23 * r2s

    # gravity sum without the ratio factor
    gx = omu * r1x / r13 + mu * r2x / r23
    gy = omu * r1y / r13 + mu * r2y / r23
    gz = omu * z / r13 + mu * z / r23

    k1 = 1.0 + 2.0 * m + 1.5 * m * m
    fx = k1 * x - ratio * gx
    fy = k1 * y - ratio * gy
    fz = -(m * m) * z - ratio * gz
    if m != 0.0:
        fm = 1.5 * m * m
        fx += fm * (x * c2t - y * s2t)
        fy += fm * (-y * c2t - x * s2t)

    w = 2.0 * (1.0 + m)
    acc[0] = w * vy + fx
    acc[1] = -w * vx + fy
    acc[2] = fz

    if want >= 1:
        w1 = omu * ratio
        w2 = mu * ratio
        t1 = w1 / r13 + w2 / r23
        c5a = 3.0 * w1 / r15
        c5b = 3.0 * w2 / r25
        H[0, 0] = k1 - t1 + c5a * r1x * r1x + c5b * r2x * r2x
        H[1, 1] = k1 - t1 + c5a * r1y * r1y + c5b * r2y * r2y
        H[2, 2] = -(m * m) - t1 + c5a * z * z + c5b * z * z
        H[0, 1] = c5a * r1x * r1y + c5b * r2x * r2y
        H[0, 2] = c5a * r1x * z + c5b * r2x * z
        H[1, 2] = c5a * r1y * z + c5b * r2y * z
        if m != 0.0:
            fm = 1.5 * m * m
            H[0, 0] += fm * c2t
            H[1, 1] -= fm * c2t
            H[0, 1] -= fm * s2t
        H[1, 0] = H[0, 1]
        H[2, 0] = H[0, 2]
        H[2, 1] = H[1, 2]

    if want >= 2:
        # m column: Coriolis + direct forcing + gravity (product rule on
        # ratio * g, with the rho chain terms inside dg).
        mm = mu * omu
        ddx = mm * (drx / r13 - 3.0 * (r1x * drx + r1y * dry) * r1x / r15) \
            - mm * (drx / r23 - 3.0 * (r2x * drx + r2y * dry) * r2x / r25)
        ddy = mm * (dry / r13 - 3.0 * (r1x * drx + r1y * dry) * r1y / r15) \
            - mm * (dry / r23 - 3.0 * (r2x * drx + r2y * dry) * r2y / r25)
        ddz = mm * (-3.0 * (r1x * drx + r1y * dry) * z / r15) \
            - mm * (-3.0 * (r2x * drx + r2y * dry) * z / r25)
        cm[0] = 2.0 * vy + (2.0 + 3.0 * m) * x \
            + 3.0 * m * (x * c2t - y * s2t) - dratio * gx - ratio * ddx
        cm[1] = -2.0 * vx + (2.0 + 3.0 * m) * y \
            + 3.0 * m * (-y * c2t - x * s2t) - dratio * gy - ratio * ddy
        cm[2] = -2.0 * m * z - dratio * gz - ratio * ddz

        # mu column: weights and both body positions depend on mu.
        e1 = ex / r13 - 3.0 * (r1x * ex + r1y * ey) * r1x / r15
        e2 = ey / r13 - 3.0 * (r1x * ex + r1y * ey) * r1y / r15
        e3 = -3.0 * (r1x * ex + r1y * ey) * z / r15
        f1 = ex / r23 - 3.0 * (r2x * ex + r2y * ey) * r2x / r25
        f2 = ey / r23 - 3.0 * (r2x * ex + r2y * ey) * r2y / r25
        f3 = -3.0 * (r2x * ex + r2y * ey) * z / r25
        dgx = -r1x / r13 + omu * e1 + r2x / r23 + mu * f1
        dgy = -r1y / r13 + omu * e2 + r2y / r23 + mu * f2
        dgz = -z / r13 + omu * e3 + z / r23 + mu * f3
        cmu[0] = -ratio * dgx
        cmu[1] = -ratio * dgy
        cmu[2] = -ratio * dgz

    return 0


@njit(cache=True)
def _cr3bp_grav(x, y, z, mu):
    """Gravity acceleration sum of the unperturbed primaries."""
    omu = 1.0 - mu
    r1x = x + mu
    r2x = x - omu
    r1s = r1x * r1x + y * y + z * z
    r2s = r2x * r2x + y * y + z * z
    r13 = r1s * np.sqrt(r1s)
    r23 = r2s * np.sqrt(r2s)
    gx = omu * r1x / r13 + mu * r2x / r23
    gy = omu * y / r13 + mu * y / r23
    gz = omu * z / r13 + mu * z / r23
    return gx, gy, gz


@njit(cache=True)
def _p_entries(x, y, z, mu):
    """Independent entries of the gravity-gradient difference matrix at a
    CR3BP state: returns (pxx, pyy, pzz, dxm_e, d, k3, k5, e) where the
    off-diagonals are -(dxm_e)*y, -(dxm_e)*z and -d*y*z."""
    omu = 1.0 - mu
    xm = x + mu
    r1s = xm * xm + y * y + z * z
    x2 = x - omu
    r2s = x2 * x2 + y * y + z * z
    r1 = np.sqrt(r1s)
    r2 = np.sqrt(r2s)
    r13 = r1s * r1
    r23 = r2s * r2
    r15 = r13 * r1s
    r25 = r23 * r2s
    k3 = 1.0 / r13 - 1.0 / r23
    k5 = 1.0 / r15 - 1.0 / r25
    d = 3.0 * k5
    e = 3.0 / r25
    pxx = k3 - 3.0 * xm * xm * k5 - (2.0 * xm - 1.0) * e
    pyy = k3 - 3.0 * y * y * k5
    pzz = k3 - 3.0 * z * z * k5
    return pxx, pyy, pzz, d * xm + e, d, k3, k5, e


@njit(cache=True)
def _jk2(X, mu):
    """Order-2 forcing work coefficients J, K of h2 . v."""
    x, y, z = X[0], X[1], X[2]
    vx, vy, vz = X[3], X[4], X[5]
    pxx, pyy, _, dxe, d, _, _, _ = _p_entries(x, y, z, mu)
    mm = (1.0 - mu) * mu
    J = 1.5 * (x * vx - y * vy) + mm * (pxx * vx - dxe * (y * vy + z * vz))
    K = -1.5 * (y * vx + x * vy) \
        + 1.375 * mm * (dxe * y * vx - pyy * vy + d * y * z * vz)
    return J, K


@njit(cache=True)
def _jk3(X, mu):
    """Order-3 forcing work coefficients J, K of h3 . v."""
    x, y, z = X[0], X[1], X[2]
    vx, vy, vz = X[3], X[4], X[5]
    pxx, pyy, _, dxe, d, _, _, _ = _p_entries(x, y, z, mu)
    mm = (1.0 - mu) * mu
    J = (19.0 / 6.0) * mm * (pxx * vx - dxe * (y * vy + z * vz))
    K = (59.0 / 12.0) * mm * (dxe * y * vx - pyy * vy + d * y * z * vz)
    return J, K


@njit(cache=True)
def _g2_vec(X, alpha, mu, out):
    """Analytic order-2 coefficient of the field difference (no velocity
    terms survive at this order)."""
    x, y, z = X[0], X[1], X[2]
    c2a = np.cos(2.0 * alpha)
    s2a = np.sin(2.0 * alpha)
    gx, gy, gz = _cr3bp_grav(x, y, z, mu)
    pxx, pyy, pzz, dxe, d, _, _, _ = _p_entries(x, y, z, mu)
    pxy = -dxe * y
    pxz = -dxe * z
    pyz = -d * y * z
    # rho at order 2: (-cos 2a, 11/8 sin 2a, 0)
    rax = -c2a
    ray = 1.375 * s2a
    mm = (1.0 - mu) * mu
    out[0] = 1.5 * x + 1.5 * (x * c2a - y * s2a) - 1.5 * gx \
        - mm * (pxx * rax + pxy * ray)
    out[1] = 1.5 * y + 1.5 * (-y * c2a - x * s2a) - 1.5 * gy \
        - mm * (pxy * rax + pyy * ray)
    out[2] = -z - 1.5 * gz - mm * (pxz * rax + pyz * ray)


@njit(cache=True)
def _quad_rate(code, X, t, qp, scratch3a, scratch3b):
    """Integrand value for one riding quadrature at driver time t."""
    if code == Q_ONE:
        return 1.0
    if code == Q_ZZP:
        return X[2] * X[5]
    if code == Q_G1V:
        mu = qp[0]
        gx, gy, gz = _cr3bp_grav(X[0], X[1], X[2], mu)
        g1x = 2.0 * X[4] + 2.0 * (X[0] - gx)
        g1y = -2.0 * X[3] + 2.0 * (X[1] - gy)
        g1z = -2.0 * gz
        return g1x * X[3] + g1y * X[4] + g1z * X[5]
    if code == Q_H2V:
        alpha = qp[0] + t
        mu = qp[1]
        J, K = _jk2(X, mu)
        return J * np.cos(2.0 * alpha) + K * np.sin(2.0 * alpha) \
            - X[2] * X[5]
    if code == Q_H3V:
        alpha = qp[0] + t
        mu = qp[1]
        J, K = _jk3(X, mu)
        return J * np.cos(2.0 * alpha) + K * np.sin(2.0 * alpha)
    if code == Q_H4V:
        # Fixed-stencil extraction of the order-4 coefficient of the
        # field difference, dotted with velocity.  Layout of qp:
        # [tau0, mu, L, V_0..V_{L-1}, 2L x 20 kernel params], where the
        # V_i annihilate the other even orders (Vandermonde weights) and
        # the stencil alternates +h_i, -h_i.
        alpha = qp[0] + t
        mu = qp[1]
        L = int(qp[2])
        ex = 0.0
        ey = 0.0
        ez = 0.0
        hs = np.empty((3, 3))
        cs = np.empty(3)
        p0 = np.zeros(20)
        p0[1] = mu
        p0[2] = 1.0
        csum = 0.0
        for i in range(L):
            vi = qp[3 + i]
            csum += vi
            for sgn in range(2):
                off = 3 + L + (2 * i + sgn) * 20
                _field(X, alpha, qp[off:off + 20], 0, scratch3a, hs, cs,
                       cs)
                ex += 0.5 * vi * scratch3a[0]
                ey += 0.5 * vi * scratch3a[1]
                ez += 0.5 * vi * scratch3a[2]
        # the +h/-h average keeps the m-independent CR3BP part, which
        # the weights do not annihilate; remove it explicitly
        _field(X, alpha, p0, 0, scratch3a, hs, cs, cs)
        ex -= csum * scratch3a[0]
        ey -= csum * scratch3a[1]
        ez -= csum * scratch3a[2]
        return ex * X[3] + ey * X[4] + ez * X[5]
    if code == Q_B2:
        mu = qp[0]
        J, K = _jk2(X, mu)
        return K * np.cos(2.0 * t) - J * np.sin(2.0 * t)
    if code == Q_B3:
        mu = qp[0]
        J, K = _jk3(X, mu)
        return K * np.cos(2.0 * t) - J * np.sin(2.0 * t)
    return 0.0


@njit(cache=True)
def _rhs(t, y, P, nphi, npsi, qcodes, qp, dy, acc, H, cm, cmu,
         scr_a, scr_b):
    """Time derivative of the augmented vector.  Returns a status flag."""
    want = 0
    if nphi > 0 or npsi > 0:
        want = 1
    if npsi > 0:
        want = 2
    st = _field(y[:6], t, P, want, acc, H, cm, cmu)
    if st != 0:
        return st
    dy[0] = y[3]
    dy[1] = y[4]
    dy[2] = y[5]
    dy[3] = acc[0]
    dy[4] = acc[1]
    dy[5] = acc[2]

    w = 2.0 * (1.0 + P[0])
    if nphi > 0:
        # dPhi = A Phi with A = [[0, I], [H, w S]]
        for jc in range(6):
            p0 = y[6 + jc]
            p1 = y[12 + jc]
            p2 = y[18 + jc]
            p3 = y[24 + jc]
            p4 = y[30 + jc]
            p5 = y[36 + jc]
            dy[6 + jc] = p3
            dy[12 + jc] = p4
            dy[18 + jc] = p5
            dy[24 + jc] = H[0, 0] * p0 + H[0, 1] * p1 + H[0, 2] * p2 \
                + w * p4
            dy[30 + jc] = H[1, 0] * p0 + H[1, 1] * p1 + H[1, 2] * p2 \
                - w * p3
            dy[36 + jc] = H[2, 0] * p0 + H[2, 1] * p1 + H[2, 2] * p2
    if npsi > 0:
        base = 42
        for jp in range(npsi):
            off = base + 6 * jp
            p0 = y[off]
            p1 = y[off + 1]
            p2 = y[off + 2]
            p3 = y[off + 3]
            p4 = y[off + 4]
            p5 = y[off + 5]
            dy[off] = p3
            dy[off + 1] = p4
            dy[off + 2] = p5
            # column 0 is d/dm, column 1 is d/dmu
            if jp == 0:
                cx, cy, cz = cm[0], cm[1], cm[2]
            else:
                cx, cy, cz = cmu[0], cmu[1], cmu[2]
            dy[off + 3] = H[0, 0] * p0 + H[0, 1] * p1 + H[0, 2] * p2 \
                + w * p4 + cx
            dy[off + 4] = H[1, 0] * p0 + H[1, 1] * p1 + H[1, 2] * p2 \
                - w * p3 + cy
            dy[off + 5] = H[2, 0] * p0 + H[2, 1] * p1 + H[2, 2] * p2 + cz
    nq = qcodes.shape[0]
    if nq > 0:
        # psi columns require the stm block, so the layout is fixed
        qbase = 42 + 6 * npsi if nphi > 0 else 6
        for iq in range(nq):
            dy[qbase + iq] = _quad_rate(qcodes[iq], y[:6], t, qp[iq],
                                        scr_a, scr_b)
    return 0


@njit(cache=True)
def propagate_core(y0, t0, t1, P, nphi, npsi, qcodes, qp, rtol, atol,
                   hmax, h0, t_eval, y_eval):
    """Adaptive RKF7(8) over [t0, t1] (either direction).

    Hits every entry of t_eval exactly (must be sorted along the travel
    direction, within [t0, t1]) and stores the full augmented vector in
    y_eval rows.  Returns (y_final, status, nsteps, naccepted, t_reached).
    """
    ny = y0.shape[0]
    y = y0.copy()
    ynew = np.empty(ny)
    ystage = np.empty(ny)
    k = np.empty((13, ny))
    dy = np.empty(ny)
    acc = np.empty(3)
    H = np.empty((3, 3))
    cm = np.empty(3)
    cmu = np.empty(3)
    scr_a = np.empty(3)
    scr_b = np.empty(3)

    t = t0
    if t1 == t0:
        return y, OK, 0, 0, t
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    h = h0 if h0 > 0.0 else min(0.05, 0.25 * span)
    if hmax > 0.0 and h > hmax:
        h = hmax
    h *= direction

    iev = 0
    nev = t_eval.shape[0]
    nsteps = 0
    nacc = 0
    max_steps = 5_000_000

    while True:
        # next mandatory stop: pending sample time, else the endpoint
        if iev < nev:
            target = t_eval[iev]
        else:
            target = t1
        if (t - target) * direction >= 0.0:
            if iev < nev:
                for i in range(ny):
                    y_eval[iev, i] = y[i]
                iev += 1
                continue
            return y, OK, nsteps, nacc, t

        hstep = h
        clipped = False
        if (t + hstep - target) * direction > 0.0:
            hstep = target - t
            clipped = True

        nsteps += 1
        if nsteps > max_steps:
            return y, MAX_STEPS, nsteps, nacc, t

        for s in range(13):
            ts = t + ALPHA[s] * hstep
            for i in range(ny):
                a = 0.0
                for j in range(s):
                    b = BETA[s, j]
                    if b != 0.0:
                        a += b * k[j, i]
                ystage[i] = y[i] + hstep * a
            st = _rhs(ts, ystage, P, nphi, npsi, qcodes, qp, dy, acc, H,
                      cm, cmu, scr_a, scr_b)
            if st != 0:
                return y, SINGULAR, nsteps, nacc, t
            for i in range(ny):
                k[s, i] = dy[i]

        errn = 0.0
        for i in range(ny):
            a = 0.0
            for s in range(13):
                c = C8[s]
                if c != 0.0:
                    a += c * k[s, i]
            ynew[i] = y[i] + hstep * a
            ev = hstep * ERR_W * (k[0, i] + k[10, i] - k[11, i] - k[12, i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            r = ev / sc
            errn += r * r
        errn = np.sqrt(errn / ny)

        if errn > 0.0:
            fac = 0.9 * errn ** (-0.125)
            if fac < 0.2:
                fac = 0.2
            elif fac > 5.0:
                fac = 5.0
        else:
            fac = 5.0

        if errn <= 1.0:
            nacc += 1
            t = target if clipped else t + hstep
            for i in range(ny):
                y[i] = ynew[i]
            if clipped and iev < nev:
                while iev < nev and t_eval[iev] == t:
                    for i in range(ny):
                        y_eval[iev, i] = y[i]
                    iev += 1
            if (t - t1) * direction >= 0.0 and iev >= nev:
                return y, OK, nsteps, nacc, t
            # a clipped step says nothing about the natural step size,
            # so only adapt h after full-size steps
            if not clipped:
                h = hstep * fac
        else:
            h = hstep * fac
            if abs(h) < 1e-14 * max(1.0, abs(t)):
                return y, STEP_UNDERFLOW, nsteps, nacc, t
        if hmax > 0.0 and abs(h) > hmax:
            h = hmax * direction
