"""Adaptive propagation with variational blocks and riding quadratures.

The hot path is the jitted Fehlberg 7(8) driver in :mod:`hr4bp._kernels`;
state, state-transition matrix, parameter-sensitivity columns and any
registered scalar quadratures are integrated together in one augmented
vector.  Sample times in ``t_eval`` are hit exactly (the step is clamped
to land on them), never interpolated.

Quadratures come in two flavors: named built-ins (compiled, listed in
``BUILTIN_QUADRATURES``) and arbitrary Python callables ``f(X, t)``,
which force the slower pure-numpy driver with identical tableau and
step-control logic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import (SystemParams, hr4bp_field, jacobian_A,
                       param_partials_C)
from .errors import ConvergenceError, SingularityError

GUARD_RADIUS = K.GUARD_RADIUS


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-12
    atol: float = 1e-12
    hmax: float = 0.0          # 0 disables the cap
    h0: float = 0.0            # 0 picks automatically


class Quadrature(NamedTuple):
    """Low-level compiled quadrature: integrand code + parameter row."""
    code: int
    qp: np.ndarray


def quad_one() -> Quadrature:
    return Quadrature(K.Q_ONE, np.zeros(0))


def quad_zz_prime() -> Quadrature:
    return Quadrature(K.Q_ZZP, np.zeros(0))


def quad_g1_dot_v(mu: float) -> Quadrature:
    return Quadrature(K.Q_G1V, np.array([mu]))


def quad_h2_dot_v(tau0: float, mu: float) -> Quadrature:
    return Quadrature(K.Q_H2V, np.array([tau0, mu]))


def quad_h3_dot_v(tau0: float, mu: float) -> Quadrature:
    return Quadrature(K.Q_H3V, np.array([tau0, mu]))


def quad_b2(mu: float) -> Quadrature:
    return Quadrature(K.Q_B2, np.array([mu]))


def quad_b3(mu: float) -> Quadrature:
    return Quadrature(K.Q_B3, np.array([mu]))


BUILTIN_QUADRATURES = {
    "one": quad_one,
    "zz_prime": quad_zz_prime,
    "g1_dot_v": quad_g1_dot_v,
    "h2_dot_v": quad_h2_dot_v,
    "h3_dot_v": quad_h3_dot_v,
    "b2": quad_b2,
    "b3": quad_b3,
}

_STATUS_MSG = {
    K.SINGULAR: "trajectory entered the singularity guard radius",
    K.STEP_UNDERFLOW: "step size underflow",
    K.MAX_STEPS: "step budget exhausted",
}


@dataclass
class PropagationResult:
    X: np.ndarray
    tau0: float
    tau_f: float
    Phi: np.ndarray | None = None
    Psi: np.ndarray | None = None
    quadratures: np.ndarray | None = None
    t_eval: np.ndarray | None = None
    states: np.ndarray | None = None
    aug_samples: np.ndarray | None = None
    nsteps: int = 0
    naccepted: int = 0


def propagate(X0, params: SystemParams, tau0: float, tauf: float,
              config: IntegratorConfig | None = None, stm: bool = False,
              psi: str | None = None,
              quadratures: Sequence[Quadrature | Callable] = (),
              t_eval=None) -> PropagationResult:
    """Propagate from epoch tau0 to tauf (either direction).

    psi: None, 'm', or 'both' ('both' adds the mu column).  Requesting
    psi implies the state-transition matrix.  Raises SingularityError or
    ConvergenceError on abnormal termination.
    """
    cfg = config or IntegratorConfig()
    X0 = np.asarray(X0, dtype=float)
    if X0.shape != (6,):
        raise ValueError("X0 must be a 6-vector")
    npsi = {"m": 1, "both": 2, None: 0}[psi]
    nphi = 1 if (stm or npsi > 0) else 0

    compiled = all(isinstance(q, Quadrature) for q in quadratures)
    nq = len(quadratures)

    ny = 6 + (36 + 6 * npsi if nphi else 0) + nq
    y0 = np.zeros(ny)
    y0[:6] = X0
    if nphi:
        y0[6:42] = np.eye(6).ravel()

    if t_eval is None:
        tev = np.empty(0)
    else:
        tev = np.asarray(t_eval, dtype=float)
    y_eval = np.empty((tev.shape[0], ny))

    if compiled:
        qcodes = np.array([q.code for q in quadratures], dtype=np.int64)
        qp = np.zeros((max(nq, 1), K.QP_MAX))
        for i, q in enumerate(quadratures):
            qp[i, :q.qp.shape[0]] = q.qp
        yf, status, nsteps, nacc, t_reached = K.propagate_core(
            y0, tau0, tauf, params.kernel(), nphi, npsi, qcodes, qp,
            cfg.rtol, cfg.atol, cfg.hmax, cfg.h0, tev, y_eval)
    else:
        yf, status, nsteps, nacc, t_reached = _propagate_py(
            y0, tau0, tauf, params, nphi, npsi, quadratures, cfg, tev,
            y_eval)

    if status == K.SINGULAR:
        raise SingularityError(
            f"{_STATUS_MSG[status]} at tau = {t_reached:.6f}")
    if status != K.OK:
        raise ConvergenceError(
            f"{_STATUS_MSG.get(status, status)} at tau = {t_reached:.6f}")

    res = PropagationResult(X=yf[:6].copy(), tau0=tau0, tau_f=tauf,
                            nsteps=nsteps, naccepted=nacc)
    if nphi:
        res.Phi = yf[6:42].reshape(6, 6).copy()
    if npsi:
        res.Psi = yf[42:42 + 6 * npsi].reshape(npsi, 6).T.copy()
    if nq:
        res.quadratures = yf[ny - nq:].copy()
    if tev.shape[0]:
        res.t_eval = tev
        res.states = y_eval[:, :6].copy()
        res.aug_samples = y_eval
    return res


def _propagate_py(y0, t0, t1, params, nphi, npsi, quads, cfg, tev, y_eval):
    """Reference python driver: same tableau, supports callable
    integrands (and compiled codes, via _quad_rate)."""
    ALPHA, BETA, C8, ERR_W = K.ALPHA, K.BETA, K.C8, K.ERR_W
    ny = y0.shape[0]
    nq = len(quads)
    scr_a = np.empty(3)
    scr_b = np.empty(3)

    def rhs(t, y):
        dy = np.empty(ny)
        X = y[:6]
        dy[:6] = hr4bp_field(X, params, t)
        if nphi:
            A = jacobian_A(X, params, t)
            Phi = y[6:42].reshape(6, 6)
            dy[6:42] = (A @ Phi).ravel()
            if npsi:
                C = param_partials_C(X, params, t)
                for jp in range(npsi):
                    col = y[42 + 6 * jp:48 + 6 * jp]
                    dy[42 + 6 * jp:48 + 6 * jp] = A @ col + C[:, jp]
        qbase = ny - nq
        for i, q in enumerate(quads):
            if isinstance(q, Quadrature):
                qp = np.zeros(K.QP_MAX)
                qp[:q.qp.shape[0]] = q.qp
                dy[qbase + i] = K._quad_rate(q.code, X, t, qp, scr_a, scr_b)
            else:
                dy[qbase + i] = q(X, t)
        return dy

    t = t0
    y = y0.copy()
    if t1 == t0:
        return y, K.OK, 0, 0, t
    direction = 1.0 if t1 > t0 else -1.0
    h = (cfg.h0 if cfg.h0 > 0.0 else min(0.05, 0.25 * abs(t1 - t0)))
    if cfg.hmax > 0.0:
        h = min(h, cfg.hmax)
    h *= direction
    kk = np.empty((13, ny))
    iev, nev = 0, tev.shape[0]
    nsteps = nacc = 0
    while True:
        target = tev[iev] if iev < nev else t1
        if (t - target) * direction >= 0.0:
            if iev < nev:
                y_eval[iev] = y
                iev += 1
                continue
            return y, K.OK, nsteps, nacc, t
        hstep = h
        clipped = False
        if (t + hstep - target) * direction > 0.0:
            hstep = target - t
            clipped = True
        nsteps += 1
        if nsteps > 500_000:
            return y, K.MAX_STEPS, nsteps, nacc, t
        try:
            for s in range(13):
                ys = y + hstep * (BETA[s, :s] @ kk[:s])
                kk[s] = rhs(t + ALPHA[s] * hstep, ys)
        except SingularityError:
            return y, K.SINGULAR, nsteps, nacc, t
        ynew = y + hstep * (C8 @ kk)
        ev = hstep * ERR_W * (kk[0] + kk[10] - kk[11] - kk[12])
        sc = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(ynew))
        errn = np.sqrt(np.mean((ev / sc) ** 2))
        fac = min(5.0, max(0.2, 0.9 * errn ** (-0.125))) if errn > 0 else 5.0
        if errn <= 1.0:
            nacc += 1
            t = target if clipped else t + hstep
            y = ynew
            if clipped:
                while iev < nev and tev[iev] == t:
                    y_eval[iev] = y
                    iev += 1
            if (t - t1) * direction >= 0.0 and iev >= nev:
                return y, K.OK, nsteps, nacc, t
            if not clipped:
                h = hstep * fac
        else:
            h = hstep * fac
            if abs(h) < 1e-14 * max(1.0, abs(t)):
                return y, K.STEP_UNDERFLOW, nsteps, nacc, t
        if cfg.hmax > 0.0 and abs(h) > cfg.hmax:
            h = cfg.hmax * direction


class DenseTrajectory:
    """Queryable trajectory: a cached grid of exactly-hit samples plus
    re-propagation from the nearest cached node for off-grid epochs, so
    every query is at full integrator accuracy."""

    def __init__(self, X0, params: SystemParams, tau0: float, tau1: float,
                 config: IntegratorConfig | None = None, n_nodes: int = 257):
        if not tau1 > tau0:
            raise ValueError("DenseTrajectory requires tau1 > tau0")
        self.params = params
        self.config = config or IntegratorConfig()
        self.tau0 = float(tau0)
        self.tau1 = float(tau1)
        self.grid = np.linspace(tau0, tau1, n_nodes)
        res = propagate(X0, params, tau0, tau1, self.config,
                        t_eval=self.grid)
        self.states = res.states
        self.X0 = np.asarray(X0, dtype=float)

    def state_at(self, tau: float) -> np.ndarray:
        if not (min(self.tau0, self.tau1) - 1e-12 <= tau
                <= max(self.tau0, self.tau1) + 1e-12):
            raise ValueError(f"tau {tau} outside [{self.tau0}, {self.tau1}]")
        i = int(np.searchsorted(self.grid, tau, side="right") - 1)
        i = min(max(i, 0), self.grid.shape[0] - 1)
        t_node = self.grid[i]
        if tau == t_node:
            return self.states[i].copy()
        res = propagate(self.states[i], self.params, t_node, tau,
                        self.config)
        return res.X
