"""Persistence analysis of CR3BP periodic orbits under the pi-periodic
forcing that switches on for m > 0.

The forced field, expanded about m = 0, is f(m) = f_C + m g1 + m^2 g2 +
m^3 g3 + ...  The work integral of the leading non-trivial coefficient
along an unperturbed periodic orbit (a Melnikov-type function M(s, tau0))
selects the states s from which the orbit continues to m > 0.  g1 does no
net work on any closed orbit, so the default order is 2.

Everything here runs on the unperturbed (m = 0) flow.  The heavy lifting
is the riding quadratures of `propagation`; this module supplies the
analytic integrand coefficients, a numeric series-extraction oracle to
cross-check them (and to stand in for the unavailable order-4
coefficient), and the shift/symmetry identities that reduce a survey of
M over the whole orbit to two quadratures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .dynamics import SystemParams, cr3bp_field
from .errors import (DomainError, ExtrapolationError, IdenticallyZeroError,
                     SingularityError)
from .hvo import HvoSeries, _evaluate_signed
from .propagation import (DenseTrajectory, IntegratorConfig, Quadrature,
                          propagate, quad_b2, quad_b3, quad_h2_dot_v,
                          quad_h3_dot_v)

_MSERIES = HvoSeries.load("melnikov")

# linear coefficient of the mean-distance series in the convention used
# for the expansion about m = 0 (so 3*d1 = -2 in the g1 gravity term)
_D1 = -2.0 / 3.0


def _check_off_primary(X, mu):
    x, y, z = X[0], X[1], X[2]
    r1s = (x + mu) ** 2 + y * y + z * z
    r2s = (x - 1.0 + mu) ** 2 + y * y + z * z
    g2 = K.GUARD_RADIUS ** 2
    if r1s < g2 or r2s < g2:
        raise SingularityError("state inside the guard radius of a primary")


def p_matrix(X, mu: float) -> np.ndarray:
    """Gravity-gradient difference matrix at a CR3BP state, assembled from
    its five independent entry formulas."""
    X = np.asarray(X, dtype=float)
    _check_off_primary(X, mu)
    x, y, z = X[0], X[1], X[2]
    pxx, pyy, pzz, dxe, d, _, _, _ = K._p_entries(x, y, z, mu)
    pxy = -dxe * y
    pxz = -dxe * z
    pyz = -d * y * z
    return np.array([[pxx, pxy, pxz],
                     [pxy, pyy, pyz],
                     [pxz, pyz, pzz]])


def p_matrix_outer(X, mu: float) -> np.ndarray:
    """Same matrix from the identity-plus-outer-product grouping
    kappa3*I - 3*(R1 R1^T / r1^5 - R2 R2^T / r2^5); kept as an
    independent assembly for cross-checking."""
    X = np.asarray(X, dtype=float)
    _check_off_primary(X, mu)
    r = X[:3]
    R1 = r + np.array([mu, 0.0, 0.0])
    R2 = r - np.array([1.0 - mu, 0.0, 0.0])
    r1 = np.linalg.norm(R1)
    r2 = np.linalg.norm(R2)
    k3 = 1.0 / r1**3 - 1.0 / r2**3
    return (k3 * np.eye(3)
            - 3.0 * np.outer(R1, R1) / r1**5
            + 3.0 * np.outer(R2, R2) / r2**5)


# oscillation amplitudes of the primaries' relative-position correction:
# the order-2 pair, and the 2*(order 2) + order 3 combination behind h3
_RHO2_X, _RHO2_Y = -1.0, 11.0 / 8.0
_RHO23_X, _RHO23_Y = -19.0 / 6.0, 59.0 / 12.0


def h2(X, alpha: float, mu: float) -> np.ndarray:
    """Order-2 forcing coefficient (the part of g2 that can do net work,
    plus the -z zhat closed-loop term)."""
    X = np.asarray(X, dtype=float)
    c = math.cos(2.0 * alpha)
    s = math.sin(2.0 * alpha)
    x, y, z = X[0], X[1], X[2]
    out = -1.5 * np.array([-c * x + s * y, s * x + c * y, (2.0 / 3.0) * z])
    mm = (1.0 - mu) * mu
    if mm != 0.0:
        rho = np.array([_RHO2_X * c, _RHO2_Y * s, 0.0])
        out -= mm * (p_matrix(X, mu) @ rho)
    return out


def h3(X, alpha: float, mu: float) -> np.ndarray:
    """Order-3 forcing coefficient."""
    X = np.asarray(X, dtype=float)
    mm = (1.0 - mu) * mu
    if mm == 0.0:
        return np.zeros(3)
    rho = np.array([_RHO23_X * math.cos(2.0 * alpha),
                    _RHO23_Y * math.sin(2.0 * alpha), 0.0])
    return -mm * (p_matrix(X, mu) @ rho)


def _cr3bp_accel(X, mu):
    return cr3bp_field(X, mu)[3:6]


def g_terms(X, alpha: float, mu: float, j: int) -> np.ndarray:
    """Analytic coefficient of m^j in the expansion of the forced field's
    acceleration about m = 0, for j in {1, 2, 3}."""
    X = np.asarray(X, dtype=float)
    if j == 1:
        return g1_forms(X, mu)[1]
    f = _cr3bp_accel(X, mu)
    oxv = np.array([-X[4], X[3], 0.0])
    if j == 2:
        return 3.0 * oxv + 1.5 * f + h2(X, alpha, mu)
    if j == 3:
        return h3(X, alpha, mu)
    raise DomainError(f"analytic coefficients exist for j in 1..3, got {j}")


def g1_forms(X, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """The order-1 coefficient in its two equivalent groupings: explicit
    (reflected velocity + centrifugal + series-weighted gravity) and
    compact (2 Omega x v + 2 f).  Returned as a pair for cross-checking;
    they agree identically."""
    X = np.asarray(X, dtype=float)
    _check_off_primary(X, mu)
    x, y = X[0], X[1]
    vx, vy = X[3], X[4]
    gx, gy, gz = K._cr3bp_grav(X[0], X[1], X[2], mu)
    grav = np.array([gx, gy, gz])
    form_a = (2.0 * np.array([vy, -vx, 0.0])
              + 2.0 * np.array([x, y, 0.0]) + 3.0 * _D1 * grav)
    f = _cr3bp_accel(X, mu)
    form_b = 2.0 * np.array([-vy, vx, 0.0]) + 2.0 * f
    return form_a, form_b


# ---------------------------------------------------------------------------
# numeric series extraction


def _annihilating_weights(x: np.ndarray, target: int) -> np.ndarray:
    """Weights A with sum_i A_i x_i^k = delta(k, target) for k up to
    len(x)-1, computed in the scaled variable x/x[0] for conditioning."""
    L = x.shape[0]
    u = x / x[0]
    V = np.vander(u, L, increasing=True).T      # V[k, i] = u_i^k
    rhs = np.zeros(L)
    rhs[target] = 1.0
    W = np.linalg.solve(V, rhs)
    return W / x[0] ** target


def _stencil_params(mu: float, m0: float, levels: int):
    """Kernel parameter rows at +/- m0/2^i plus the squared stencil."""
    h = m0 / 2.0 ** np.arange(levels)
    rows = []
    for hi in h:
        for sgn in (1.0, -1.0):
            ev = _evaluate_signed(_MSERIES, sgn * hi)
            rows.append(ev.kernel_params(mu))
    return h, rows


def _field_accel(X, alpha, p20, acc, hs, cs):
    st = K._field(X, alpha, p20, 0, acc, hs, cs, cs)
    if st != K.OK:
        raise SingularityError("state inside the guard radius of a primary")
    return acc.copy()


def series_extract_oracle(X, alpha: float, mu: float, j: int,
                          m0: float = 1e-2, levels: int = 4) -> np.ndarray:
    """Numeric j-th Taylor coefficient in m of the forced-minus-
    unperturbed acceleration at a frozen state and phase.

    Uses a two-sided stencil m = +/- m0 / 2^i and exact annihilating
    weights on the odd (j odd) or even (j even) part, so every other
    order below the stencil's polynomial degree cancels.  Independent of
    the analytic coefficients; also provides the order-4 coefficient,
    which has no analytic form here.
    """
    if j < 1 or j > 4:
        raise DomainError(f"series extraction supports j in 1..4, got {j}")
    if levels < 3:
        raise DomainError("need at least 3 stencil levels")
    X = np.asarray(X, dtype=float)
    _check_off_primary(X, mu)
    acc = np.empty(3)
    hs = np.empty((3, 3))
    cs = np.empty(3)

    h, rows = _stencil_params(mu, m0, levels)
    p0 = np.zeros(20)
    p0[1] = mu
    p0[2] = 1.0
    F0 = _field_accel(X, alpha, p0, acc, hs, cs)

    seq = np.empty((levels, 3))
    for i in range(levels):
        Fp = _field_accel(X, alpha, rows[2 * i], acc, hs, cs)
        Fm = _field_accel(X, alpha, rows[2 * i + 1], acc, hs, cs)
        if j % 2:
            seq[i] = (Fp - Fm) / (2.0 * h[i])
        else:
            seq[i] = ((Fp + Fm) / 2.0 - F0) / h[i] ** 2

    x = h * h
    target = (j - 1) // 2          # coefficient of x^target in the sequence
    west = _annihilating_weights(x, target) @ seq
    wchk = _annihilating_weights(x[:-1], target) @ seq[:-1]
    scale = max(1.0, float(np.linalg.norm(west)))
    tol = {1: 1e-6, 2: 1e-5, 3: 1e-3, 4: 5e-2}[j] * scale
    if float(np.linalg.norm(west - wchk)) > tol:
        raise ExtrapolationError(
            f"stencil estimates disagree at order {j}: "
            f"{np.linalg.norm(west - wchk):.3e} vs tolerance {tol:.3e}")
    return west


def quad_h4_dot_v(tau0: float, mu: float, m0: float = 1e-2,
                  levels: int = 4) -> Quadrature:
    """Riding-quadrature integrand: numeric order-4 forcing coefficient
    dotted with velocity (same stencil as the oracle, evaluated by the
    compiled kernel at every integration stage)."""
    if 3 + levels + 40 * levels > K.QP_MAX:
        raise DomainError(f"stencil with {levels} levels exceeds the "
                          "compiled parameter budget")
    h, rows = _stencil_params(mu, m0, levels)
    x = h * h
    A = _annihilating_weights(x, 1)
    V = A / x                       # applied to raw +/- averages
    qp = np.empty(3 + levels + 40 * levels)
    qp[0] = tau0
    qp[1] = mu
    qp[2] = float(levels)
    qp[3:3 + levels] = V
    for k, row in enumerate(rows):
        qp[3 + levels + 20 * k:3 + levels + 20 * (k + 1)] = row
    return Quadrature(K.Q_H4V, qp)


# ---------------------------------------------------------------------------
# the persistence function on a resonant orbit


def _resonance(T_star: float, tol: float = 1e-9, bound: int = 64):
    """Smallest coprime (a, b) with b*pi = a*T_star within tol, or None."""
    if T_star <= 0.0:
        raise DomainError("period must be positive")
    frac = Fraction(T_star / math.pi).limit_denominator(bound)
    a, b = frac.denominator, frac.numerator
    if b < 1 or b > bound or abs(b * math.pi - a * T_star) > tol:
        return None
    return a, b


@dataclass(eq=False)
class ResonantOrbit:
    """A CR3BP periodic orbit whose period is commensurate with the
    forcing period pi (b*pi = a*T_star, gcd(a, b) = 1), wrapped with a
    dense trajectory so states at arbitrary phase s are cheap."""

    X0: np.ndarray
    T_star: float
    a: int
    b: int
    mu: float
    params: SystemParams = field(repr=False, default=None)
    dense: DenseTrajectory = field(repr=False, default=None)
    periodicity_defect: float = 0.0
    vscale: float = 0.0

    def state_at(self, s: float) -> np.ndarray:
        return self.dense.state_at(s % self.T_star)


def resonant_orbit(X0, T_star: float, mu: float, a: int | None = None,
                   b: int | None = None, tol: float = 1e-9,
                   config: IntegratorConfig | None = None) -> ResonantOrbit:
    if a is None or b is None:
        res = _resonance(T_star, tol)
        if res is None:
            raise DomainError(
                f"period {T_star} is not commensurate with pi within {tol}")
        a, b = res
    if math.gcd(a, b) != 1:
        raise DomainError(f"resonance ({a}, {b}) is not in lowest terms")
    if abs(b * math.pi - a * T_star) > tol:
        raise DomainError(
            f"|b*pi - a*T| = {abs(b * math.pi - a * T_star):.3e} > {tol}")
    X0 = np.asarray(X0, dtype=float)
    params = SystemParams(mu=mu, m=0.0)
    dense = DenseTrajectory(X0, params, 0.0, T_star, config)
    defect = float(np.linalg.norm(dense.states[-1] - X0))
    vscale = float(np.max(np.linalg.norm(dense.states[:, 3:6], axis=1)))
    return ResonantOrbit(X0=X0, T_star=float(T_star), a=a, b=b, mu=mu,
                         params=params, dense=dense,
                         periodicity_defect=defect, vscale=vscale)


_ORDER_CODES = {2: 2, 3: 3, 4: 4, "h2": 2, "h3": 3, "h4": 4, "numeric": 4}


def _order_code(order) -> int:
    try:
        return _ORDER_CODES[order]
    except KeyError:
        raise DomainError(f"unknown order {order!r}; use 2, 3 or 4") from None


def _order_quadrature(code: int, tau0: float, mu: float) -> Quadrature:
    if code == 2:
        return quad_h2_dot_v(tau0, mu)
    if code == 3:
        return quad_h3_dot_v(tau0, mu)
    return quad_h4_dot_v(tau0, mu)


def melnikov_eval(orbit: ResonantOrbit, s: float, tau0: float,
                  order=2, config: IntegratorConfig | None = None) -> float:
    """Work integral of the order coefficient along the unperturbed orbit
    from phase s, with forcing phase starting at tau0, over a*T_star."""
    code = _order_code(order)
    quad = _order_quadrature(code, tau0, orbit.mu)
    res = propagate(orbit.state_at(s), orbit.params, 0.0,
                    orbit.a * orbit.T_star, config, quadratures=[quad])
    return float(res.quadratures[0])


@dataclass(frozen=True)
class MelnikovBasis:
    """Two quadrature values that determine M everywhere on the orbit:
    M(s_ref + t, tau0_ref) = cos(2t) M0 + sin(2t) M1."""

    M0: float
    M1: float
    s_ref: float
    tau0_ref: float
    order: int
    T_star: float
    a: int
    b: int
    identically_zero: bool
    sinusoid_ok: bool
    scale: float
    orbit: ResonantOrbit = field(repr=False, compare=False, default=None)

    def reconstruct(self, s: float, tau0: float | None = None) -> float:
        """M at any (s, tau0) from the two stored values, via the shift
        identities (phase shift in tau0 maps to an opposite shift in s)."""
        t = s - self.s_ref
        if tau0 is not None:
            t -= tau0 - self.tau0_ref
        return (math.cos(2.0 * t) * self.M0 + math.sin(2.0 * t) * self.M1)


_BASIS_CONFIG = IntegratorConfig(rtol=1e-13, atol=1e-13)


def melnikov_basis(orbit: ResonantOrbit, order=2,
                   config: IntegratorConfig | None = None) -> MelnikovBasis:
    code = _order_code(order)
    # the identically-zero classification compares the quadratures against
    # a 1e-10-level threshold, so their own noise has to sit below it
    if config is None:
        config = _BASIS_CONFIG
    M0 = melnikov_eval(orbit, 0.0, 0.0, code, config)
    M1 = melnikov_eval(orbit, math.pi / 4.0, 0.0, code, config)
    scale = 1.0 + orbit.vscale
    # the numeric order-4 integrand carries stencil roundoff; its zero
    # threshold has to sit above that noise floor
    thresh = 1e-10 * scale if code < 4 else 1e-4 * scale
    dead = max(abs(M0), abs(M1)) < thresh
    sin_ok = True
    if code == 4 and not dead:
        # the two-value reconstruction is proven only for the analytic
        # orders; spot-check it before trusting analytic zero-finding
        ref = max(abs(M0), abs(M1))
        for s_chk in (0.23 * orbit.T_star, 0.61 * orbit.T_star):
            direct = melnikov_eval(orbit, s_chk, 0.0, code, config)
            recon = (math.cos(2.0 * s_chk) * M0
                     + math.sin(2.0 * s_chk) * M1)
            if abs(direct - recon) > 1e-3 * max(ref, thresh):
                sin_ok = False
                break
    return MelnikovBasis(M0=M0, M1=M1, s_ref=0.0, tau0_ref=0.0, order=code,
                         T_star=orbit.T_star, a=orbit.a, b=orbit.b,
                         identically_zero=dead, sinusoid_ok=sin_ok,
                         scale=scale, orbit=orbit)


def melnikov_zeros(basis: MelnikovBasis) -> np.ndarray:
    """All zeros of s -> M(s, tau0_ref) in [0, T_star), sorted; they
    recur at spacing pi/2."""
    if basis.identically_zero:
        raise IdenticallyZeroError(
            f"persistence function is identically zero at order "
            f"{basis.order}; escalate to order {basis.order + 1}")
    if basis.order == 4 and not basis.sinusoid_ok:
        return _zeros_by_sampling(basis)
    half = 0.5 * math.atan2(-basis.M0, basis.M1)
    base = (half + basis.s_ref) % (0.5 * math.pi)
    zeros = []
    z = base
    while z < basis.T_star - 1e-12:
        zeros.append(z)
        z += 0.5 * math.pi
    return np.array(zeros)


def _zeros_by_sampling(basis: MelnikovBasis, n: int = 64) -> np.ndarray:
    """Sign-change bisection fallback for a numeric order whose sinusoid
    spot-check failed."""
    orbit = basis.orbit
    ss = np.linspace(0.0, basis.T_star, n, endpoint=False)
    vals = np.array([melnikov_eval(orbit, s, basis.tau0_ref, basis.order)
                     for s in ss])
    zeros = []
    for i in range(n):
        j = (i + 1) % n
        a, b = vals[i], vals[j]
        if a == 0.0:
            zeros.append(ss[i])
            continue
        if a * b >= 0.0:
            continue
        lo, hi = ss[i], ss[i] + basis.T_star / n
        flo = a
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            fm = melnikov_eval(orbit, mid % basis.T_star, basis.tau0_ref,
                               basis.order)
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
            if hi - lo < 1e-10:
                break
        zeros.append(0.5 * (lo + hi) % basis.T_star)
    return np.sort(np.array(zeros))


# ---------------------------------------------------------------------------
# half-period symmetry reduction


class HalfPeriodForm(NamedTuple):
    A: float
    B: float
    value: float


def check_half_period_symmetry(orbit: ResonantOrbit, s: float,
                               n_grid: int = 64, tol: float = 1e-8):
    """Evaluate the five mirror conditions relating states at s + tau and
    s + T* - tau on a grid over half the period.  Returns (ok, residuals)
    with one max-residual per condition (x even, x' odd, y odd, y' even,
    z z' odd)."""
    T = orbit.T_star
    taus = np.linspace(0.0, 0.5 * T, n_grid)
    Xs = orbit.state_at(s)
    fwd = propagate(Xs, orbit.params, 0.0, 0.5 * T,
                    t_eval=taus).states
    bwd = propagate(Xs, orbit.params, 0.0, T,
                    t_eval=(T - taus)[::-1].copy()).states[::-1]
    res = np.array([
        np.max(np.abs(bwd[:, 0] - fwd[:, 0])),
        np.max(np.abs(bwd[:, 3] + fwd[:, 3])),
        np.max(np.abs(bwd[:, 1] + fwd[:, 1])),
        np.max(np.abs(bwd[:, 4] - fwd[:, 4])),
        np.max(np.abs(bwd[:, 2] * bwd[:, 5] + fwd[:, 2] * fwd[:, 5])),
    ])
    return bool(np.max(res) <= tol), res


def half_period_form(orbit: ResonantOrbit, s: float, tau0: float,
                     order=2,
                     config: IntegratorConfig | None = None) -> HalfPeriodForm:
    """At a half-period-symmetric phase s the work integral collapses to
    2*A*B with A = sin(2 tau0) (a = 1; zero otherwise) and B a single
    half-period quadrature."""
    code = _order_code(order)
    if code == 4:
        raise DomainError(
            "the half-period reduction applies to the analytic orders 2, 3")
    ok, res = check_half_period_symmetry(orbit, s)
    if not ok:
        worst = int(np.argmax(res))
        raise DomainError(
            f"phase s = {s} is not half-period symmetric: condition "
            f"{worst + 1} of 5 has residual {res[worst]:.3e}")
    A = math.sin(2.0 * tau0) if orbit.a == 1 else 0.0
    quad = quad_b2(orbit.mu) if code == 2 else quad_b3(orbit.mu)
    pres = propagate(orbit.state_at(s), orbit.params, 0.0,
                     0.5 * orbit.T_star, config, quadratures=[quad])
    B = float(pres.quadratures[0])
    return HalfPeriodForm(A=A, B=B, value=2.0 * A * B)


def sine_sum(a: int, b: int, tau0: float) -> float:
    """Direct evaluation of sum_k sin(2 (tau0 + k T*)) over the a forcing-
    commensurate repeats; collapses to sin(2 tau0) for a = 1 and to zero
    otherwise."""
    T_star = b * math.pi / a
    return float(sum(math.sin(2.0 * (tau0 + k * T_star)) for k in range(a)))
