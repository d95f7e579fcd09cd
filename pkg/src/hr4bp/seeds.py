"""Unperturbed-system (m = 0) seed orbits: libration points, planar and
vertical Lyapunov orbits, halo orbits and near-rectilinear members, with
period tuning to forcing-commensurate targets T* = b pi / a.

Construction pipeline: analytic linear or third-order guess, shooting
corrector (mirror half-period targeting where the family has the
symmetry, anchored least-squares otherwise), then natural-parameter
amplitude walks with a secant refinement to land on a requested period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dynamics import SystemParams, cr3bp_field, jacobi_constant, jacobian_A
from .errors import ConvergenceError, DomainError, SingularityError
from .melnikov import _resonance
from .propagation import IntegratorConfig, propagate

_TIGHT = IntegratorConfig(rtol=1e-13, atol=1e-13)


# ---------------------------------------------------------------------------
# libration points


@dataclass(frozen=True)
class LibrationPoint:
    index: int
    position: np.ndarray
    mu: float

    @property
    def state(self) -> np.ndarray:
        out = np.zeros(6)
        out[:3] = self.position
        return out


def _collinear_gradient(x: float, mu: float) -> float:
    r1 = x + mu
    r2 = x - 1.0 + mu
    return (x - (1.0 - mu) * r1 / abs(r1) ** 3 - mu * r2 / abs(r2) ** 3)


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (flo > 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < 1e-16 * max(1.0, abs(lo)):
            break
    return 0.5 * (lo + hi)


def libration_points(mu: float) -> list[LibrationPoint]:
    """The five equilibria: collinear ones by bisection of the on-axis
    force balance, triangular ones in closed form."""
    if not 0.0 < mu < 0.5:
        raise DomainError(f"mass ratio must lie in (0, 1/2), got {mu}")
    g = lambda x: _collinear_gradient(x, mu)
    eps = 1e-7
    x1 = _bisect(g, -mu + eps, 1.0 - mu - eps)
    x2 = _bisect(g, 1.0 - mu + eps, 2.5)
    x3 = _bisect(g, -2.5, -mu - eps)
    half = 0.5 - mu
    s32 = math.sqrt(3.0) / 2.0
    pts = [
        LibrationPoint(1, np.array([x1, 0.0, 0.0]), mu),
        LibrationPoint(2, np.array([x2, 0.0, 0.0]), mu),
        LibrationPoint(3, np.array([x3, 0.0, 0.0]), mu),
        LibrationPoint(4, np.array([half, s32, 0.0]), mu),
        LibrationPoint(5, np.array([half, -s32, 0.0]), mu),
    ]
    for p in pts:
        resid = np.max(np.abs(cr3bp_field(p.state, mu)))
        if resid > 1e-12:
            raise ConvergenceError(
                f"L{p.index} residual {resid:.2e} exceeds 1e-12")
    return pts


def libration_point(index: int, mu: float) -> LibrationPoint:
    return libration_points(mu)[index - 1]


# ---------------------------------------------------------------------------
# seed record


@dataclass
class Cr3bpSeed:
    """A corrected unperturbed periodic orbit, optionally tagged with the
    coprime (a, b) resonance b*pi = a*T_star."""

    family: str
    X0: np.ndarray
    T_star: float
    mu: float
    a: Optional[int] = None
    b: Optional[int] = None
    jacobi: float = 0.0
    residual: float = 0.0

    def as_dict(self) -> dict:
        return {
            "family": self.family,
            "X0": [float(v) for v in self.X0],
            "T_star": float(self.T_star),
            "mu": float(self.mu),
            "a": self.a,
            "b": self.b,
            "jacobi": float(self.jacobi),
            "residual": float(self.residual),
        }

    @staticmethod
    def from_dict(d: dict) -> "Cr3bpSeed":
        return Cr3bpSeed(family=d["family"], X0=np.array(d["X0"], float),
                         T_star=float(d["T_star"]), mu=float(d["mu"]),
                         a=d.get("a"), b=d.get("b"),
                         jacobi=float(d.get("jacobi", 0.0)),
                         residual=float(d.get("residual", 0.0)))


def resonance_of(T_star: float, tol: float = 1e-9, bound: int = 64):
    """Smallest coprime (a, b) with b*pi = a*T_star within tol, else None."""
    return _resonance(T_star, tol, bound)


# ---------------------------------------------------------------------------
# correctors


def _params(mu: float) -> SystemParams:
    return SystemParams(mu=mu, m=0.0)


def _verify_seed(family: str, X0, T: float, mu: float,
                 free_cols=None) -> Cr3bpSeed:
    """Re-propagate a corrected orbit at tight tolerance and package it.

    Strongly unstable members (near-rectilinear ones especially) show a
    fresh-propagation defect amplified by the monodromy even when the
    corrector residual is tiny, so when free_cols is given the state is
    polished against the verification map itself, moving only those
    components to preserve the family's symmetry form.
    """
    X = np.asarray(X0, float).copy()
    p = _params(mu)
    F = propagate(X, p, 0.0, T, _TIGHT).X - X
    defect = float(np.linalg.norm(F))
    if defect > 1e-10 and free_cols is not None:
        # chase the fixed point of the verification map itself; directions
        # with tiny singular values (the orbit family at fixed period) are
        # cut off, they only let integration noise push the state away
        cols = list(free_cols)
        best = (defect, X.copy())
        for _ in range(8):
            resJ = propagate(X, p, 0.0, T, _TIGHT, stm=True)
            J = (resJ.Phi - np.eye(6))[:, cols]
            step = np.linalg.lstsq(J, -F, rcond=1e-8)[0]
            n = np.linalg.norm(step)
            if n > 1e-5:
                step *= 1e-5 / n
            X[cols] += step
            F = propagate(X, p, 0.0, T, _TIGHT).X - X
            defect = float(np.linalg.norm(F))
            if defect < best[0]:
                best = (defect, X.copy())
            if defect <= 1e-11:
                break
        defect, X = best
    if defect > 1e-10:
        raise ConvergenceError(
            f"{family}: full-period defect {defect:.2e} exceeds 1e-10")
    ab = resonance_of(T)
    a, b = ab if ab is not None else (None, None)
    return Cr3bpSeed(family=family, X0=X, T_star=float(T), mu=mu, a=a, b=b,
                     jacobi=jacobi_constant(X, mu), residual=defect)


def _correct_mirror(X0, T2, mu, planar, tol=1e-12, max_iter=25,
                    fix_period=False, config=None):
    """Half-period targeting for orbits symmetric about the xz-plane.

    X0 must be in mirror form (y = x' = z' = 0).  With the duration
    free, spatial orbits keep z0 pinned as the family parameter and
    solve (x0, y0', T/2) for y = x' = z' = 0 at the half period, while
    planar orbits keep x0 pinned and solve (y0', T/2).  With fix_period
    the duration is held exactly and the former pin is freed instead,
    which lands on the family member of a prescribed period.
    """
    X = np.asarray(X0, float).copy()
    X[1] = X[3] = X[5] = 0.0
    T2 = float(T2)
    # keep the targeted duration near its guess: the mirror conditions
    # also hold trivially at T/2 -> 0, a sink Newton must not fall into
    T2_lo, T2_hi = 0.4 * T2, 2.0 * T2
    p = _params(mu)
    for it in range(max_iter):
        res = propagate(X, p, 0.0, T2, config, stm=True)
        Xf, Phi = res.X, res.Phi
        f = cr3bp_field(Xf, mu)
        if planar:
            c = np.array([Xf[1], Xf[3]])
        else:
            c = np.array([Xf[1], Xf[3], Xf[5]])
        if np.linalg.norm(c) < tol:
            return X, 2.0 * T2, it
        if planar and fix_period:
            J = np.array([[Phi[1, 0], Phi[1, 4]],
                          [Phi[3, 0], Phi[3, 4]]])
            cols = (0, 4)
        elif planar:
            J = np.array([[Phi[1, 4], f[1]],
                          [Phi[3, 4], f[3]]])
            cols = (4, "T")
        elif fix_period:
            J = np.array([[Phi[1, 0], Phi[1, 2], Phi[1, 4]],
                          [Phi[3, 0], Phi[3, 2], Phi[3, 4]],
                          [Phi[5, 0], Phi[5, 2], Phi[5, 4]]])
            cols = (0, 2, 4)
        else:
            J = np.array([[Phi[1, 0], Phi[1, 4], f[1]],
                          [Phi[3, 0], Phi[3, 4], f[3]],
                          [Phi[5, 0], Phi[5, 4], f[5]]])
            cols = (0, 4, "T")
        try:
            step = np.linalg.solve(J, -c)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -c, rcond=None)[0]
        n = np.linalg.norm(step)
        if n > 0.2:
            step *= 0.2 / n
        for s, col in zip(step, cols):
            if col == "T":
                T2 += s
            else:
                X[col] += s
        if not fix_period and not T2_lo <= T2 <= T2_hi:
            raise ConvergenceError(
                "half period left its trust window during correction")
    raise ConvergenceError(
        f"mirror corrector: no convergence in {max_iter} iterations "
        f"(|c| = {np.linalg.norm(c):.2e})")


def _correct_anchored(X0, T, mu, pin_extremum=0, planar=True, tol=1e-12,
                      max_iter=25, fix_period=False, config=None):
    """Least-squares shooting for families without the xz-plane mirror
    symmetry.  Phase is anchored at an extremum of one coordinate
    (velocity component zeroed).  With the duration free the extremal
    value itself is held as the amplitude pin; with fix_period the
    duration is the parameter and the pin is dropped."""
    X = np.asarray(X0, float).copy()
    T = float(T)
    T_lo, T_hi = 0.4 * T, 2.0 * T
    p = _params(mu)
    idx = [0, 1, 3, 4] if planar else list(range(6))
    vpin = pin_extremum + 3          # velocity conjugate to the pinned coord
    pin_val = X[pin_extremum]
    for it in range(max_iter):
        res = propagate(X, p, 0.0, T, config, stm=True)
        d = res.X - X
        rows = [d[i] for i in idx]
        rows.append(X[vpin])
        if not fix_period:
            rows.append(X[pin_extremum] - pin_val)
        F = np.array(rows)
        if np.linalg.norm(F) < tol:
            return X, T, it
        f = cr3bp_field(res.X, mu)
        M = res.Phi - np.eye(6)
        ncol = len(idx) + (0 if fix_period else 1)
        J = np.zeros((len(rows), ncol))
        for r, i in enumerate(idx):
            for cidx, jcol in enumerate(idx):
                J[r, cidx] = M[i, jcol]
            if not fix_period:
                J[r, len(idx)] = f[i]
        J[len(idx), idx.index(vpin)] = 1.0
        if not fix_period:
            J[len(idx) + 1, idx.index(pin_extremum)] = 1.0
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        n = np.linalg.norm(step)
        if n > 0.2:
            step *= 0.2 / n
        for cidx, jcol in enumerate(idx):
            X[jcol] += step[cidx]
        if not fix_period:
            T += step[len(idx)]
            if not T_lo <= T <= T_hi:
                raise ConvergenceError(
                    "period left its trust window during correction")
    raise ConvergenceError(
        f"anchored corrector: no convergence in {max_iter} iterations "
        f"(|F| = {np.linalg.norm(F):.2e})")


def correct_cr3bp_orbit(X0, T, mu, constraints: str = "mirror",
                        family: str = "orbit", planar: bool | None = None,
                        tol: float = 1e-12, max_iter: int = 25,
                        fix_period: bool = False) -> Cr3bpSeed:
    """Correct a guessed periodic orbit of the unperturbed system.

    constraints: 'mirror' for xz-plane symmetric families (targets the
    half period), 'anchored' for asymmetric ones (full-period least
    squares with a phase anchor and amplitude pin).  fix_period holds T
    exactly and instead frees the amplitude pin, landing on the family
    member with that period.
    """
    X0 = np.asarray(X0, float)
    if planar is None:
        planar = X0[2] == 0.0 and X0[5] == 0.0
    defect = float(np.linalg.norm(
        propagate(X0, _params(mu), 0.0, T, _TIGHT).X - X0))
    if defect <= 1e-12:
        # already periodic (e.g. an equilibrium treated as a degenerate
        # orbit of any period)
        return _verify_seed(family, X0, T, mu)
    # final period-pinned landings integrate at the verification tolerance
    # so the corrected fixed point and the verified one agree
    cfg = _TIGHT if fix_period else None
    if constraints == "mirror":
        Xc, Tc, _ = _correct_mirror(X0, 0.5 * T, mu, planar, tol, max_iter,
                                    fix_period, cfg)
        cols = (0, 4) if planar else (0, 2, 4)
    elif constraints == "anchored":
        Xc, Tc, _ = _correct_anchored(X0, T, mu, planar=planar, tol=tol,
                                      max_iter=max_iter,
                                      fix_period=fix_period, config=cfg)
        cols = (0, 1, 3, 4) if planar else tuple(range(6))
    else:
        raise DomainError(f"unknown constraint set {constraints!r}")
    return _verify_seed(family, Xc, Tc, mu, cols)


# ---------------------------------------------------------------------------
# linear and third-order guesses


def _planar_modes(L: LibrationPoint):
    """In-plane oscillatory modes at an equilibrium: list of
    (frequency, complex 4-vector over (x, y, x', y')), descending freq."""
    A6 = jacobian_A(L.state, _params(L.mu), 0.0)
    idx = [0, 1, 3, 4]
    A4 = A6[np.ix_(idx, idx)]
    w, V = np.linalg.eig(A4)
    out = []
    for i in range(4):
        if abs(w[i].real) < 1e-9 and w[i].imag > 1e-9:
            out.append((w[i].imag, V[:, i]))
    out.sort(key=lambda t: -t[0])
    return out


def lyapunov_guess(L: LibrationPoint, amplitude: float):
    """Planar Lyapunov initial guess from the linear center mode, phased
    to the mirror crossing (y = x' = 0)."""
    modes = _planar_modes(L)
    if not modes:
        raise ConvergenceError(f"no planar center mode at L{L.index}")
    om, v = modes[0]
    p, q = v.real, v.imag
    theta = math.atan2(p[1], q[1])         # zero the y component
    w = p * math.cos(theta) - q * math.sin(theta)
    if abs(w[0]) < 1e-12:
        raise ConvergenceError("degenerate mode phasing")
    w = w / w[0] * amplitude
    X0 = L.state
    X0[0] += w[0]
    X0[4] += w[3]
    return X0, 2.0 * math.pi / om


def vertical_guess(L: LibrationPoint, z_amplitude: float):
    """Vertical Lyapunov guess at its maximum-z mirror point."""
    A6 = jacobian_A(L.state, _params(L.mu), 0.0)
    uzz = A6[5, 2]
    if uzz >= 0.0:
        raise ConvergenceError("no vertical oscillation at this point")
    om = math.sqrt(-uzz)
    X0 = L.state
    X0[2] = z_amplitude
    return X0, 2.0 * math.pi / om


def _gamma_cn(L: LibrationPoint, n: int) -> float:
    mu = L.mu
    x = L.position[0]
    if L.index == 1:
        g = (1.0 - mu) - x
        return (mu + (-1.0) ** n * (1.0 - mu) * g ** (n + 1)
                / (1.0 - g) ** (n + 1)) / g**3
    if L.index == 2:
        g = x - (1.0 - mu)
        return ((-1.0) ** n * (mu + (1.0 - mu) * g ** (n + 1)
                               / (1.0 + g) ** (n + 1))) / g**3
    if L.index == 3:
        g = -(x + mu)
        return (1.0 - mu + mu * g ** (n + 1) / (1.0 + g) ** (n + 1)) / g**3
    raise DomainError("third-order constants exist for collinear points")


def _gamma_of(L: LibrationPoint) -> float:
    x = L.position[0]
    if L.index == 1:
        return (1.0 - L.mu) - x
    if L.index == 2:
        return x - (1.0 - L.mu)
    return -(x + L.mu)


def halo_guess(L: LibrationPoint, z_amplitude: float, north: bool = True):
    """Third-order periodic-orbit approximation at a collinear point,
    evaluated at its xz-plane crossing; z_amplitude is the out-of-plane
    amplitude in rotating-frame distance units."""
    gam = _gamma_of(L)
    c2 = _gamma_cn(L, 2)
    c3 = _gamma_cn(L, 3)
    c4 = _gamma_cn(L, 4)
    # in-plane frequency: positive root of L^4 + (c2-2) L^2 - (c2-1)(1+2c2)
    qb = c2 - 2.0
    qc = -(c2 - 1.0) * (1.0 + 2.0 * c2)
    lam2 = 0.5 * (-qb + math.sqrt(qb * qb - 4.0 * qc))
    lam = math.sqrt(lam2)
    k = (lam2 + 1.0 + 2.0 * c2) / (2.0 * lam)

    d1 = (3.0 * lam2 / k) * (k * (6.0 * lam2 - 1.0) - 2.0 * lam)
    d2 = (8.0 * lam2 / k) * (k * (11.0 * lam2 - 1.0) - 2.0 * lam)
    a21 = 3.0 * c3 * (k * k - 2.0) / (4.0 * (1.0 + 2.0 * c2))
    a22 = 3.0 * c3 / (4.0 * (1.0 + 2.0 * c2))
    a23 = -(3.0 * c3 * lam / (4.0 * k * d1)) * (
        3.0 * k**3 * lam - 6.0 * k * (k - lam) + 4.0)
    a24 = -(3.0 * c3 * lam / (4.0 * k * d1)) * (2.0 + 3.0 * k * lam)
    b21 = -(3.0 * c3 * lam / (2.0 * d1)) * (3.0 * k * lam - 4.0)
    b22 = 3.0 * c3 * lam / d1
    d21 = -c3 / (2.0 * lam2)
    a31 = (-(9.0 * lam / (4.0 * d2))
           * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k))
           + ((9.0 * lam2 + 1.0 - c2) / (2.0 * d2))
           * (3.0 * c3 * (2.0 * a23 - k * b21) + c4 * (2.0 + 3.0 * k * k)))
    a32 = (-(1.0 / d2)
           * ((9.0 * lam / 4.0) * (4.0 * c3 * (k * a24 - b22) + k * c4)
              + 1.5 * (9.0 * lam2 + 1.0 - c2)
              * (c3 * (k * b22 + d21 - 2.0 * a24) - c4)))
    b31 = ((3.0 / (8.0 * d2))
           * (8.0 * lam * (3.0 * c3 * (k * b21 - 2.0 * a23)
                           - c4 * (2.0 + 3.0 * k * k))
              + (9.0 * lam2 + 1.0 + 2.0 * c2)
              * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k))))
    b32 = ((1.0 / d2)
           * (9.0 * lam * (c3 * (k * b22 + d21 - 2.0 * a24) - c4)
              + 0.375 * (9.0 * lam2 + 1.0 + 2.0 * c2)
              * (4.0 * c3 * (k * a24 - b22) + k * c4)))
    d31 = (3.0 / (64.0 * lam2)) * (4.0 * c3 * a24 + c4)
    d32 = (3.0 / (64.0 * lam2)) * (4.0 * c3 * (a23 - d21)
                                   + c4 * (4.0 + k * k))
    denom = 2.0 * lam * (lam * (1.0 + k * k) - 2.0 * k)
    s1 = (1.0 / denom) * (
        1.5 * c3 * (2.0 * a21 * (k * k - 2.0) - a23 * (k * k + 2.0)
                    - 2.0 * k * b21)
        - 0.375 * c4 * (3.0 * k**4 - 8.0 * k * k + 8.0))
    s2 = (1.0 / denom) * (
        1.5 * c3 * (2.0 * a22 * (k * k - 2.0) + a24 * (k * k + 2.0)
                    + 2.0 * k * b22 + 5.0 * d21)
        + 0.375 * c4 * (12.0 - k * k))
    aa1 = (-1.5 * c3 * (2.0 * a21 + a23 + 5.0 * d21)
           - 0.375 * c4 * (12.0 - k * k))
    aa2 = 1.5 * c3 * (a24 - 2.0 * a22) + 1.125 * c4
    l1 = aa1 + 2.0 * lam2 * s1
    l2 = aa2 + 2.0 * lam2 * s2
    Delta = lam2 - c2

    Az = z_amplitude / gam
    ax2 = -(Delta + l2 * Az * Az) / l1
    if ax2 <= 0.0:
        raise DomainError(
            f"no third-order member at z amplitude {z_amplitude}")
    Ax = math.sqrt(ax2)
    om = 1.0 + s1 * Ax * Ax + s2 * Az * Az
    dn = 1.0 if north else -1.0

    x = (a21 * Ax * Ax + a22 * Az * Az - Ax + (a23 * Ax * Ax
         - a24 * Az * Az) + (a31 * Ax**3 - a32 * Ax * Az * Az))
    z = dn * (Az - 2.0 * d21 * Ax * Az
              + (d32 * Az * Ax * Ax - d31 * Az**3))
    ydot = lam * om * (k * Ax + 2.0 * (b21 * Ax * Ax - b22 * Az * Az)
                       + 3.0 * (b31 * Ax**3 - b32 * Ax * Az * Az))
    X0 = L.state
    X0[0] += gam * x
    X0[2] = gam * z
    X0[4] = gam * ydot
    return X0, 2.0 * math.pi / (lam * om)


def l4_short_guess(L: LibrationPoint, amplitude: float):
    """Short-period planar guess at a triangular point, phased to the
    x extremum (x' = 0)."""
    modes = _planar_modes(L)
    if len(modes) < 2:
        raise ConvergenceError(f"expected two center modes at L{L.index}")
    om, v = modes[0]                       # larger frequency: short period
    p, q = v.real, v.imag
    theta = math.atan2(p[2], q[2])         # zero the x' component
    w = p * math.cos(theta) - q * math.sin(theta)
    w = w / w[0] * amplitude
    X0 = L.state
    X0[0] += w[0]
    X0[1] += w[1]
    X0[3] += w[2]
    X0[4] += w[3]
    return X0, 2.0 * math.pi / om


# ---------------------------------------------------------------------------
# amplitude families and period tuning


@dataclass
class OrbitFamily:
    """Natural-parameter walker: member(param) returns a corrected seed,
    warm-started from a previous member when provided.  pinned(T, warm)
    solves for the member of exactly that period starting from a nearby
    seed; tune(T) overrides the whole walk for families that need a
    different continuation strategy."""

    name: str
    mu: float
    p_start: float
    p_step: float
    p_max: float
    _member: Callable = field(repr=False, default=None)
    _pinned: Callable = field(repr=False, default=None)
    _tune: Callable = field(repr=False, default=None)

    def member(self, param: float,
               warm: Cr3bpSeed | None = None) -> Cr3bpSeed:
        return self._member(param, warm)

    def pinned(self, T_target: float, warm: Cr3bpSeed) -> Cr3bpSeed:
        if self._pinned is None:
            raise ConvergenceError(f"{self.name}: no pinned-period solver")
        return self._pinned(T_target, warm)


def _mirror_arc_newton(u_pred, t_dir, mu, tol=1e-12, max_iter=25):
    """One pseudo-arclength corrector solve in u = (x0, z0, y0', T/2)
    for the xz-plane symmetric families (mirror conditions at the half
    period)."""
    u = u_pred.copy()
    p = _params(mu)
    for it in range(max_iter):
        X = np.array([u[0], 0.0, u[1], 0.0, u[2], 0.0])
        res = propagate(X, p, 0.0, u[3], stm=True)
        Xf, Phi = res.X, res.Phi
        F = np.array([Xf[1], Xf[3], Xf[5], t_dir @ (u - u_pred)])
        if np.linalg.norm(F) < tol:
            return u, it
        f = cr3bp_field(Xf, mu)
        J = np.zeros((4, 4))
        for r, i in enumerate((1, 3, 5)):
            J[r, 0] = Phi[i, 0]
            J[r, 1] = Phi[i, 2]
            J[r, 2] = Phi[i, 4]
            J[r, 3] = f[i]
        J[3] = t_dir
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        n = np.linalg.norm(step)
        if n > 0.2:
            step *= 0.2 / n
        u = u + step
    raise ConvergenceError("arclength corrector stalled")


def _mirror_arc_tune(tag, mu, seed_a, seed_b, T_target, L_state,
                     max_steps=6000):
    """Pseudo-arclength walk along a mirror-symmetric family until the
    period-pinned corrector can land on T_target exactly.  Walking in
    (x0, z0, y0', T/2) rides through folds in any single coordinate that
    defeat a natural-parameter pin."""

    def pack(s):
        return np.array([s.X0[0], s.X0[2], s.X0[4], 0.5 * s.T_star])

    u_prev, u = pack(seed_a), pack(seed_b)
    t_dir = u - u_prev
    ds = np.linalg.norm(t_dir)
    if ds == 0.0:
        raise ConvergenceError(f"{tag}: identical starter members")
    t_dir /= ds
    ds = min(max(ds, 1e-4), 0.02)
    T0 = 2.0 * u[3]
    window = 0.05     # shrinks when a landing attempt diverges, so the
    # next try happens from a closer member; near-rectilinear members
    # change fast with period and need a tight window
    for _ in range(max_steps):
        gap = abs(2.0 * u[3] - T_target)
        if gap < window:
            X = np.array([u[0], 0.0, u[1], 0.0, u[2], 0.0])
            try:
                return correct_cr3bp_orbit(X, T_target, mu, "mirror",
                                           family=tag, planar=False,
                                           fix_period=True)
            except (ConvergenceError, SingularityError):
                window = max(0.4 * min(window, gap), 1e-7)
        if (T0 - T_target) * (2.0 * u[3] - T_target) < 0.0 and gap > 0.2:
            raise ConvergenceError(
                f"{tag}: walked past period {T_target} without landing")
        if gap > abs(T0 - T_target) + 1.0:
            break
        if gap < 0.02:
            ds = min(ds, max(2.0 * gap, 1e-4))
        for _ in range(40):
            try:
                u_new, iters = _mirror_arc_newton(u + ds * t_dir, t_dir, mu)
                if (abs(u_new[0] - L_state[0]) + abs(u_new[1])
                        + abs(u_new[2])) < 1e-3:
                    raise ConvergenceError("degenerate member")
                break
            except (ConvergenceError, SingularityError):
                ds *= 0.5
                if ds < 1e-9:
                    raise
        t_new = u_new - u
        nrm = np.linalg.norm(t_new)
        if nrm > 0.0:
            t_dir = t_new / nrm
        u_prev, u = u, u_new
        if iters <= 3:
            ds = min(ds * 2.0, 0.02)
    raise ConvergenceError(f"{tag}: arclength walk missed period {T_target}")


def lyapunov_family(L: LibrationPoint, p_start=2e-3, p_step=5e-3,
                    p_max=0.6) -> OrbitFamily:
    # pin the x-axis crossing on the side facing away from the nearer
    # primary so the amplitude walk cannot sweep through it
    sign = 1.0 if L.index == 2 else -1.0

    tag = f"lyapunov-L{L.index}"

    def make(ax, warm):
        if warm is None:
            X0, T = lyapunov_guess(L, sign * ax)
        else:
            X0, T = warm.X0.copy(), warm.T_star
        X0[0] = L.position[0] + sign * ax
        return correct_cr3bp_orbit(X0, T, L.mu, "mirror", family=tag,
                                   planar=True)

    def pinned(T_target, warm):
        return correct_cr3bp_orbit(warm.X0, T_target, L.mu, "mirror",
                                   family=tag, planar=True,
                                   fix_period=True)
    return OrbitFamily(tag, L.mu, p_start, p_step, p_max, make, pinned)


def vertical_family(L: LibrationPoint, p_start=0.05, p_step=0.05,
                    p_max=1.6) -> OrbitFamily:
    tag = f"vertical-L{L.index}"

    def make(az, warm):
        if warm is None:
            X0, T = vertical_guess(L, az)
        else:
            X0, T = warm.X0.copy(), warm.T_star
            X0[2] = az
        return correct_cr3bp_orbit(X0, T, L.mu, "mirror", family=tag,
                                   planar=False)

    def pinned(T_target, warm):
        return correct_cr3bp_orbit(warm.X0, T_target, L.mu, "mirror",
                                   family=tag, planar=False,
                                   fix_period=True)

    def tune(T_target, tol=1e-10):
        a0 = p_start
        sa = make(a0, None)
        sb = make(a0 + 0.5 * p_step, sa)
        return _mirror_arc_tune(tag, L.mu, sa, sb, T_target, L.state)
    return OrbitFamily(tag, L.mu, p_start, p_step, p_max, make, pinned,
                       tune)


def halo_family(L: LibrationPoint, north=True, p_start=0.02, p_step=0.01,
                p_max=0.30) -> OrbitFamily:
    tag = f"halo-{'N' if north else 'S'}-L{L.index}"

    def make(az, warm):
        if warm is None:
            X0, T = halo_guess(L, az, north)
        else:
            X0, T = warm.X0.copy(), warm.T_star
        X0[2] = az if north else -az
        return correct_cr3bp_orbit(X0, T, L.mu, "mirror", family=tag,
                                   planar=False)

    def pinned(T_target, warm):
        return correct_cr3bp_orbit(warm.X0, T_target, L.mu, "mirror",
                                   family=tag, planar=False,
                                   fix_period=True)

    def tune(T_target, tol=1e-10):
        sa = make(p_start, None)
        sb = make(p_start + 0.5 * p_step, sa)
        return _mirror_arc_tune(tag, L.mu, sa, sb, T_target, L.state)
    return OrbitFamily(tag, L.mu, p_start, p_step, p_max, make, pinned,
                       tune)


def _planar_arc_newton(u_pred, t_dir, mu, tol=1e-12, max_iter=25):
    """One pseudo-arclength corrector solve in u = (x0, y0, y0', T) with
    x0' held at zero (phase fixed at an x extremum)."""
    u = u_pred.copy()
    p = _params(mu)
    for it in range(max_iter):
        X = np.array([u[0], u[1], 0.0, 0.0, u[2], 0.0])
        res = propagate(X, p, 0.0, u[3], stm=True)
        d = res.X - X
        F = np.array([d[0], d[1], d[3], d[4], t_dir @ (u - u_pred)])
        if np.linalg.norm(F) < tol:
            return u, it
        f = cr3bp_field(res.X, mu)
        M = res.Phi - np.eye(6)
        J = np.zeros((5, 4))
        for r, i in enumerate((0, 1, 3, 4)):
            J[r, 0] = M[i, 0]
            J[r, 1] = M[i, 1]
            J[r, 2] = M[i, 4]
            J[r, 3] = f[i]
        J[4] = t_dir
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        n = np.linalg.norm(step)
        if n > 0.2:
            step *= 0.2 / n
        u = u + step
    raise ConvergenceError("arclength corrector stalled")


def l4_short_family(L: LibrationPoint, p_start=2e-3, p_step=5e-3,
                    p_max=0.5) -> OrbitFamily:
    tag = f"planar-L{L.index}"
    mu = L.mu

    def make(ax, warm):
        if warm is None:
            X0, T = l4_short_guess(L, ax)
        else:
            X0, T = warm.X0.copy(), warm.T_star
            X0[0] = L.position[0] + ax
        return correct_cr3bp_orbit(X0, T, mu, "anchored", family=tag,
                                   planar=True)

    def pinned(T_target, warm):
        seed = correct_cr3bp_orbit(warm.X0, T_target, mu, "anchored",
                                   family=tag, planar=True,
                                   fix_period=True)
        if np.linalg.norm(seed.X0 - L.state) < 1e-4:
            # every duration is "periodic" at the equilibrium itself
            raise ConvergenceError(f"{tag}: collapsed onto L{L.index}")
        return seed

    def pack(seed):
        return np.array([seed.X0[0], seed.X0[1], seed.X0[4], seed.T_star])

    def size(u):
        return math.hypot(u[0] - L.position[0],
                          u[1] - L.position[1]) + abs(u[2])

    def _land(u, T_target):
        warm = Cr3bpSeed(tag, np.array([u[0], u[1], 0.0, 0.0, u[2], 0.0]),
                         u[3], mu)
        return pinned(T_target, warm)

    def tune(T_target, tol=1e-10):
        # the amplitude measured at the x extremum folds along this
        # family, so walk it by pseudo-arclength in (x0, y0, y0', T);
        # start away from the equilibrium line (x0, y0, 0, any T),
        # which would otherwise capture the corrector.  Each failed
        # landing at a bracketing step halves the step and re-walks the
        # segment, so the attempts come from ever closer members.
        a0 = max(p_start, 0.05)
        s_prev = make(a0, None)
        s_cur = make(a0 + p_step, s_prev)
        u = pack(s_cur)
        t_dir = u - pack(s_prev)
        t_dir /= np.linalg.norm(t_dir)
        ds = 5e-3
        T0 = u[3]
        for _ in range(6000):
            for _ in range(40):
                try:
                    u_new, iters = _planar_arc_newton(u + ds * t_dir,
                                                      t_dir, mu)
                    if size(u_new) < 1e-3:
                        raise ConvergenceError("degenerate member")
                    break
                except (ConvergenceError, SingularityError):
                    ds *= 0.5
                    if ds < 1e-9:
                        raise
            crossed = (u[3] - T_target) * (u_new[3] - T_target) <= 0.0
            gap_new = abs(u_new[3] - T_target)
            if crossed or gap_new < 1e-4:
                base = u_new if gap_new <= abs(u[3] - T_target) else u
                try:
                    return _land(base, T_target)
                except (ConvergenceError, SingularityError):
                    pass
                if crossed:
                    ds *= 0.5
                    if ds < 1e-8:
                        raise ConvergenceError(
                            f"{tag}: landing kept failing near "
                            f"T = {T_target}")
                    continue     # re-step from u with the smaller step
            if abs(u_new[3] - T_target) > abs(T0 - T_target) + 0.5:
                break
            t_new = u_new - u
            nrm = np.linalg.norm(t_new)
            if nrm > 0.0:
                t_dir = t_new / nrm
            u = u_new
            if iters <= 3:
                ds = min(ds * 1.5, 5e-3)
        raise ConvergenceError(
            f"{tag}: arclength walk missed period {T_target}")

    return OrbitFamily(tag, mu, p_start, p_step, p_max, make, pinned, tune)


def tune_period(family: OrbitFamily, T_target: float, tol: float = 1e-10,
                max_members: int = 2000, family_tag: str | None = None
                ) -> Cr3bpSeed:
    """Walk the family until a member sits near the target period, then
    land on it exactly with the period-pinned corrector.  Brackets are
    refined by bisection in the family parameter when the walk steps
    over the target from farther away."""
    if family._tune is not None:
        seed = family._tune(T_target, tol)
        return _finish_tuned(seed, T_target, tol, family_tag)
    p = family.p_start
    step = family.p_step
    hist: list[tuple[float, float, Cr3bpSeed]] = []
    warm = None
    fails = 0
    while len(hist) < max_members:
        try:
            seed = family.member(p, warm)
        except (ConvergenceError, SingularityError):
            step *= 0.5
            fails += 1
            if step < 1e-9 or fails > 80:
                raise ConvergenceError(
                    f"{family.name}: walk stalled before reaching "
                    f"T = {T_target}")
            p = (hist[-1][0] if hist else 0.0) + step
            continue
        warm = seed
        hist.append((p, seed.T_star, seed))
        if abs(seed.T_star - T_target) < 0.05:
            try:
                landed = family.pinned(T_target, seed)
                return _finish_tuned(landed, T_target, tol, family_tag)
            except ConvergenceError:
                pass
        if len(hist) >= 2:
            Ta, Tb = hist[-2][1], hist[-1][1]
            if (Ta - T_target) * (Tb - T_target) <= 0.0:
                return _refine_period(family, hist[-2], hist[-1], T_target,
                                      tol, family_tag)
        if p >= family.p_max:
            break
        p = min(p + step, family.p_max)
    raise ConvergenceError(
        f"{family.name}: period {T_target} not reached by the walk "
        f"(got to T* = {hist[-1][1] if hist else float('nan')})")


def _finish_tuned(seed: Cr3bpSeed, T_target, tol, family_tag):
    if abs(seed.T_star - T_target) > tol:
        raise ConvergenceError(
            f"period-pinned landing off target by "
            f"{abs(seed.T_star - T_target):.2e}")
    if family_tag:
        seed = replace(seed, family=family_tag)
    return seed


def _refine_period(family, lo, hi, T_target, tol, family_tag):
    """Bisection in the family parameter between a bracketing pair,
    switching to the period-pinned corrector once close."""
    (pa, Ta, sa), (pb, Tb, sb) = lo, hi
    warm = sb
    for _ in range(80):
        pm = 0.5 * (pa + pb)
        sm = family.member(pm, warm)
        warm = sm
        Tm = sm.T_star
        if abs(Tm - T_target) < 0.05:
            try:
                landed = family.pinned(T_target, sm)
                return _finish_tuned(landed, T_target, tol, family_tag)
            except ConvergenceError:
                pass
        if abs(Tm - T_target) <= tol:
            return _finish_tuned(sm, T_target, tol, family_tag)
        if (Ta - T_target) * (Tm - T_target) <= 0.0:
            pb, Tb, sb = pm, Tm, sm
        else:
            pa, Ta, sa = pm, Tm, sm
    raise ConvergenceError(
        f"{family.name}: bisection stalled at |dT| = "
        f"{abs(Tm - T_target):.2e}")


def nrho_seed(mu: float, north: bool = False) -> Cr3bpSeed:
    """The 9:2-resonant near-rectilinear member of the L2 halo family
    (T* = 4 pi / 9, forced period 4 pi)."""
    L2 = libration_point(2, mu)
    fam = halo_family(L2, north=north)
    seed = tune_period(fam, 4.0 * math.pi / 9.0,
                       family_tag=f"NRHO-{'N' if north else 'S'}")
    return seed
