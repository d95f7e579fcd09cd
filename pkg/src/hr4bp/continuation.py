"""Fixed-period correction and family continuation of forced periodic orbits.

The forcing has period pi in tau, so closed orbits of the forced system
carry periods T = b*pi with integer b, and a family is a curve in the
7-vector (X0, m).  Periods and the initial epoch tau0 stay frozen; the
corrector solves the periodicity map at fixed m and the family walker
closes the underdetermined system with a pseudo-arclength row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemParams
from .errors import ConvergenceError, DomainError, SingularityError
from .propagation import IntegratorConfig, propagate
from .melnikov import ResonantOrbit

# largest m for which the primaries' variation orbit remains stable; no
# family is continued past it
M_MAX = 0.19510486

_S1_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
_ZFLIP_SIGNS = np.array([1.0, 1.0, -1.0, 1.0, 1.0, -1.0])


def s1_image(X0) -> np.ndarray:
    """Image under the time-reversal mirror symmetry about tau = k*pi:
    (x, y, z, x', y', z') -> (x, -y, z, -x', y', -z')."""
    return np.asarray(X0, dtype=float) * _S1_SIGNS


def z_mirror_image(X0) -> np.ndarray:
    """Image under z -> -z.  The primaries' variation orbit stays in the
    plane, so negating (z, z') maps solutions to solutions with the same
    clock; this is what pairs northern and southern families."""
    return np.asarray(X0, dtype=float) * _ZFLIP_SIGNS


@dataclass
class PeriodicOrbit:
    """One forced periodic orbit: X0 at epoch tau0, period b*pi."""

    X0: np.ndarray
    b: int
    m: float
    mu: float
    tau0: float = 0.0
    residual: float = 0.0
    iterations: int = 0
    monodromy: np.ndarray | None = None
    psi_m: np.ndarray | None = None
    tangent: np.ndarray | None = None

    @property
    def T(self) -> float:
        return self.b * math.pi

    @property
    def params(self) -> SystemParams:
        return SystemParams(mu=self.mu, m=self.m)


@dataclass
class Family:
    """Ordered members of one continuation run plus the walk metadata."""

    provenance: str
    mu: float
    b: int
    tau0: float = 0.0
    members: list[PeriodicOrbit] = field(default_factory=list)
    tangents: list[np.ndarray] = field(default_factory=list)
    sigma_alpha: list[float] = field(default_factory=list)
    sigma_beta: list[float] = field(default_factory=list)
    termination: str = ""

    def __len__(self) -> int:
        return len(self.members)

    @property
    def m_values(self) -> np.ndarray:
        return np.array([po.m for po in self.members])

    def member(self, i: int) -> PeriodicOrbit:
        return self.members[i]


def _shoot(X0, b, tau0, m, mu, config):
    try:
        params = SystemParams(mu=mu, m=m)
    except DomainError as exc:
        # a Newton iterate can exit the admissible m range near a
        # rank-deficient member; report it as a failed step, not a
        # caller error
        raise ConvergenceError(str(exc)) from None
    res = propagate(X0, params, tau0, tau0 + b * math.pi, config,
                    stm=True, psi="m")
    return res.X - X0, res.Phi, res.Psi[:, 0]


def _map_residual(X0, b, tau0, m, mu, config):
    """Periodicity defect without variational columns; used by the damped
    corrector to price a trial step."""
    params = SystemParams(mu=mu, m=m)
    res = propagate(X0, params, tau0, tau0 + b * math.pi, config, stm=False)
    return float(np.linalg.norm(res.X - X0))


def _backtrack(X, delta, r, b, tau0, m, mu, config):
    """Largest halving of the step that actually reduces the periodicity
    defect, or None when none of them does."""
    lam = 1.0
    while lam > 1.0 / 64.0:
        r_try = _map_residual(X + lam * delta, b, tau0, m, mu, config)
        if r_try < (1.0 - 1e-4 * lam) * r:
            return lam
        lam *= 0.5
    return None


def _settle(X0, b, tau0, m, mu, config, tol, n=14, cap=0.05):
    """Short run of conditioned Newton from a point near the orbit.

    Returns (X, r, g, u) where g is the signed component of the final
    defect along u, the left singular direction of the smallest singular
    value of Phi - I.  For weakly forced orbits that direction is the
    phase trough and g is what the conditioned step cannot remove.
    """
    X = np.asarray(X0, dtype=float).copy()
    eye = np.eye(6)
    r = g = None
    u = None
    for _ in range(n):
        F, Phi, _ = _shoot(X, b, tau0, m, mu, config)
        r = float(np.linalg.norm(F))
        U, _, _ = np.linalg.svd(Phi - eye)
        u = U[:, -1]
        g = float(u @ F)
        if r <= tol:
            break
        delta = np.linalg.lstsq(Phi - eye, -F, rcond=1e-8)[0]
        nrm = float(np.linalg.norm(delta))
        if nrm > cap:
            delta *= cap / nrm
        X = X + delta
    return X, r, g, u


def _phase_slide(X, b, tau0, m, mu, config, tol, r0, g0, u0):
    """Zero the residual trough component by sliding along the orbit.

    Near the trough the defect is a nearly linear function of position
    along the orbit, but a straight Euclidean step of length h leaves the
    curved orbit manifold with error of order h**2, which swamps the
    defect long before the right phase is reached.  Sliding by actual
    propagation (of the unforced field, which shares the loop to O(m))
    stays on the manifold, and a secant iteration on the signed trough
    component locates the closing phase.
    """
    unforced = SystemParams(mu=mu, m=0.0)
    d0, g_prev, u_prev = 0.0, g0, u0
    d1 = -0.02 if g0 > 0 else 0.02
    X1 = propagate(X, unforced, tau0, tau0 + d1, config).X
    X1, r1, g1, u1 = _settle(X1, b, tau0, m, mu, config, tol)
    if float(u1 @ u_prev) < 0.0:
        g1 = -g1
    total = d1
    best = (r1, X1) if r1 < r0 else (r0, X)
    for _ in range(10):
        if r1 <= tol:
            return X1, r1
        if g1 == g_prev or abs(total) > 1.0:
            break
        step = -g1 * (d1 - d0) / (g1 - g_prev)
        step = max(min(step, 0.3), -0.3)
        X2 = propagate(X1, unforced, tau0, tau0 + step, config).X
        X2, r2, g2, u2 = _settle(X2, b, tau0, m, mu, config, tol)
        if float(u2 @ u1) < 0.0:
            g2 = -g2
        d0, g_prev = d1, g1
        d1, g1, X1, r1, u1 = d1 + step, g2, X2, r2, u2
        u_prev = u1
        total += step
        if r1 < best[0]:
            best = (r1, X1)
    return best[1], best[0]


def correct_fixed_m(X0, b: int, tau0: float = 0.0, m: float = 0.0,
                    mu: float = 0.0122, tol: float = 1e-10,
                    max_iter: int = 25,
                    config: IntegratorConfig | None = None) -> PeriodicOrbit:
    """Newton-correct the periodicity map at fixed period T = b*pi and
    fixed m, using Phi - I as the Jacobian.

    At m = 0 the system loses its clock, the flow direction drops out of
    Phi - I, and the least-squares step picks the nearest phase point of
    the underlying orbit instead of tripping on the singular matrix.  For
    small nonzero m that direction is still a deep trough; when the
    conditioned iteration plateaus there, the remaining defect is removed
    by sliding along the orbit itself (see _phase_slide).
    """
    if b < 1:
        raise DomainError("period multiple b must be a positive integer")
    X = np.asarray(X0, dtype=float).copy()
    eye = np.eye(6)
    r_prev = math.inf
    for it in range(max_iter + 1):
        F, Phi, psi_m = _shoot(X, b, tau0, m, mu, config)
        r = float(np.linalg.norm(F))
        if r <= tol:
            return PeriodicOrbit(X0=X, b=b, m=m, mu=mu, tau0=tau0,
                                 residual=r, iterations=it,
                                 monodromy=Phi, psi_m=psi_m)
        if it == max_iter:
            break
        J = Phi - eye
        if m != 0.0:
            sv = np.linalg.svd(J, compute_uv=False)
            if sv[-1] <= 1e-13 * sv[0]:
                raise ConvergenceError(
                    "periodicity Jacobian is singular at this member; "
                    "step along the family instead of correcting in place")
            if r <= 1e-6 and r > 0.25 * r_prev:
                # plateaued on the trough floor: the defect left is along
                # the phase direction the conditioned solve discards
                U, _, _ = np.linalg.svd(J)
                u = U[:, -1]
                X_s, r_s = _phase_slide(X, b, tau0, m, mu, config, tol,
                                        r, float(u @ F), u)
                if r_s <= tol:
                    F, Phi, psi_m = _shoot(X_s, b, tau0, m, mu, config)
                    return PeriodicOrbit(
                        X0=X_s, b=b, m=m, mu=mu, tau0=tau0,
                        residual=float(np.linalg.norm(F)), iterations=it,
                        monodromy=Phi, psi_m=psi_m)
                r = r_s
                break
        # at m = 0 the flow direction is an exact null vector of the map,
        # and for weakly forced orbits it is still a deep trough; the
        # conditioned least-squares step keeps Newton from bouncing along
        # it and settles on the phase nearest the guess
        delta = np.linalg.lstsq(J, -F, rcond=1e-8)[0]
        nrm = float(np.linalg.norm(delta))
        if nrm > 0.2:
            delta *= 0.2 / nrm
        if m != 0.0 and r > 1e-6:
            # far from the orbit the full step routinely overshoots and
            # the iterate starts bouncing between phase basins; back off
            # along the Newton direction until the residual actually drops
            lam = _backtrack(X, delta, r, b, tau0, m, mu, config)
            delta *= lam if lam is not None else 1.0 / 64.0
        X += delta
        r_prev = r
    raise ConvergenceError(
        f"fixed-m corrector stalled at residual {r:.3e} after "
        f"{max_iter} iterations (m = {m:.6g})")


def correct_s1_mirror(X0, b: int, m: float = 0.0, mu: float = 0.0122,
                      tol: float = 1e-12, max_iter: int = 12,
                      config: IntegratorConfig | None = None
                      ) -> PeriodicOrbit:
    """Correct a mirror-symmetric orbit in its reduced unknowns.

    An orbit that crosses y = x' = z' = 0 at tau = 0 closes after b*pi
    whenever the same three components vanish again at the half period;
    the time-reversal mirror symmetry supplies the second half.  Solving
    the 3x3 system in (x0, z0, y0') pins the representation exactly even
    at m = 0, where the full periodicity map goes rank-deficient along
    the phase direction.
    """
    if b < 1:
        raise DomainError("period multiple b must be a positive integer")
    X = np.asarray(X0, dtype=float).copy()
    X[1] = X[3] = X[5] = 0.0
    params = SystemParams(mu=mu, m=m)
    half = 0.5 * b * math.pi
    for it in range(max_iter + 1):
        res = propagate(X, params, 0.0, half, config, stm=True)
        F = res.X[[1, 3, 5]]
        r = float(np.linalg.norm(F))
        if r <= tol:
            break
        if it == max_iter:
            raise ConvergenceError(
                f"mirror corrector stalled at half-period residual "
                f"{r:.3e} (m = {m:.6g})")
        J = res.Phi[np.ix_([1, 3, 5], [0, 2, 4])]
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise ConvergenceError("mirror-correction system is singular")
        nrm = float(np.linalg.norm(delta))
        if nrm > 0.1:
            delta *= 0.1 / nrm
        X[0] += delta[0]
        X[2] += delta[1]
        X[4] += delta[2]
    full = propagate(X, params, 0.0, b * math.pi, config, stm=True, psi="m")
    return PeriodicOrbit(X0=X, b=b, m=m, mu=mu, tau0=0.0,
                         residual=float(np.linalg.norm(full.X - X)),
                         iterations=it, monodromy=full.Phi,
                         psi_m=full.Psi[:, 0])


def _tangent_and_sigmas(Phi, psi_m):
    """Null direction and the two smallest nonzero singular values of the
    6x7 block [Phi - I | psi_m]."""
    DB = np.hstack([Phi - np.eye(6), psi_m.reshape(6, 1)])
    _, s, Vt = np.linalg.svd(DB)
    t = Vt[6]
    return t / np.linalg.norm(t), float(s[5]), float(s[4])


def _arc_step(u_prev, t, ds, b, tau0, mu, tol, max_iter, config):
    """One pseudo-arclength Newton solve for the 7-vector u = (X0, m)."""
    u = u_prev + ds * t
    # near rank-deficient members the linear solve can shoot far along
    # the second near-null direction; iterates are kept near the
    # prediction and a failed step is retried shorter by the caller
    trust = min(0.2, max(4.0 * abs(ds), 1e-4))
    for it in range(1, max_iter + 1):
        F, Phi, psi_m = _shoot(u[:6], b, tau0, u[6], mu, config)
        arc = float(t @ (u - u_prev) - ds)
        if np.linalg.norm(F) <= tol and abs(arc) <= 1e-10 * (1.0 + abs(ds)):
            return u, Phi, psi_m, float(np.linalg.norm(F)), it
        J = np.zeros((7, 7))
        J[:6, :6] = Phi - np.eye(6)
        J[:6, 6] = psi_m
        J[6, :] = t
        rhs = np.concatenate([-F, [-arc]])
        # weakly forced orbits keep a deep phase trough in the corrections
        # block; truncating it makes the step well posed there while
        # leaving healthy systems untouched
        delta = np.linalg.lstsq(J, rhs, rcond=1e-9)[0]
        nrm = float(np.linalg.norm(delta))
        if nrm > trust:
            delta *= trust / nrm
        u = u + delta
    raise ConvergenceError(
        f"arclength step did not converge in {max_iter} iterations")


def _land_at_m(u_lo, u_hi, m_land, b, tau0, mu, tol, config):
    """Correct the member at an exact m value from a linear interpolation
    between the two bracketing walk points.

    At m = 0 the unforced orbit's phase is free and the least-squares
    correction inherits whatever phase smearing the small-m tail of the
    walk accumulated.  When the landing is a mirror-symmetric state and
    the epoch allows it, a reduced mirror correction removes that
    indeterminacy and pins the canonical representation.
    """
    w = (m_land - u_lo[6]) / (u_hi[6] - u_lo[6])
    X_guess = (1.0 - w) * u_lo[:6] + w * u_hi[:6]
    po = correct_fixed_m(X_guess, b, tau0, m_land, mu, tol=tol,
                         config=config)
    if m_land == 0.0 and tau0 == 0.0:
        off = max(abs(po.X0[1]), abs(po.X0[3]), abs(po.X0[5]))
        if off < 1e-3:
            try:
                snap = correct_s1_mirror(po.X0, b, m=0.0, mu=mu,
                                         config=config)
            except (ConvergenceError, SingularityError):
                return po
            if np.linalg.norm(snap.X0 - po.X0) < 1e-2:
                return snap
    return po


def _seeded_tangent(start: PeriodicOrbit):
    """Branch direction at a freshly seeded member, solved from the
    member's own corrections block: dX0/dm = -(Phi - I)^+ psi_m.  Near
    m = 0 the SVD null vector of that block mixes with the almost-null
    phase direction of the unforced orbit, so the truncated solve (which
    simply refuses to move along the trough) is the reliable way to point
    up the family there.  The result has +m orientation by construction.
    """
    J = start.monodromy - np.eye(6)
    t_state = -np.linalg.lstsq(J, start.psi_m, rcond=1e-8)[0]
    t = np.concatenate([t_state, [1.0]])
    return t / np.linalg.norm(t)


def continue_family(start: PeriodicOrbit, direction: int = +1,
                    ds0: float = 1e-3, ds_max: float = 0.02,
                    ds_min: float = 1e-8, max_members: int = 5000,
                    m_max: float = M_MAX, tol: float = 1e-10,
                    provenance: str = "", tangent0=None,
                    config: IntegratorConfig | None = None) -> Family:
    """Walk the family through (X0, m) by pseudo-arclength.

    After the first step the predictor tangent is the secant of the last
    two members.  The first direction comes from tangent0 when given
    (branch switching hands the singular vector in), otherwise from the
    corrections block itself: dX0/dm for seeded starts, or its null
    vector for m = 0 starts; `direction` picks the sign (+ grows m for
    the default tangents).

    Termination is recorded on the returned Family, never raised:
    "m_max" (landed exactly on the largest admissible m), "m_zero"
    (walked back to m = 0 and snapped onto the unforced orbit there),
    "step_underflow", or "member_cap".
    """
    if ds0 <= 0.0:
        raise DomainError("pseudo-arclength step must be positive")
    if direction not in (+1, -1):
        raise DomainError("direction must be +1 or -1")
    if start.monodromy is None or start.psi_m is None:
        start = correct_fixed_m(start.X0, start.b, start.tau0, start.m,
                                start.mu, tol=tol, config=config)

    fam = Family(provenance=provenance, mu=start.mu, b=start.b,
                 tau0=start.tau0)
    _, sa, sb = _tangent_and_sigmas(start.monodromy, start.psi_m)
    if tangent0 is not None:
        t = np.asarray(tangent0, dtype=float)
        t = t / np.linalg.norm(t)
        if direction < 0:
            t = -t
    else:
        if start.m > 0.0:
            t = _seeded_tangent(start)
        else:
            t, _, _ = _tangent_and_sigmas(start.monodromy, start.psi_m)
        if abs(t[6]) < 1e-12:
            raise DomainError(
                "family tangent has no m-component at the start; the "
                "walk direction +/- in m is undefined here")
        if t[6] * direction < 0.0:
            t = -t
    start.tangent = t
    fam.members.append(start)
    fam.tangents.append(t)
    fam.sigma_alpha.append(sa)
    fam.sigma_beta.append(sb)

    u = np.concatenate([start.X0, [start.m]])
    ds = ds0
    while True:
        if len(fam.members) >= max_members:
            fam.termination = "member_cap"
            break
        if u[6] + ds * t[6] < 0.0 < u[6]:
            # the predictor would leave the admissible m range, where the
            # shooter cannot even evaluate; land on m = 0 from the raw
            # predictor instead of stepping
            try:
                po = _land_at_m(u, u + ds * t, 0.0, start.b, start.tau0,
                                start.mu, tol, config)
            except (ConvergenceError, SingularityError):
                ds *= 0.5
                if ds < ds_min:
                    fam.termination = "step_underflow"
                    break
                continue
            du = np.concatenate([po.X0, [po.m]]) - u
            nrm = float(np.linalg.norm(du))
            t_land = du / nrm if nrm > 0.0 else t
            _, sa, sb = _tangent_and_sigmas(po.monodromy, po.psi_m)
            po.tangent = t_land
            fam.members.append(po)
            fam.tangents.append(t_land)
            fam.sigma_alpha.append(sa)
            fam.sigma_beta.append(sb)
            fam.termination = "m_zero"
            break
        try:
            u_new, Phi, psi_m, resid, iters = _arc_step(
                u, t, ds, start.b, start.tau0, start.mu, tol, 25, config)
        except (ConvergenceError, SingularityError):
            ds *= 0.5
            if ds < ds_min:
                fam.termination = "step_underflow"
                break
            continue

        m_new = float(u_new[6])
        if m_new > m_max or m_new < 0.0:
            m_land = m_max if m_new > m_max else 0.0
            try:
                po = _land_at_m(u, u_new, m_land, start.b, start.tau0,
                                start.mu, tol, config)
            except (ConvergenceError, SingularityError):
                ds *= 0.5
                if ds < ds_min:
                    fam.termination = "step_underflow"
                    break
                continue
            du = np.concatenate([po.X0, [po.m]]) - u
            nrm = float(np.linalg.norm(du))
            t_land = du / nrm if nrm > 0.0 else t
            _, sa, sb = _tangent_and_sigmas(po.monodromy, po.psi_m)
            po.tangent = t_land
            fam.members.append(po)
            fam.tangents.append(t_land)
            fam.sigma_alpha.append(sa)
            fam.sigma_beta.append(sb)
            fam.termination = "m_max" if m_land == m_max else "m_zero"
            break

        t_new = (u_new - u) / np.linalg.norm(u_new - u)
        _, sa, sb = _tangent_and_sigmas(Phi, psi_m)
        po = PeriodicOrbit(X0=u_new[:6].copy(), b=start.b, m=m_new,
                           mu=start.mu, tau0=start.tau0, residual=resid,
                           iterations=iters, monodromy=Phi, psi_m=psi_m,
                           tangent=t_new)
        fam.members.append(po)
        fam.tangents.append(t_new)
        fam.sigma_alpha.append(sa)
        fam.sigma_beta.append(sb)
        u, t = u_new, t_new
        if iters <= 3:
            ds = min(2.0 * ds, ds_max)
    return fam


def seed_from_melnikov(orbit: ResonantOrbit, s: float, m0: float = 1e-4,
                       tau0: float = 0.0, tol: float = 1e-10,
                       config: IntegratorConfig | None = None
                       ) -> PeriodicOrbit:
    """First forced member grown from an unperturbed orbit at phase s.

    The unperturbed state at s is used as the guess for the fixed-m
    corrector at a small m0, falling back to m0/2 up to four times.  Only
    phases near persistence-function zeros are expected to survive this.

    A corrector run that converges far from the guess has wandered onto
    a different orbit entirely (strongly unstable guesses can drain to a
    triangular-point cousin); that counts as a failure here, not a seed.
    """
    if m0 <= 0.0:
        raise DomainError("seeding requires m0 > 0")
    X_guess = orbit.state_at(s)
    scale = 1.0 + float(np.linalg.norm(X_guess))
    last = None
    for k in range(5):
        m_try = m0 / 2.0 ** k
        try:
            po = correct_fixed_m(X_guess, orbit.b, tau0, m_try,
                                 orbit.mu, tol=tol, config=config)
        except (ConvergenceError, SingularityError) as exc:
            last = exc
            continue
        # the surviving member sits O(m) from the unperturbed guess, with
        # a gain set by how close the monodromy spectrum is to unity;
        # the admissible neighbourhood has to grow with m or legitimate
        # large-m seeds get thrown away
        cap = (0.05 + 50.0 * m_try) * scale
        if np.linalg.norm(po.X0 - X_guess) <= cap:
            return po
        last = ConvergenceError(
            f"corrector left the seed's neighbourhood at m = {m_try:.3e}")
    raise ConvergenceError(
        f"seeding at phase s = {s:.6f} rejected: corrector failed at m0 "
        f"through m0/16 ({last})")


def member_at_m(family: Family, m_target: float, tol: float = 1e-10,
                config: IntegratorConfig | None = None) -> PeriodicOrbit:
    """The family member at an exact m, re-corrected from the linear
    interpolation of the first bracketing pair of walk members.

    Folded families can cross an m value more than once; this returns
    the crossing reached first along the walk.
    """
    if len(family) == 0:
        raise DomainError("family has no members")
    mv = family.m_values
    if len(family) == 1 or m_target == mv[0]:
        if abs(mv[0] - m_target) > 1e-12:
            raise DomainError(
                f"family does not reach m = {m_target:.6g}")
        po = family.members[0]
        return correct_fixed_m(po.X0, family.b, family.tau0, m_target,
                               family.mu, tol=tol, config=config)
    for i in range(len(mv) - 1):
        if (mv[i] - m_target) * (mv[i + 1] - m_target) <= 0.0:
            lo, hi = family.members[i], family.members[i + 1]
            if hi.m == lo.m:
                continue
            w = (m_target - lo.m) / (hi.m - lo.m)
            Xg = (1.0 - w) * lo.X0 + w * hi.X0
            return correct_fixed_m(Xg, family.b, family.tau0, m_target,
                                   family.mu, tol=tol, config=config)
    raise DomainError(f"family does not reach m = {m_target:.6g}")


def object_equivalence(orbit_a: PeriodicOrbit, orbit_b: PeriodicOrbit,
                       shifts=(0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi),
                       n: int = 32, tol: float = 1e-8,
                       config: IntegratorConfig | None = None):
    """Smallest listed time shift Delta with X_b(tau) = X_a(tau + Delta)
    on an n-point grid over one period, or None.

    Two orbits sharing a state set differ only in how tau labels the
    states, so a match at some Delta means both belong to one object.
    """
    if orbit_a.b != orbit_b.b:
        raise DomainError("orbits have different periods")
    if abs(orbit_a.m - orbit_b.m) > 1e-12 or orbit_a.mu != orbit_b.mu:
        raise DomainError("orbits live in different systems")
    T = orbit_a.T
    if 16 % orbit_a.b != 0:
        n = 32 * orbit_a.b
    grid = orbit_a.tau0 + np.arange(n) * (T / n)
    states_a = propagate(orbit_a.X0, orbit_a.params, orbit_a.tau0,
                         orbit_a.tau0 + T, config, t_eval=grid).states
    states_b = propagate(orbit_b.X0, orbit_b.params, orbit_b.tau0,
                         orbit_b.tau0 + T, config, t_eval=grid).states
    for delta in shifts:
        j = delta * n / T
        if abs(j - round(j)) > 1e-9:
            raise DomainError(
                f"shift {delta} is not commensurate with the sample grid")
        j = int(round(j)) % n
        dist = float(np.max(np.linalg.norm(
            states_b - np.roll(states_a, -j, axis=0), axis=1)))
        if dist <= tol:
            return float(delta)
    return None
