"""Equations of motion of the Hill restricted 4-body problem in the
rotating, pulsating-free normalized frame, plus its CR3BP limit.

State convention: X = (x, y, z, x', y', z'), primes are d/dtau.  The
field is pi-periodic in the epoch tau through the primaries' relative
motion (see :mod:`hr4bp.hvo`) and reduces exactly to the CR3BP at m = 0
(same code path, all m-proportional terms vanish identically).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import _kernels as K
from .errors import DomainError, SingularityError
from .hvo import HvoEval, HvoSeries, evaluate_hvo, rho_bar

_SERIES_CACHE: dict[str, HvoSeries] = {}


def _series(mode: str) -> HvoSeries:
    if mode not in _SERIES_CACHE:
        _SERIES_CACHE[mode] = HvoSeries.load(mode)
    return _SERIES_CACHE[mode]


@dataclass(frozen=True)
class SystemParams:
    """Mass ratio and period ratio, with the HVO evaluation cached."""

    mu: float
    m: float
    hvo_mode: str = "full"
    hvo: HvoEval = dfield(init=False, repr=False, default=None)
    _P: np.ndarray = dfield(init=False, repr=False, default=None)

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DomainError(f"mass ratio mu must be in (0, 1), got {self.mu}")
        ev = evaluate_hvo(_series(self.hvo_mode), self.m)
        object.__setattr__(self, "hvo", ev)
        object.__setattr__(self, "_P", ev.kernel_params(self.mu))

    def kernel(self) -> np.ndarray:
        return self._P

    def with_m(self, m: float) -> "SystemParams":
        return SystemParams(mu=self.mu, m=m, hvo_mode=self.hvo_mode)


@dataclass(frozen=True)
class RelativeGeometry:
    """Spacecraft-to-primary vectors and norms at one (X, tau)."""

    r1: np.ndarray
    r2: np.ndarray
    d1: float
    d2: float


def relative_geometry(X, params: SystemParams, tau: float) -> RelativeGeometry:
    rho, _ = rho_bar(params.hvo, tau)
    e = np.array([1.0 + rho[0], rho[1], 0.0])
    r = np.asarray(X[:3], dtype=float)
    r1 = r + params.mu * e
    r2 = r - (1.0 - params.mu) * e
    return RelativeGeometry(r1=r1, r2=r2, d1=float(np.linalg.norm(r1)),
                            d2=float(np.linalg.norm(r2)))


def _field_call(X, params, tau, want):
    acc = np.empty(3)
    H = np.empty((3, 3))
    cm = np.empty(3)
    cmu = np.empty(3)
    st = K._field(np.asarray(X, dtype=float), tau, params.kernel(), want,
                  acc, H, cm, cmu)
    if st != 0:
        raise SingularityError(
            f"state within guard radius {K.GUARD_RADIUS} of a primary")
    return acc, H, cm, cmu


def hr4bp_field(X, params: SystemParams, tau: float) -> np.ndarray:
    """Time derivative of the state under the HR4BP equations."""
    acc, _, _, _ = _field_call(X, params, tau, 0)
    out = np.empty(6)
    out[:3] = X[3:6]
    out[3:] = acc
    return out


def cr3bp_field(X, mu: float) -> np.ndarray:
    """CR3BP field; shares the HR4BP code path with m frozen at 0."""
    return hr4bp_field(X, SystemParams(mu=mu, m=0.0), 0.0)


def potential(X, params: SystemParams, tau: float) -> float:
    """Scalar effective potential (rotating frame, epoch tau)."""
    x, y, z = X[0], X[1], X[2]
    m = params.m
    geom = relative_geometry(X, params, tau)
    k1 = 1.0 + 2.0 * m + 1.5 * m * m
    v = 0.5 * k1 * (x * x + y * y) - 0.5 * m * m * z * z
    if m != 0.0:
        c2t = np.cos(2.0 * tau)
        s2t = np.sin(2.0 * tau)
        v += 0.75 * m * m * ((x * x - y * y) * c2t - 2.0 * x * y * s2t)
    v += params.hvo.ratio * ((1.0 - params.mu) / geom.d1
                             + params.mu / geom.d2)
    return v


def potential_gradient(X, params: SystemParams, tau: float) -> np.ndarray:
    """Position gradient of the effective potential."""
    acc, _, _, _ = _field_call(X, params, tau, 0)
    m = params.m
    w = 2.0 * (1.0 + m)
    # remove the Coriolis part of the acceleration
    return np.array([acc[0] - w * X[4], acc[1] + w * X[3], acc[2]])


def jacobian_A(X, params: SystemParams, tau: float) -> np.ndarray:
    """State-space Jacobian of the field, 6x6."""
    _, H, _, _ = _field_call(X, params, tau, 1)
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, :3] = H
    w = 2.0 * (1.0 + params.m)
    A[3, 4] = w
    A[4, 3] = -w
    return A


def param_partials_C(X, params: SystemParams, tau: float) -> np.ndarray:
    """Partials of the field w.r.t. (m, mu), 6x2.  The top (velocity)
    rows vanish; the m column includes the Coriolis rate term."""
    _, _, cm, cmu = _field_call(X, params, tau, 2)
    C = np.zeros((6, 2))
    C[3:, 0] = cm
    C[3:, 1] = cmu
    return C


def jacobi_constant(X, mu: float) -> float:
    """CR3BP Jacobi constant (m = 0 only)."""
    x, y, z = X[0], X[1], X[2]
    r1 = np.sqrt((x + mu) ** 2 + y * y + z * z)
    r2 = np.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    v2 = X[3] ** 2 + X[4] ** 2 + X[5] ** 2
    return x * x + y * y + 2.0 * (1.0 - mu) / r1 + 2.0 * mu / r2 - v2


_R_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


def symmetry_map(X, tau: float, which: str = "S1", k: int = 0):
    """Discrete symmetry images of (X, tau).

    S1 reflects about epochs k*pi, S2 about k*pi + pi/2; both flip
    (y, x', z') and reverse time.  Returns (X_image, tau_image).
    """
    Xi = np.asarray(X, dtype=float) * _R_SIGNS
    if which == "S1":
        return Xi, 2.0 * k * np.pi - tau
    if which == "S2":
        return Xi, (2.0 * k + 1.0) * np.pi - tau
    raise ValueError(f"unknown symmetry {which!r}")


def mirror_z(X) -> np.ndarray:
    """Reflection through the xy plane, a symmetry at every epoch."""
    out = np.asarray(X, dtype=float).copy()
    out[2] = -out[2]
    out[5] = -out[5]
    return out


@dataclass(frozen=True)
class UnitScales:
    """Dimensional scale factors.  nu (period-ratio parameter of the
    outer orbit), d_a (distance scale factor) and the primaries' mean
    motion n are user inputs; nothing here feeds the integrator."""

    nu: float
    d_a: float
    n: float
    m: float
    a0: float
    m_total: float | None = None

    @property
    def time_unit(self) -> float:
        return (1.0 + self.m) / self.n

    @property
    def distance_unit(self) -> float:
        return self.a0 * self.d_a * self.nu ** (1.0 / 3.0)

    @property
    def mass_unit(self) -> float | None:
        if self.m_total is None:
            return None
        return self.m_total / self.nu

    def consistency_residuals(self) -> dict:
        """Identities that must hold between the scales; all ~0."""
        n0 = self.n * self.m / (1.0 + self.m)
        return {
            "time_unit_vs_n0": self.time_unit - self.m / n0 if n0 else np.inf,
        }
