"""Fourier-series model of the primaries' periodic relative motion.

The two primaries move on a planar periodic solution of a Hill-type
three-body problem.  In normalized rotating coordinates that motion is a
pi-periodic perturbation vector

    rho(tau) = ( sum_n (b_n + b_-n) cos 2n tau,
                 sum_n (b_n - b_-n) sin 2n tau,
                 0 )

whose coefficients b_n, and the mean-distance factor a0, are power series
in an auxiliary parameter M.  Two coefficient conventions are supported:

* ``full``     : M = m / (1 - m/3), series tabulated to order 9,
* ``melnikov`` : M = m, series truncated at order 3 (used by the
                 analytic perturbation orders of :mod:`hr4bp.melnikov`).

Coefficients are stored exactly as `fractions.Fraction` and converted to
floats once, when a series object is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction as Fr

import numpy as np

from .errors import DomainError

# Largest period ratio for which the series is used.  Beyond this the
# one-parameter families in this package are terminated, not evaluated.
M_MAX = 0.19510486

# Earth-Moon mass ratio used as the package default.
MU_EM = 0.0122

# Sun-(Earth-Moon) period-ratio parameter.
M_SEM = 0.0808

# --- exact coefficient tables -------------------------------------------
#
# d[p] are the mean-distance series coefficients: a0 = M^(2/3) sum_p d_p M^p.
# c[n][p] are the b_n series coefficients:        b_n = sum_p c_{n,p} M^p.
# Harmonics run n = -4..-1, 1..4; c_{n,p} = 0 for p < 2.

_D_FULL = (
    Fr(1),
    Fr(-8, 9),
    Fr(133, 162),
    Fr(-1264, 2187),
    Fr(3319421, 5038848),
    Fr(-13366211, 11337408),
    Fr(2028830887, 2448880128),
    Fr(-4682845907, 5509980288),
    Fr(19228022393021, 12694994583552),
    Fr(-5982128249099224247, 3119921868853739520),
)

# Rows are p = 2..9, columns are n = -4, -3, -2, -1, 1, 2, 3, 4.
_C_FULL = {
    2: (0, 0, 0, Fr(-19, 16), Fr(3, 16), 0, 0, 0),
    3: (0, 0, 0, Fr(-7, 8), Fr(3, 8), 0, 0, 0),
    4: (0, 0, 0, Fr(11, 144), Fr(7, 48), Fr(25, 256), 0, 0),
    5: (0, 0, Fr(23, 640), Fr(5, 36), Fr(-1, 6), Fr(553, 1920), 0, 0),
    6: (0, Fr(1, 192), Fr(207, 3200), Fr(-661, 82944), Fr(-34589, 110592),
        Fr(3743, 14400), Fr(833, 12288), 0),
    7: (0, Fr(5237, 215040), Fr(1829, 288000), Fr(374797, 276480),
        Fr(-22907, 46080), Fr(-28811, 864000), Fr(27337, 107520), 0),
    8: (Fr(23, 6144), Fr(263713, 7526400), Fr(124719, 40960000),
        Fr(98804551, 37324800), Fr(-23804639, 24883200),
        Fr(-332659139, 1105920000), Fr(5056291, 15052800), Fr(3537, 65536)),
    9: (Fr(507317, 28901376), Fr(38042489, 4741632000),
        Fr(48459451, 604800000), Fr(300079583, 373248000),
        Fr(-102469631, 124416000), Fr(-4857480211, 7257600000),
        Fr(472019353, 4741632000), Fr(11705987, 48168960)),
}

_D_MELNIKOV = (Fr(1), Fr(-2, 3), Fr(7, 18), Fr(-4, 81))

_C_MELNIKOV = {
    2: (0, 0, 0, Fr(-19, 16), Fr(3, 16), 0, 0, 0),
    3: (0, 0, 0, Fr(-5, 3), Fr(1, 2), 0, 0, 0),
}

_HARMONICS = (-4, -3, -2, -1, 1, 2, 3, 4)


def hill_param(m: float, mode: str = "full") -> tuple[float, float]:
    """Auxiliary series parameter M and its derivative dM/dm.

    ``full`` mode uses M = m/(1 - m/3); ``melnikov`` mode uses M = m.
    """
    if m < 0.0:
        raise DomainError(f"period ratio m must be >= 0, got {m}")
    if mode == "full":
        u = 1.0 - m / 3.0
        return m / u, 1.0 / (u * u)
    if mode == "melnikov":
        return m, 1.0
    raise ValueError(f"unknown HVO mode {mode!r}")


@dataclass(frozen=True)
class HvoSeries:
    """Coefficient tables of one convention, with float copies for evaluation."""

    mode: str
    order: int
    d: tuple[Fr, ...]
    c: dict[int, tuple]
    _df: np.ndarray = field(repr=False, default=None)
    _cf: np.ndarray = field(repr=False, default=None)

    @staticmethod
    def load(mode: str = "full") -> "HvoSeries":
        if mode == "full":
            d, c = _D_FULL, _C_FULL
        elif mode == "melnikov":
            d, c = _D_MELNIKOV, _C_MELNIKOV
        else:
            raise ValueError(f"unknown HVO mode {mode!r}")
        order = len(d) - 1
        df = np.array([float(x) for x in d])
        # cf[i, p] for harmonic index i (over _HARMONICS) and power p.
        cf = np.zeros((len(_HARMONICS), order + 1))
        for p, row in c.items():
            for i, val in enumerate(row):
                cf[i, p] = float(val)
        s = HvoSeries(mode=mode, order=order, d=d, c=dict(c))
        object.__setattr__(s, "_df", df)
        object.__setattr__(s, "_cf", cf)
        return s

    def coefficient_table(self) -> dict:
        """Exact tables as {num, den} pairs, for archive dumps."""
        return {
            "mode": self.mode,
            "order": self.order,
            "d": [[x.numerator, x.denominator] for x in self.d],
            "c": {
                str(n): [
                    [Fr(self.c[p][i]).numerator, Fr(self.c[p][i]).denominator]
                    if p in self.c else [0, 1]
                    for p in range(self.order + 1)
                ]
                for i, n in enumerate(_HARMONICS)
            },
        }


@dataclass(frozen=True)
class HvoEval:
    """Series values at one m: mean distance, harmonics, m-derivatives and
    the well-conditioned gravity ratio m^2/a0^3 (finite at m = 0)."""

    m: float
    mode: str
    a0: float
    da0_dm: float
    b: np.ndarray          # b_n over _HARMONICS
    db_dm: np.ndarray
    ratio: float           # m^2 / a0^3
    dratio_dm: float
    # cos/sin synthesis coefficients for rho and d(rho)/dm, n = 1..4
    bc: np.ndarray         # b_n + b_-n
    bs: np.ndarray         # b_n - b_-n
    dbc: np.ndarray
    dbs: np.ndarray

    def kernel_params(self, mu: float) -> np.ndarray:
        """Flat parameter vector consumed by the jitted field kernels."""
        out = np.empty(20)
        out[0] = self.m
        out[1] = mu
        out[2] = self.ratio
        out[3] = self.dratio_dm
        out[4:8] = self.bc
        out[8:12] = self.bs
        out[12:16] = self.dbc
        out[16:20] = self.dbs
        return out


def _poly(coef: np.ndarray, x: float) -> float:
    # Horner, highest power first is awkward here; coef[p] multiplies x^p.
    acc = 0.0
    for p in range(coef.shape[0] - 1, -1, -1):
        acc = acc * x + coef[p]
    return acc


def _dpoly(coef: np.ndarray, x: float) -> float:
    acc = 0.0
    for p in range(coef.shape[0] - 1, 0, -1):
        acc = acc * x + p * coef[p]
    return acc


def evaluate_hvo(series: HvoSeries, m: float) -> HvoEval:
    """Evaluate a0, b_n, their m-derivatives, and the gravity ratio at m.

    The ratio m^2/a0^3 is computed as (m/M)^2 / D(M)^3 with
    D(M) = sum_p d_p M^p, which stays finite (-> 1) as m -> 0 even though
    a0 ~ m^(2/3) vanishes.
    """
    if m < 0.0:
        raise DomainError(f"period ratio m must be >= 0, got {m}")
    return _evaluate_signed(series, m)


def _evaluate_signed(series: HvoSeries, m: float) -> HvoEval:
    """Core evaluation; also accepts (small) negative m, where the series
    is still an analytic function, for derivative-extraction stencils.
    a0 itself is only real for m >= 0 and is reported as nan otherwise.
    """
    if series.mode == "full":
        M = m / (1.0 - m / 3.0)
        dMdm = 1.0 / (1.0 - m / 3.0) ** 2
    else:
        M, dMdm = m, 1.0
    df, cf = series._df, series._cf

    D = _poly(df, M)
    dD = _dpoly(df, M)
    # a0 = M^(2/3) D(M); derivative via chain rule.  At m = 0 the
    # derivative of M^(2/3) is unbounded; report inf there (the field
    # kernels never use a0 or da0 directly, only the ratio).
    if m == 0.0:
        a0 = 0.0
        da0 = np.inf
    elif m < 0.0:
        a0 = np.nan
        da0 = np.nan
    else:
        g0 = M ** (2.0 / 3.0)
        a0 = g0 * D
        da0 = ((2.0 / 3.0) * M ** (-1.0 / 3.0) * D + g0 * dD) * dMdm

    b = np.empty(8)
    db = np.empty(8)
    for i in range(8):
        b[i] = _poly(cf[i], M)
        db[i] = _dpoly(cf[i], M) * dMdm

    if series.mode == "full":
        u = 1.0 - m / 3.0
        ratio = u * u / D**3
        dratio = -(2.0 / 3.0) * u / D**3 - 3.0 * dD / D**4
    else:
        ratio = 1.0 / D**3
        dratio = -3.0 * dD / D**4

    # harmonics order: -4 -3 -2 -1 1 2 3 4 -> pair (n, -n) = (i+4, 3-i)
    bc = np.empty(4)
    bs = np.empty(4)
    dbc = np.empty(4)
    dbs = np.empty(4)
    for n in range(1, 5):
        ip, im = 3 + n, 4 - n
        bc[n - 1] = b[ip] + b[im]
        bs[n - 1] = b[ip] - b[im]
        dbc[n - 1] = db[ip] + db[im]
        dbs[n - 1] = db[ip] - db[im]

    return HvoEval(m=m, mode=series.mode, a0=a0, da0_dm=da0, b=b, db_dm=db,
                   ratio=ratio, dratio_dm=dratio, bc=bc, bs=bs, dbc=dbc,
                   dbs=dbs)


def rho_bar(ev: HvoEval, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Primaries' relative-motion perturbation vector and its m-derivative
    at epoch tau.  Both are pi-periodic in tau and vanish at m = 0."""
    rho = np.zeros(3)
    drho = np.zeros(3)
    for n in range(1, 5):
        cn = np.cos(2.0 * n * tau)
        sn = np.sin(2.0 * n * tau)
        rho[0] += ev.bc[n - 1] * cn
        rho[1] += ev.bs[n - 1] * sn
        drho[0] += ev.dbc[n - 1] * cn
        drho[1] += ev.dbs[n - 1] * sn
    return rho, drho
