"""Rank-drop detection along orbit families and branch switching.

A one-parameter family of forced periodic orbits loses local uniqueness
where the bordered corrections matrix [Phi^n - I | Psi_m] drops rank.
Tracking its two smallest nonzero singular values along the family flags
those members, and the right singular vector of the collapsing value is
the step direction onto the intersecting family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .continuation import (Family, PeriodicOrbit, correct_fixed_m,
                           member_at_m, object_equivalence)
from .errors import ConvergenceError, DomainError, SingularityError
from .propagation import IntegratorConfig, propagate

_INVPHI = 0.5 * (math.sqrt(5.0) - 1.0)

# marker for the no-new-branch outcome: every stepped guess converged to
# the parent orbit again.  Callers distinguish this diagnosis from a
# genuine corrector failure by searching the exception text for it.
COLLAPSE_MARK = "corrected back onto the parent family"


@dataclass
class SingularSpectrum:
    """Singular structure of one member's 6x7 bordered corrections matrix.

    A wide matrix annihilates at least one direction, so the decomposition
    over all seven right vectors always carries one structural zero; the
    family tangent spans it away from bifurcations.  sigma_alpha and
    sigma_beta are the smallest and second smallest of the six remaining
    values, the ones whose collapse actually signals a rank drop.
    """

    sigma: np.ndarray
    sigma_alpha: float
    sigma_beta: float
    v_alpha: np.ndarray
    v_beta: np.ndarray
    v_null: np.ndarray
    sigma_null: float
    n_B: int = 1


@dataclass
class BranchCandidate:
    """A flagged rank-drop point, refined and ready for branch stepping."""

    parent: str
    index: int
    which: str
    member: PeriodicOrbit
    spectrum: SingularSpectrum
    ds0_options: tuple = (1.0, -1.0)
    symmetry_note: str = ""

    @property
    def v_sigma(self) -> np.ndarray:
        return (self.spectrum.v_alpha if self.which == "alpha"
                else self.spectrum.v_beta)


def corrections_jacobian_DB(orbit: PeriodicOrbit, n_B: int = 1,
                            config: IntegratorConfig | None = None
                            ) -> np.ndarray:
    """Bordered corrections matrix [Phi^n_B - I | Psi_m] over n_B periods.

    The monodromy power reuses the one-period matrix; the parameter
    sensitivity column does not compose the same way and is integrated
    over the full n_B*T span.
    """
    if n_B < 1:
        raise DomainError(f"n_B must be a positive integer, got {n_B}")
    Phi1 = orbit.monodromy
    psi = orbit.psi_m if n_B == 1 else None
    if Phi1 is None or psi is None:
        span = orbit.T if psi is None and n_B == 1 else n_B * orbit.T
        res = propagate(orbit.X0, orbit.params, orbit.tau0,
                        orbit.tau0 + span, config, stm=True, psi="m")
        if Phi1 is None and span == orbit.T:
            Phi1 = res.Phi
        elif Phi1 is None:
            one = propagate(orbit.X0, orbit.params, orbit.tau0,
                            orbit.tau0 + orbit.T, config, stm=True)
            Phi1 = one.Phi
        psi = res.Psi[:, 0]
    if n_B > 1 and orbit.psi_m is not None and psi is orbit.psi_m:
        res = propagate(orbit.X0, orbit.params, orbit.tau0,
                        orbit.tau0 + n_B * orbit.T, config,
                        stm=True, psi="m")
        psi = res.Psi[:, 0]
    block = np.linalg.matrix_power(Phi1, n_B) if n_B > 1 else Phi1
    return np.hstack([block - np.eye(6), np.asarray(psi).reshape(6, 1)])


def _orient(v: np.ndarray) -> np.ndarray:
    """Deterministic sign: the largest-magnitude component is positive."""
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0.0 else v


def singular_spectrum(DB: np.ndarray, n_B: int = 1) -> SingularSpectrum:
    """Full seven-column singular decomposition of the 6x7 matrix."""
    if DB.shape != (6, 7):
        raise DomainError(f"bordered corrections matrix must be 6x7, "
                          f"got {DB.shape}")
    _, s, Vt = np.linalg.svd(DB, full_matrices=True)
    return SingularSpectrum(
        sigma=s.copy(),
        sigma_alpha=float(s[5]),
        sigma_beta=float(s[4]),
        v_alpha=_orient(Vt[5]),
        v_beta=_orient(Vt[4]),
        v_null=_orient(Vt[6]),
        sigma_null=0.0,
        n_B=n_B,
    )


def member_spectrum(orbit: PeriodicOrbit, n_B: int = 1,
                    config: IntegratorConfig | None = None
                    ) -> SingularSpectrum:
    return singular_spectrum(corrections_jacobian_DB(orbit, n_B, config),
                             n_B)


def scan_family(family: Family, n_B: int = 1, theta: float = 0.1,
                config: IntegratorConfig | None = None
                ) -> list[tuple[int, str, SingularSpectrum]]:
    """Members where sigma_alpha or sigma_beta dips to a strict local
    minimum below theta times that trace's family median."""
    if len(family) < 3:
        raise DomainError("a scan needs at least 3 family members")
    spectra = [member_spectrum(po, n_B, config) for po in family.members]
    out = []
    for which in ("alpha", "beta"):
        trace = np.array([getattr(sp, f"sigma_{which}") for sp in spectra])
        cut = theta * float(np.median(trace))
        for i in range(1, len(trace) - 1):
            if (trace[i] < trace[i - 1] and trace[i] < trace[i + 1]
                    and trace[i] < cut):
                out.append((i, which, spectra[i]))
    out.sort(key=lambda c: c[0])
    return out


def _path_point(members, i, s, lengths):
    """Point at arclength s along the two-segment polyline through
    members i-1, i, i+1 in (X0, m) space."""
    ua = np.concatenate([members[i - 1].X0, [members[i - 1].m]])
    ub = np.concatenate([members[i].X0, [members[i].m]])
    uc = np.concatenate([members[i + 1].X0, [members[i + 1].m]])
    if s <= lengths[0]:
        w = s / lengths[0]
        return ua + w * (ub - ua)
    w = (s - lengths[0]) / lengths[1]
    return ub + w * (uc - ub)


def refine_candidate(family: Family, index: int, which: str,
                     n_B: int = 1, theta_note: str = "",
                     iters: int = 22,
                     config: IntegratorConfig | None = None
                     ) -> BranchCandidate:
    """Sharpen a flagged member by golden-section search in arclength.

    Walk steps land where they land; the true rank-drop point usually
    sits between members.  Each probe re-corrects at the interpolated m
    and prices the chosen singular value there.
    """
    if not 0 < index < len(family) - 1:
        raise DomainError("refinement needs interior member index")
    members = family.members
    ua = np.concatenate([members[index - 1].X0, [members[index - 1].m]])
    ub = np.concatenate([members[index].X0, [members[index].m]])
    uc = np.concatenate([members[index + 1].X0, [members[index + 1].m]])
    lengths = (float(np.linalg.norm(ub - ua)),
               float(np.linalg.norm(uc - ub)))
    cache: dict[float, tuple] = {}

    def price(s):
        key = round(s, 14)
        if key in cache:
            return cache[key]
        u = _path_point(members, index, s, lengths)
        try:
            po = correct_fixed_m(u[:6], family.b, family.tau0, float(u[6]),
                                 family.mu, config=config)
            sp = member_spectrum(po, n_B, config)
            val = getattr(sp, f"sigma_{which}")
        except (ConvergenceError, SingularityError):
            po, sp, val = None, None, math.inf
        cache[key] = (val, po, sp)
        return cache[key]

    a, b = 0.0, lengths[0] + lengths[1]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = price(c)[0], price(d)[0]
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = price(c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = price(d)[0]
    s_best = c if fc < fd else d
    val, po, sp = price(s_best)
    if po is None:
        # every probe near the minimum failed to correct; fall back on
        # the flagged member itself
        po = members[index]
        sp = member_spectrum(po, n_B, config)
    # the pattern is read at the flagged walk member: at the refined
    # point the collapsing value nears the structural zero and its right
    # vector picks up an arbitrary admixture of the family tangent,
    # which scrambles both the mirror test and the component pattern
    flag_sp = member_spectrum(members[index], n_B, config)
    note = _symmetry_note(
        members[index],
        flag_sp.v_alpha if which == "alpha" else flag_sp.v_beta)
    return BranchCandidate(parent=family.provenance, index=index,
                           which=which, member=po, spectrum=sp,
                           symmetry_note=note)


def _symmetry_note(po: PeriodicOrbit, v: np.ndarray) -> str:
    """Whether the step direction breaks the parent's mirror symmetry.

    For a parent in mirror form (y = x' = z' = 0 at tau0) whose step
    direction lives in those same components, +ds and -ds produce states
    that are mirror images at a shifted clock, not the same orbit, so
    both signs are worth correcting.
    """
    scale = 1.0 + float(np.linalg.norm(po.X0))
    in_mirror_form = max(abs(po.X0[1]), abs(po.X0[3]),
                         abs(po.X0[5])) <= 1e-8 * scale
    vstate = v[:6]
    nv = float(np.linalg.norm(vstate))
    breaking = (nv > 0.0 and float(np.linalg.norm(vstate[[1, 3, 5]]))
                >= 0.99 * nv)
    if in_mirror_form and breaking:
        return "mirror-breaking step: both signs are candidate branches"
    if in_mirror_form:
        return "mirror-preserving step: signs give mirror duplicates"
    return ""


def branch_guess(candidate: BranchCandidate, ds0: float = 1e-3
                 ) -> list[np.ndarray]:
    """Uncorrected 7-vector guesses on both sides of the parent."""
    u0 = np.concatenate([candidate.member.X0, [candidate.member.m]])
    v = candidate.v_sigma
    return [u0 + sign * ds0 * v for sign in candidate.ds0_options]


def switch_branch(candidate: BranchCandidate, ds0: float = 1e-3,
                  halvings: int = 4, tol: float = 1e-10,
                  equivalence_tol: float = 1e-6,
                  config: IntegratorConfig | None = None,
                  parent_family: Family | None = None
                  ) -> tuple[PeriodicOrbit, float]:
    """Correct a member of the intersecting family off the candidate.

    Steps ds0 along the collapsing right singular vector, correcting at
    the stepped m; on corrector failure the step is halved up to four
    times.  A converged orbit that is the parent again (checked against
    the parent member at the same m when the family is supplied) does not
    count; shrinking further only aids that collapse, so the search moves
    to the opposite sign instead.
    """
    u0 = np.concatenate([candidate.member.X0, [candidate.member.m]])
    v = candidate.v_sigma
    last_err: Exception | None = None
    for sign in candidate.ds0_options:
        for k in range(halvings + 1):
            u = u0 + sign * (ds0 / 2.0 ** k) * v
            try:
                po = correct_fixed_m(u[:6], candidate.member.b,
                                     candidate.member.tau0, float(u[6]),
                                     candidate.member.mu, tol=tol,
                                     config=config)
            except (ConvergenceError, SingularityError) as exc:
                last_err = exc
                continue
            if parent_family is not None:
                try:
                    par = member_at_m(parent_family, po.m, tol=tol,
                                      config=config)
                except (ConvergenceError, SingularityError, DomainError):
                    par = None
                if par is not None and object_equivalence(
                        po, par, tol=equivalence_tol, config=config
                        ) is not None:
                    last_err = ConvergenceError(COLLAPSE_MARK)
                    break
            return po, sign * (ds0 / 2.0 ** k)
    raise ConvergenceError(
        f"no branch member found from candidate at index "
        f"{candidate.index} ({last_err})")
