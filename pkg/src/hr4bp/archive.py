"""Persistent JSON archives of seeds, families, and branch candidates,
plus tabular exports for plotting.

The writer is deterministic: keys are emitted sorted, floats at 17
significant digits (exact for IEEE doubles), so write -> read -> write
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .continuation import Family, PeriodicOrbit, member_at_m
from .errors import ConvergenceError, DomainError, SingularityError

SCHEMA_VERSION = 1
M_SEM = 0.0808


# ---------------------------------------------------------------------------
# canonical JSON


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise DomainError("archives cannot hold NaN or infinite values")
    s = format(float(x), ".17g")
    # keep floats floats on reparse: '1' would come back as an int
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON text: sorted keys, 17-digit floats."""
    pad = "  " * indent
    pad1 = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj):
            if not isinstance(k, str):
                raise DomainError("archive keys must be strings")
            items.append(f"{pad1}{json.dumps(k)}: "
                         f"{canonical_json(obj[k], indent + 1)}")
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad1}{canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return canonical_json(obj.tolist(), indent)
    raise DomainError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# records


def seed_record(seed) -> dict:
    return seed.as_dict()


def family_record(fam: Family, seed: str | None = None,
                  parent: str | None = None) -> dict:
    """Archive record for one continuation run.

    seed / parent name what the family grew from; exactly one should be
    given for anything stored in an archive.
    """
    members = []
    for i, po in enumerate(fam.members):
        t = fam.tangents[i] if i < len(fam.tangents) else po.tangent
        members.append({
            "m": float(po.m),
            "X0": [float(v) for v in po.X0],
            "residual": float(po.residual),
            "sigma_alpha": float(fam.sigma_alpha[i]),
            "sigma_beta": float(fam.sigma_beta[i]),
            "tangent": None if t is None else [float(v) for v in t],
        })
    rec = {
        "schema_version": SCHEMA_VERSION,
        "provenance": fam.provenance,
        "mu": float(fam.mu),
        "b": int(fam.b),
        "tau0": float(fam.tau0),
        "members": members,
        "termination": fam.termination,
    }
    if seed is not None:
        rec["seed"] = seed
    if parent is not None:
        rec["parent"] = parent
    return rec


def family_from_record(rec: dict) -> Family:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(
            f"unsupported family schema {rec.get('schema_version')}")
    fam = Family(provenance=rec["provenance"], mu=rec["mu"], b=rec["b"],
                 tau0=rec["tau0"], termination=rec["termination"])
    for mrec in rec["members"]:
        t = (None if mrec["tangent"] is None
             else np.asarray(mrec["tangent"], dtype=float))
        fam.members.append(PeriodicOrbit(
            X0=np.asarray(mrec["X0"], dtype=float), b=rec["b"],
            m=mrec["m"], mu=rec["mu"], tau0=rec["tau0"],
            residual=mrec["residual"], tangent=t))
        fam.tangents.append(t)
        fam.sigma_alpha.append(mrec["sigma_alpha"])
        fam.sigma_beta.append(mrec["sigma_beta"])
    return fam


def candidate_record(cand) -> dict:
    return {
        "parent": cand.parent,
        "index": int(cand.index),
        "which": cand.which,
        "m": float(cand.member.m),
        "X0": [float(v) for v in cand.member.X0],
        "sigma": float(getattr(cand.spectrum, f"sigma_{cand.which}")),
        "v_sigma": [float(v) for v in cand.v_sigma],
        "n_B": int(cand.spectrum.n_B),
        "symmetry_note": cand.symmetry_note,
    }


# ---------------------------------------------------------------------------
# archive container


@dataclass
class Archive:
    """Everything one pipeline run produces, in plain-JSON form."""

    schema_version: int = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    families: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return canonical_json({
            "schema_version": self.schema_version,
            "metadata": self.metadata,
            "seeds": self.seeds,
            "families": self.families,
            "candidates": self.candidates,
        }) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Archive":
        raw = json.loads(text)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(
                f"unsupported archive schema {raw.get('schema_version')}")
        return cls(metadata=raw["metadata"], seeds=raw["seeds"],
                   families=raw["families"], candidates=raw["candidates"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Archive":
        with open(path) as fh:
            return cls.from_json(fh.read())


def validate_archive(arch: Archive) -> None:
    """Referential integrity: families point at stored seeds or stored
    branch candidates, candidates point at stored families."""
    for name, rec in arch.families.items():
        seed = rec.get("seed")
        parent = rec.get("parent")
        if seed is None and parent is None:
            raise DomainError(f"family '{name}' references no origin")
        if seed is not None and seed not in arch.seeds:
            raise DomainError(
                f"family '{name}' references missing seed '{seed}'")
        if parent is not None and parent not in arch.candidates:
            raise DomainError(
                f"family '{name}' references missing candidate '{parent}'")
    for name, rec in arch.candidates.items():
        if rec["parent"] not in arch.families:
            raise DomainError(
                f"candidate '{name}' references missing family "
                f"'{rec['parent']}'")


# ---------------------------------------------------------------------------
# exports and the fixed-m slice


def export_hodograph(fam: Family) -> list[tuple]:
    """One row per member, walk order: (m, x0, y0, z0, x0', y0', z0')."""
    if len(fam) == 0:
        raise DomainError("family has no members")
    return [(po.m, *[float(v) for v in po.X0]) for po in fam.members]


def export_sigma(fam: Family) -> list[tuple]:
    """Per-member singular value traces: (index, m, sigma_alpha,
    sigma_beta)."""
    return [(i, po.m, fam.sigma_alpha[i], fam.sigma_beta[i])
            for i, po in enumerate(fam.members)]


def _csv_cell(v) -> str:
    if isinstance(v, str):
        if "," in v or "\n" in v:
            raise DomainError(f"csv cell cannot hold separators: {v!r}")
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _fmt_float(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


@dataclass
class SemSlice:
    """Members of the archived families at one exact m value."""

    m: float
    entries: dict
    skipped: dict


def sem_slice(arch: Archive, m_target: float = M_SEM, tol: float = 1e-10,
              config=None) -> SemSlice:
    """Re-corrected member at m_target for every family whose walk
    crossed it; families that never reach it are skipped with a note."""
    entries = {}
    skipped = {}
    for name, rec in sorted(arch.families.items()):
        fam = family_from_record(rec)
        mv = fam.m_values
        if len(fam) < 2 or not (mv.min() <= m_target <= mv.max()):
            skipped[name] = (f"family spans m in "
                             f"[{mv.min():.6g}, {mv.max():.6g}]")
            continue
        try:
            po = member_at_m(fam, m_target, tol=tol, config=config)
        except (ConvergenceError, SingularityError, DomainError) as exc:
            skipped[name] = f"re-correction failed: {exc}"
            continue
        entries[name] = {
            "X0": [float(v) for v in po.X0],
            "residual": float(po.residual),
        }
    return SemSlice(m=m_target, entries=entries, skipped=skipped)
