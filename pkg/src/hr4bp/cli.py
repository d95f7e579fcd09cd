"""Command-line driver: seed builds, persistence surveys, family
continuation, rank-drop scans, branch switching, slices, and exports.

One declarative JSON config describes a run; subcommands execute single
stages against a shared archive file, and ``run`` executes the whole
pipeline.  Flags override config entries.  Exit codes: 0 clean, 2 when
some independent jobs failed, 1 for unusable configuration or arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .archive import (Archive, M_SEM, canonical_json, candidate_record,
                      export_hodograph, export_sigma, family_from_record,
                      family_record, seed_record, sem_slice,
                      validate_archive, write_csv)
from .bifurcation import (COLLAPSE_MARK, refine_candidate, scan_family,
                          switch_branch)
from .continuation import (M_MAX, continue_family, correct_fixed_m,
                           seed_from_melnikov)
from .dynamics import jacobi_constant
from .errors import DomainError, Hr4bpError
from .hvo import HvoSeries
from .melnikov import melnikov_basis, melnikov_zeros, resonant_orbit
from .seeds import (Cr3bpSeed, halo_family, l4_short_family,
                    libration_point, lyapunov_family, nrho_seed,
                    tune_period, vertical_family)

ARCHIVE_DIR_ENV = "HR4BP_ARCHIVE_DIR"

_DEFAULTS = {
    "mu": 0.0122,
    "archive": "hr4bp_archive.json",
    "workers": 1,
    "melnikov_m0": 1e-3,
    "corrector_tol": 1e-10,
    "seeds": [],
    "continuation": {
        "ds0": 5e-4,
        "ds_max": 0.02,
        "m_max": M_MAX,
        "max_members": 5000,
        "directions": [1],
    },
    "bifurcation": {
        "scan": True,
        "branch": True,
        "theta": 0.1,
        "n_B": 1,
        "ds0": 1e-3,
        "max_branches": 4,
    },
}


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(_DEFAULTS))
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise DomainError("config root must be a JSON object")
        for key, val in user.items():
            if key in ("continuation", "bifurcation"):
                if not isinstance(val, dict):
                    raise DomainError(f"config key '{key}' must be an object")
                cfg[key].update(val)
            else:
                cfg[key] = val
    if not isinstance(cfg["seeds"], list):
        raise DomainError("config key 'seeds' must be a list")
    return cfg


def resolve_archive_path(cfg: dict, override: str | None = None) -> str:
    path = override or cfg["archive"]
    env_dir = os.environ.get(ARCHIVE_DIR_ENV)
    if env_dir:
        path = os.path.join(env_dir, os.path.basename(path))
    return path


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# stage helpers


def build_seed(spec: dict, mu: float) -> Cr3bpSeed:
    """One CR3BP starting orbit from its declarative description."""
    kind = spec.get("kind")
    name = spec.get("name")
    if not name or not kind:
        raise DomainError(f"seed spec needs 'name' and 'kind': {spec}")
    if kind == "nrho":
        seed = nrho_seed(mu, north=bool(spec.get("north", False)))
        seed.family = name
        return seed
    L = libration_point(int(spec["point"]), mu)
    if kind == "libration_point":
        b = int(spec.get("b", 1))
        X0 = L.state
        return Cr3bpSeed(family=name, X0=X0, T_star=b * math.pi, mu=mu,
                         a=1, b=b, jacobi=jacobi_constant(X0, mu),
                         residual=0.0)
    T = float(spec["T"])
    if kind == "l4_short":
        fam = l4_short_family(L)
    elif kind == "lyapunov":
        fam = lyapunov_family(L)
    elif kind == "vertical":
        fam = vertical_family(L)
    elif kind == "halo":
        fam = halo_family(L, north=bool(spec.get("north", True)))
    else:
        raise DomainError(f"unknown seed kind '{kind}'")
    seed = tune_period(fam, T)
    seed.family = name
    return seed


def survey_seed(seed: Cr3bpSeed) -> dict:
    """Persistence-function zeros for one resonant starting orbit."""
    orb = resonant_orbit(seed.X0, seed.T_star, seed.mu)
    basis = melnikov_basis(orb)
    zeros = melnikov_zeros(basis)
    return {"zeros": [float(z) for z in zeros], "b": int(orb.b)}


def _family_jobs(name: str, seed: Cr3bpSeed, survey: dict | None,
                 cfg: dict) -> list[tuple]:
    """(family name, direction, start thunk) for every walk this seed
    owns."""
    cont = cfg["continuation"]
    jobs = []
    tol = cfg["corrector_tol"]
    if survey is None:
        def start_point():
            return correct_fixed_m(seed.X0, int(seed.b or 1), m=0.0,
                                   mu=seed.mu, tol=tol)
        starts = [(name, start_point)]
    else:
        starts = []
        for k, z in enumerate(survey["zeros"]):
            def start_zero(z=z):
                orb = resonant_orbit(seed.X0, seed.T_star, seed.mu)
                return seed_from_melnikov(orb, z, m0=cfg["melnikov_m0"],
                                          tol=tol)
            starts.append((f"{name}/z{k}", start_zero))
    for fam_name, thunk in starts:
        for direction in cont["directions"]:
            suffix = "" if direction > 0 else "/down"
            jobs.append((fam_name + suffix, direction, thunk))
    return jobs


def _walk(thunk, direction: int, provenance: str, cfg: dict):
    cont = cfg["continuation"]
    start = thunk()
    return continue_family(
        start, direction=direction, ds0=cont["ds0"],
        ds_max=cont["ds_max"], m_max=cont["m_max"],
        max_members=cont["max_members"], tol=cfg["corrector_tol"],
        provenance=provenance)


def _pmap(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_pipeline(cfg: dict, archive_path: str | None = None
                 ) -> tuple[Archive, list]:
    """All stages: seeds, surveys, zero seeding, continuation, rank-drop
    scan, branch switching.  Independent jobs continue past failures;
    every failure is recorded.  A rerun against an archive produced from
    the same config returns it untouched.
    """
    path = resolve_archive_path(cfg, archive_path)
    chash = config_hash(cfg)
    if os.path.exists(path):
        try:
            prior = Archive.load(path)
        except (Hr4bpError, json.JSONDecodeError, KeyError):
            prior = None
        if prior is not None and prior.metadata.get("config_hash") == chash:
            return prior, prior.metadata.get("errors", [])

    errors: list[dict] = []
    arch = Archive(metadata={
        "code_version": __version__,
        "config_hash": chash,
        "tolerances": {
            "corrector": cfg["corrector_tol"],
            "melnikov_m0": cfg["melnikov_m0"],
        },
        "surveys": {},
        "errors": errors,
    })
    mu = float(cfg["mu"])
    workers = int(cfg["workers"])

    def guarded(stage, job_name, fn, *a, **k):
        try:
            return fn(*a, **k)
        except Exception as exc:
            errors.append({"stage": stage, "job": job_name,
                           "error": f"{type(exc).__name__}: {exc}"})
            return None

    # seeds
    built: list[tuple[str, Cr3bpSeed]] = []
    for spec in cfg["seeds"]:
        name = spec.get("name", "?")
        seed = guarded("seeds", name, build_seed, spec, mu)
        if seed is not None:
            arch.seeds[name] = seed_record(seed)
            built.append((name, seed))

    # surveys, then one continuation job per (zero, direction)
    walk_jobs = []
    for name, seed in built:
        point_like = bool(next((s.get("kind") == "libration_point"
                                for s in cfg["seeds"]
                                if s.get("name") == name), False))
        if point_like:
            survey = None
        else:
            survey = guarded("melnikov", name, survey_seed, seed)
            if survey is None:
                continue
            arch.metadata["surveys"][name] = survey
        for fam_name, direction, thunk in _family_jobs(name, seed,
                                                       survey, cfg):
            walk_jobs.append((fam_name, direction, thunk, name))

    def do_walk(job):
        fam_name, direction, thunk, seed_name = job
        fam = guarded("continuation", fam_name, _walk, thunk, direction,
                      fam_name, cfg)
        return (fam_name, seed_name, fam)

    for fam_name, seed_name, fam in _pmap(do_walk, walk_jobs, workers):
        if fam is not None and len(fam) > 0:
            arch.families[fam_name] = family_record(fam, seed=seed_name)

    # rank-drop scan over every stored family
    bif = cfg["bifurcation"]
    candidates = {}
    if bif["scan"]:
        def do_scan(item):
            fam_name, rec = item
            fam = family_from_record(rec)
            if len(fam) < 3:
                return (fam_name, fam, [])
            flags = guarded("scan", fam_name, scan_family, fam,
                            bif["n_B"], bif["theta"])
            return (fam_name, fam, flags or [])

        scan_items = sorted(arch.families.items())
        for fam_name, fam, flags in _pmap(do_scan, scan_items, workers):
            for index, which, _ in flags:
                cid = f"{fam_name}#{index}-{which}"
                cand = guarded("refine", cid, refine_candidate, fam,
                               index, which, bif["n_B"])
                if cand is None:
                    continue
                cand.parent = fam_name
                arch.candidates[cid] = candidate_record(cand)
                candidates[cid] = (cand, fam)

    # branch switching and continuation of the new families
    if bif["scan"] and bif["branch"]:
        grown = 0
        for cid in sorted(candidates):
            if grown >= bif["max_branches"]:
                break
            cand, parent = candidates[cid]
            try:
                branch_po, _ = switch_branch(cand, bif["ds0"],
                                             parent_family=parent,
                                             tol=cfg["corrector_tol"])
            except Exception as exc:
                if COLLAPSE_MARK in str(exc):
                    # not a failure: this rank drop does not open a
                    # distinct family at the scanned n_B
                    arch.metadata.setdefault("branch_notes", {})[cid] = \
                        str(exc)
                else:
                    errors.append({"stage": "branch", "job": cid,
                                   "error": f"{type(exc).__name__}: {exc}"})
                continue
            fam = guarded("branch", cid, continue_family, branch_po,
                          +1, cfg["continuation"]["ds0"],
                          cfg["continuation"]["ds_max"],
                          m_max=cfg["continuation"]["m_max"],
                          tol=cfg["corrector_tol"])
            if fam is not None and len(fam) > 0:
                fam.provenance = f"{cid}/branch"
                arch.families[f"{cid}/branch"] = family_record(
                    fam, parent=cid)
                grown += 1

    validate_archive(arch)
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        arch.save(path)
    return arch, errors


# ---------------------------------------------------------------------------
# subcommands


def _cmd_hvo_dump(args) -> int:
    series = HvoSeries.load(args.mode)
    text = canonical_json(series.coefficient_table()) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_seeds_build(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    arch = Archive.load(path) if os.path.exists(path) else Archive(
        metadata={"code_version": __version__, "surveys": {}, "errors": []})
    failures = 0
    for spec in cfg["seeds"]:
        name = spec.get("name", "?")
        try:
            seed = build_seed(spec, float(cfg["mu"]))
        except Exception as exc:
            print(f"seed {name}: FAILED ({exc})", file=sys.stderr)
            failures += 1
            continue
        arch.seeds[name] = seed_record(seed)
        print(f"seed {name}: T* = {seed.T_star:.12g}, "
              f"residual = {seed.residual:.3e}")
    arch.save(path)
    return 2 if failures else 0


def _cmd_melnikov_survey(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    if not os.path.exists(path):
        print(f"no archive at {path}; run 'seeds build' first",
              file=sys.stderr)
        return 1
    arch = Archive.load(path)
    names = [args.seed] if args.seed else sorted(arch.seeds)
    failures = 0
    for name in names:
        if name not in arch.seeds:
            print(f"survey {name}: no such seed", file=sys.stderr)
            failures += 1
            continue
        seed = Cr3bpSeed.from_dict(arch.seeds[name])
        try:
            survey = survey_seed(seed)
        except Exception as exc:
            print(f"survey {name}: FAILED ({exc})", file=sys.stderr)
            failures += 1
            continue
        arch.metadata.setdefault("surveys", {})[name] = survey
        print(f"survey {name}: zeros at "
              + ", ".join(f"{z:.9f}" for z in survey["zeros"]))
    arch.save(path)
    return 2 if failures else 0


def _cmd_continue(args) -> int:
    cfg = load_config(args.config)
    if args.m_max is not None:
        cfg["continuation"]["m_max"] = args.m_max
    if args.ds0 is not None:
        cfg["continuation"]["ds0"] = args.ds0
    path = resolve_archive_path(cfg, args.archive)
    if not os.path.exists(path):
        print(f"no archive at {path}; run 'seeds build' first",
              file=sys.stderr)
        return 1
    arch = Archive.load(path)
    if args.seed not in arch.seeds:
        print(f"no such seed '{args.seed}'", file=sys.stderr)
        return 1
    seed = Cr3bpSeed.from_dict(arch.seeds[args.seed])
    point_like = any(s.get("name") == args.seed
                     and s.get("kind") == "libration_point"
                     for s in cfg["seeds"])
    survey = None
    if not point_like:
        survey = arch.metadata.get("surveys", {}).get(args.seed)
        if survey is None:
            survey = survey_seed(seed)
            arch.metadata.setdefault("surveys", {})[args.seed] = survey
    failures = 0
    for fam_name, direction, thunk in _family_jobs(args.seed, seed,
                                                   survey, cfg):
        try:
            fam = _walk(thunk, direction, fam_name, cfg)
        except Exception as exc:
            print(f"family {fam_name}: FAILED ({exc})", file=sys.stderr)
            failures += 1
            continue
        arch.families[fam_name] = family_record(fam, seed=args.seed)
        mv = fam.m_values
        print(f"family {fam_name}: {len(fam)} members, "
              f"m in [{mv.min():.6g}, {mv.max():.6g}], "
              f"terminated: {fam.termination}")
    arch.save(path)
    return 2 if failures else 0


def _cmd_bif_scan(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    arch = Archive.load(path)
    if args.family not in arch.families:
        print(f"no such family '{args.family}'", file=sys.stderr)
        return 1
    fam = family_from_record(arch.families[args.family])
    flags = scan_family(fam, n_B=args.nB, theta=args.theta)
    flagged_at = {i for i, _, _ in flags}
    rows = [(i, po.m, fam.sigma_alpha[i], fam.sigma_beta[i],
             i in flagged_at)
            for i, po in enumerate(fam.members)]
    if args.out:
        write_csv(args.out, ["index", "m", "sigma_alpha", "sigma_beta",
                             "flagged"], rows)
    for index, which, sp in flags:
        cid = f"{args.family}#{index}-{which}"
        cand = refine_candidate(fam, index, which, args.nB)
        cand.parent = args.family
        arch.candidates[cid] = candidate_record(cand)
        print(f"candidate {cid}: m = {cand.member.m:.9f}, "
              f"sigma_{which} = "
              f"{getattr(cand.spectrum, 'sigma_' + which):.3e}"
              + (f" [{cand.symmetry_note}]" if cand.symmetry_note else ""))
    if not flags:
        print("no rank-drop candidates flagged")
    arch.save(path)
    return 0


def _cmd_bif_branch(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    arch = Archive.load(path)
    if args.candidate not in arch.candidates:
        print(f"no such candidate '{args.candidate}'", file=sys.stderr)
        return 1
    rec = arch.candidates[args.candidate]
    parent = family_from_record(arch.families[rec["parent"]])
    from .bifurcation import BranchCandidate, member_spectrum
    member = correct_fixed_m(np.asarray(rec["X0"]), parent.b,
                             parent.tau0, rec["m"], parent.mu,
                             tol=cfg["corrector_tol"])
    spectrum = member_spectrum(member, rec["n_B"])
    v = np.asarray(rec["v_sigma"], dtype=float)
    if rec["which"] == "alpha":
        spectrum.v_alpha = v
    else:
        spectrum.v_beta = v
    cand = BranchCandidate(parent=rec["parent"], index=rec["index"],
                           which=rec["which"], member=member,
                           spectrum=spectrum,
                           symmetry_note=rec["symmetry_note"])
    try:
        branch_po, step = switch_branch(cand, cfg["bifurcation"]["ds0"],
                                        parent_family=parent,
                                        tol=cfg["corrector_tol"])
    except Hr4bpError as exc:
        print(f"branch {args.candidate}: FAILED ({exc})", file=sys.stderr)
        return 2
    fam = continue_family(branch_po, direction=+1,
                          ds0=cfg["continuation"]["ds0"],
                          ds_max=cfg["continuation"]["ds_max"],
                          m_max=cfg["continuation"]["m_max"],
                          tol=cfg["corrector_tol"],
                          provenance=f"{args.candidate}/branch")
    arch.families[f"{args.candidate}/branch"] = family_record(
        fam, parent=args.candidate)
    mv = fam.m_values
    print(f"branch {args.candidate}: stepped {step:+.3e}, "
          f"{len(fam)} members, m in [{mv.min():.6g}, {mv.max():.6g}]")
    arch.save(path)
    return 0


def _cmd_slice(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    arch = Archive.load(path)
    sl = sem_slice(arch, m_target=args.m, tol=cfg["corrector_tol"])
    rows = []
    for name in sorted(sl.entries):
        e = sl.entries[name]
        rows.append((name, sl.m, *e["X0"], e["residual"]))
        print(f"slice {name}: residual = {e['residual']:.3e}")
    for name in sorted(sl.skipped):
        print(f"slice {name}: skipped ({sl.skipped[name]})")
    if args.out:
        write_csv(args.out, ["family", "m", "x0", "y0", "z0",
                             "dx0", "dy0", "dz0", "residual"], rows)
    return 0


def _cmd_export(args) -> int:
    cfg = load_config(args.config)
    path = resolve_archive_path(cfg, args.archive)
    arch = Archive.load(path)
    if args.family not in arch.families:
        print(f"no such family '{args.family}'", file=sys.stderr)
        return 1
    fam = family_from_record(arch.families[args.family])
    if args.what == "hodograph":
        rows = export_hodograph(fam)
        header = ["m", "x0", "y0", "z0", "dx0", "dy0", "dz0"]
    else:
        rows = export_sigma(fam)
        header = ["index", "m", "sigma_alpha", "sigma_beta"]
    write_csv(args.out, header, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg["workers"] = args.workers
    arch, errors = run_pipeline(cfg, args.archive)
    print(f"archive: {len(arch.seeds)} seeds, {len(arch.families)} "
          f"families, {len(arch.candidates)} candidates")
    for err in errors:
        print(f"  failed [{err['stage']}] {err['job']}: {err['error']}",
              file=sys.stderr)
    return 2 if errors else 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_archive_arg(p):
    p.add_argument("--archive", help="archive file (overrides config)")
    p.add_argument("--config", help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hr4bp",
        description="Periodic orbit families of the forced three-body "
                    "field, from seed construction to branch switching.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    hvo = sub.add_parser("hvo").add_subparsers(dest="sub", required=True)
    dump = hvo.add_parser("dump", help="exact series coefficient tables")
    dump.add_argument("--mode", choices=["full", "melnikov"],
                      default="full")
    dump.add_argument("--out")
    dump.set_defaults(fn=_cmd_hvo_dump)

    seeds = sub.add_parser("seeds").add_subparsers(dest="sub",
                                                   required=True)
    sb = seeds.add_parser("build", help="construct configured seeds")
    _add_archive_arg(sb)
    sb.set_defaults(fn=_cmd_seeds_build)

    mel = sub.add_parser("melnikov").add_subparsers(dest="sub",
                                                    required=True)
    sv = mel.add_parser("survey", help="persistence zeros per seed")
    _add_archive_arg(sv)
    sv.add_argument("--seed")
    sv.set_defaults(fn=_cmd_melnikov_survey)

    cont = sub.add_parser("continue", help="seed and walk families")
    _add_archive_arg(cont)
    cont.add_argument("--seed", required=True)
    cont.add_argument("--m-max", type=float, dest="m_max")
    cont.add_argument("--ds0", type=float)
    cont.set_defaults(fn=_cmd_continue)

    bif = sub.add_parser("bifurcations").add_subparsers(dest="sub",
                                                        required=True)
    bscan = bif.add_parser("scan", help="rank-drop scan of one family")
    _add_archive_arg(bscan)
    bscan.add_argument("--family", required=True)
    bscan.add_argument("--nB", type=int, default=1)
    bscan.add_argument("--theta", type=float, default=0.1)
    bscan.add_argument("--out")
    bscan.set_defaults(fn=_cmd_bif_scan)
    bbr = bif.add_parser("branch", help="switch onto a flagged branch")
    _add_archive_arg(bbr)
    bbr.add_argument("--candidate", required=True)
    bbr.set_defaults(fn=_cmd_bif_branch)

    sl = sub.add_parser("slice", help="members at one exact m")
    _add_archive_arg(sl)
    sl.add_argument("--m", type=float, default=M_SEM)
    sl.add_argument("--out")
    sl.set_defaults(fn=_cmd_slice)

    exp = sub.add_parser("export").add_subparsers(dest="what",
                                                  required=True)
    for what in ("hodograph", "sigma"):
        e = exp.add_parser(what)
        _add_archive_arg(e)
        e.add_argument("--family", required=True)
        e.add_argument("--out", required=True)
        e.set_defaults(fn=_cmd_export)

    run = sub.add_parser("run", help="full pipeline from a config")
    run.add_argument("config")
    run.add_argument("--archive")
    run.add_argument("--workers", type=int)
    run.set_defaults(fn=_cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
