"""Command-line experiment runner.

Every subcommand produces a set of named artifacts (JSON reports, CSV plot
data, binary grid functions) in memory; the runner writes them under
``--out`` together with ``manifest.json`` holding their SHA-256 digests, the
resolved config and its hash.  ``replay`` re-executes a manifest and compares
digests.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 invalid config or
manifest, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import config as C
from .density import choose_xi, exp_log_eta, invariance_residual, invariant_density, positivity_summary, theta_bound
from .ergodic import count_ergodic, kappa_bound, lyapunov_bundle, lyapunov_estimate, physical_check, skew_bound
from .grid import GridFunction
from .lasota_yorke import (average_condition, ly_ensemble, map_constants, ratio_to_bound, hgfrd_bound, uniform_D,
                           verify_ly)
from .maps import pe_report

SUBCOMMANDS = ("check-pe", "verify-ly", "build-density", "lyapunov", "count-ergodic", "physical", "all")


@dataclass
class Outcome:
    passed: bool
    artifacts: dict = field(default_factory=dict)  # relative path -> bytes
    summary: dict = field(default_factory=dict)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def _json(obj) -> bytes:
    return (json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n").encode()


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue().encode()


def seeds_of(cfg: dict) -> dict:
    return {"process": cfg["process"]["seed"], "grid": cfg["grid"]["seed"], "ly_ensemble": cfg["ly"]["ensemble_seed"],
            "analysis": cfg["analysis"]["seed"]}


class Context:
    """Objects built once from a resolved config and shared across subcommands."""

    def __init__(self, cfg: dict, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self.family = C.build_family(cfg)
        self.process = C.build_process_from(cfg)
        self.params = C.osc_params(cfg, self.family)
        self.hash = C.config_hash(cfg)
        self._consts = None
        self._backend = None

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seeds": self.seeds()}

    def seeds(self) -> dict:
        return seeds_of(self.cfg)

    @property
    def constants(self) -> dict:
        if self._consts is None:
            self._consts = {s: map_constants(self.family, s) for s in self.family.symbols}
        return self._consts

    @property
    def etas(self) -> dict:
        return {s: c.eta for s, c in self.constants.items()}

    def xi_and_D_tilde(self) -> tuple[float, float]:
        xi = choose_xi(exp_log_eta(self.process, self.etas), self.cfg["density"].get("xi"))
        Dt = uniform_D([c.D for c in self.constants.values()], xi, self.family.eps_tilde, self.family.alpha)
        return xi, Dt

    @property
    def backend(self):
        if self._backend is None:
            grid = C.grid_for(self.family, self.cfg["grid"]["n"])
            self._backend = C.backend(self.cfg, grid, self.threads)
        return self._backend


# ---------------------------------------------------------------------------
# subcommands


def cmd_check_pe(ctx: Context) -> Outcome:
    zetas = {s: c.zeta for s, c in ctx.constants.items()}
    rep = pe_report(ctx.family, ctx.process, zetas=zetas)
    rep.update(ctx.provenance())
    return Outcome(rep["passed"], {"check_pe.json": _json(rep)}, {"passed": rep["passed"],
                                                                  "Lambda": {k: v["Lambda"] for k, v in rep["maps"].items()}})


def cmd_verify_ly(ctx: Context) -> Outcome:
    fam, cfg = ctx.family, ctx.cfg["ly"]
    grid = C.grid_for(fam, cfg["n"])
    ens = ly_ensemble(grid, cfg["ensemble_size"], cfg["ensemble_seed"])
    cond = average_condition(ctx.process, ctx.etas)
    xi, Dt = ctx.xi_and_D_tilde() if cond.verdict else (None, None)
    tol = None if cfg["tol_discr"] == "auto" else float(cfg["tol_discr"])
    arts, ok, mins = {}, cond.verdict, {}
    for sym in fam.symbols:
        c = ctx.constants[sym]
        rep = verify_ly(fam[sym], c, ens, grid, fam.alpha, fam.eps0, fam.S, D_tilde=Dt, threads=ctx.threads,
                        tol_discr=tol)
        rep.E_log_eta_exact, rep.E_log_eta_empirical = cond.exact, cond.empirical
        d = rep.to_dict()
        d.update(ctx.provenance(), symbol=sym, xi=xi)
        arts[f"ly_{sym}.json"] = _json(d)
        arts[f"ly_{sym}.csv"] = _csv(["function_id", "lhs", "rhs", "slack"],
                                     [(r["function_id"], r["lhs"], r["rhs"], r["slack"]) for r in rep.rows])
        prof = c.profile
        bound = hgfrd_bound(fam[sym], fam.eps0, fam.S, prof.eps)
        arts[f"g_profile_{sym}.csv"] = _csv(["eps", "G", "sigma", "hgfrd_bound", "ratio"],
                                            zip(prof.eps, prof.values, prof.sigma, bound,
                                                ratio_to_bound(prof, fam[sym], fam.S)))
        ok &= rep.passed
        mins[sym] = rep.min_slack
    summary = {"E_log_eta": cond.exact if cond.exact is not None else cond.empirical, "min_slack": mins}
    arts["ly_summary.json"] = _json(dict(summary, passed=ok, **ctx.provenance()))
    return Outcome(bool(ok), arts, summary)


def _density_records(ctx: Context):
    dc = ctx.cfg["density"]
    be = ctx.backend
    be.matrix(ctx.family[ctx.family.symbols[0]])
    xi, Dt = ctx.xi_and_D_tilde()
    def build(anchor):
        rec = invariant_density(ctx.family, ctx.process, anchor, be, ctx.params, dc["s_max"], dc["tol_l1"],
                                dc["k_max"])
        rec.theta = theta_bound(ctx.family, ctx.process, anchor, ctx.etas, Dt, xi, dc["horizon"])
        rec.positivity = positivity_summary(rec.h, ctx.params) if rec.h.values.min() >= 0 and rec.h.l1() > 0 else None
        return rec

    anchors = list(dc["anchors"])
    with ThreadPoolExecutor(max_workers=max(1, ctx.threads)) as pool:
        recs = list(pool.map(build, anchors))
    return anchors, recs


def cmd_build_density(ctx: Context) -> Outcome:
    anchors, recs = _density_records(ctx)
    dc = ctx.cfg["density"]
    by_anchor = dict(zip(anchors, recs))
    arts, ok = {}, True
    rows = []
    for a, rec in zip(anchors, recs):
        if a + 1 in by_anchor:
            rec.residual = invariance_residual(ctx.family, ctx.process, a, ctx.backend, rec.h, by_anchor[a + 1].h)
        d = rec.to_dict()
        d.update(ctx.provenance(), tol_l1=dc["tol_l1"], witnessed_note="j0 is witnessed on a finite past window")
        arts[f"density_{a}.json"] = _json(d)
        arts[f"density_{a}_trace.csv"] = rec.trace_csv().encode()
        arts[f"density_{a}.bin"] = rec.h.to_bytes()
        good = rec.converged and rec.bound_holds and rec.positivity is not None and rec.positivity["found"]
        if rec.residual is not None:
            good &= rec.residual <= 2 * dc["tol_l1"] + 1e-12
        ok &= bool(good)
        rows.append({"anchor": a, "s": rec.s, "increment": rec.increment, "max_v_alpha": rec.max_v_alpha,
                     "Theta": rec.theta.Theta, "residual": rec.residual, "passed": bool(good)})
    arts["density_summary.json"] = _json({"records": rows, "passed": ok, **ctx.provenance()})
    return Outcome(bool(ok), arts, {"records": rows})


def cmd_lyapunov(ctx: Context) -> Outcome:
    ac = ctx.cfg["analysis"]
    grid = C.grid_for(ctx.family, ac["lyapunov_n"])
    be = C.backend(ctx.cfg, grid, ctx.threads)
    bundle = lyapunov_bundle(grid, ac["bundle_size"], ac["seed"])
    arts, ok = {}, True
    kb = kappa_bound(ctx.process, ctx.etas)
    for a in ac["anchors"]:
        rep = lyapunov_estimate(ctx.family, ctx.process, a, bundle, ac["k_max"], be, ctx.params, ctx.threads)
        rep.kappa_bound = kb.bound
        dens = rep.density_estimates
        good = all(-0.02 <= v <= 0.02 for v in dens) and kb.verdict
        ok &= good
        arts[f"lyapunov_{a}.json"] = _json(dict(rep.to_dict(), anchor=a, verdict=kb.label, passed=good,
                                                **ctx.provenance()))
        for i, name in enumerate(rep.names):
            arts[f"lyapunov_{a}_{name}.csv"] = rep.trace_csv(i).encode()
    return Outcome(bool(ok), arts, {"kappa_bound": kb.bound})


def cmd_count_ergodic(ctx: Context) -> Outcome:
    ac, dc = ctx.cfg["analysis"], ctx.cfg["density"]
    arts, ok, summary = {}, True, {}
    bound = None
    try:
        xi, Dt = ctx.xi_and_D_tilde()
        sb = skew_bound(ctx.family, ctx.process, ac["anchors"], ctx.etas, Dt, xi, dc["horizon"])
        bound = sb.to_dict()
    except ValueError as exc:
        bound = {"bound": None, "not_applicable": str(exc)}
    for a in ac["anchors"]:
        ec = count_ergodic(ctx.family, ctx.process, a, ctx.backend, ctx.params, cluster_tol=ac["cluster_tol"],
                           s_max=dc["s_max"], tol_l1=dc["tol_l1"], threads=ctx.threads)
        d = ec.to_dict()
        d.update(ctx.provenance(), anchor=a, skew=bound)
        good = ec.r_emp >= 1 and (bound["bound"] is None or ec.r_emp <= bound["bound"])
        d["passed"] = good
        ok &= good
        arts[f"ergodic_{a}.json"] = _json(d)
        arts[f"ergodic_{a}_distances.csv"] = ec.distance_csv().encode()
        summary[a] = ec.r_emp
    return Outcome(bool(ok), arts, {"r_emp": summary, "bound": bound.get("bound")})


def cmd_physical(ctx: Context) -> Outcome:
    ac, dc = ctx.cfg["analysis"], ctx.cfg["density"]
    refs = []
    first = ac["anchors"][0]
    ec = count_ergodic(ctx.family, ctx.process, first, ctx.backend, ctx.params, cluster_tol=ac["cluster_tol"],
                       s_max=dc["s_max"], tol_l1=dc["tol_l1"], threads=ctx.threads)
    grid = ctx.backend.grid
    if ec.r_emp == 1:
        # ν = average of h_ω over the sampled anchors
        hs = [invariant_density(ctx.family, ctx.process, a, ctx.backend, ctx.params, dc["s_max"], dc["tol_l1"],
                                dc["k_max"]).h.values for a in ac["anchors"]]
        refs = [GridFunction(grid, np.mean(hs, axis=0))]
    else:
        refs = [GridFunction(grid, r.reshape(grid.shape)) for r in ec.representatives]
    rng = np.random.default_rng(ac["seed"])
    x0 = ctx.family.box.sample(rng, ac["n_points"])
    scaling = [n for n in ac["scaling_ns"] if n <= ac["orbit_length"]]
    rep = physical_check(ctx.family, ctx.process, first, x0, ac["observables"], ac["orbit_length"], refs,
                         seed=ac["seed"], scaling_ns=scaling or None)
    slope = rep.scaling.get("slope")
    good = rep.coverage >= 0.95 and (slope is None or -0.6 <= slope <= -0.4)
    d = dict(rep.to_dict(), passed=good, references=len(refs), **ctx.provenance())
    arts = {"physical.json": _json(d), "physical_deviation.csv": rep.deviation_csv().encode(),
            "physical_averages.csv": _csv(["x0_index"] + list(rep.observables) + ["reference"],
                                          [[i] + list(a) + [r] for i, (a, r) in
                                           enumerate(zip(rep.averages, rep.assignment))])}
    return Outcome(bool(good), arts, {"coverage": rep.coverage, "slope": slope})


COMMANDS = {"check-pe": cmd_check_pe, "verify-ly": cmd_verify_ly, "build-density": cmd_build_density,
            "lyapunov": cmd_lyapunov, "count-ergodic": cmd_count_ergodic, "physical": cmd_physical}


def run(subcommand: str, cfg: dict, threads: int = 1) -> Outcome:
    ctx = Context(cfg, threads)
    if subcommand != "all":
        return COMMANDS[subcommand](ctx)
    arts, ok, summary = {}, True, {}
    for name, fn in COMMANDS.items():
        out = fn(ctx)
        arts.update({f"{name}/{k}": v for k, v in out.artifacts.items()})
        ok &= out.passed
        summary[name] = out.passed
    return Outcome(bool(ok), arts, summary)


# ---------------------------------------------------------------------------
# manifests and replay


def _code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def digests(artifacts: dict) -> dict:
    return {k: hashlib.sha256(v).hexdigest() for k, v in sorted(artifacts.items())}


def _selected(artifacts: dict, cfg: dict) -> dict:
    formats = set(cfg["output"]["formats"])
    return {k: v for k, v in artifacts.items() if k.rsplit(".", 1)[-1] in formats}


def write_outputs(out_dir, subcommand: str, cfg: dict, outcome: Outcome, threads: int, started: float) -> Path:
    out = Path(out_dir)
    kept = _selected(outcome.artifacts, cfg)
    for rel, data in sorted(kept.items()):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    manifest = {"subcommand": subcommand, "config": cfg, "config_hash": C.config_hash(cfg),
                "code_version": _code_version(), "seeds": seeds_of(cfg),
                "threads": threads, "artifacts": digests(kept), "passed": outcome.passed,
                "timestamps": {"started": started, "finished": time.time()}}
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), sort_keys=True, indent=2) + "\n")
    return out / "manifest.json"


def replay(manifest_path, threads: int | None = None, seed_override: int | None = None) -> tuple[bool, list]:
    """Re-run a manifest in memory; returns ``(identical, differing artifact names)``."""
    man = json.loads(Path(manifest_path).read_text())
    cfg = C.resolve(man["config"], seed_override)
    if C.config_hash(cfg) != man["config_hash"] and seed_override is None:
        raise C.ConfigError("manifest config does not match its recorded hash")
    out = run(man["subcommand"], cfg, threads or man.get("threads", 1))
    new = digests(_selected(out.artifacts, cfg))
    old = man["artifacts"]
    diff = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    return not diff, diff


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saussol-lab", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: output.dir of the config)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed-override", type=int, default=None, help="replace the base-process seed (u64)")
    rp = sub.add_parser("replay")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--threads", type=int, default=None)
    rp.add_argument("--seed-override", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.seed_override is not None and not (0 <= args.seed_override < 1 << 64):
        print("error: --seed-override must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        if args.command == "replay":
            same, diff = replay(args.manifest, args.threads, args.seed_override)
            print("identical" if same else "differs: " + ", ".join(diff))
            return 0 if same else 1
        cfg = C.load(args.config, args.seed_override)
    except (C.ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    started = time.time()
    try:
        outcome = run(args.command, cfg, max(1, args.threads))
    except Exception as exc:  # surface module context, keep exit code distinct
        print(f"error in {exc.__class__.__module__}: {exc}", file=sys.stderr)
        return 3
    out_dir = args.out if args.out is not None else Path(cfg["output"]["dir"])
    manifest = write_outputs(out_dir, args.command, cfg, outcome, args.threads, started)
    print(json.dumps(_clean({"command": args.command, "passed": outcome.passed, "summary": outcome.summary,
                             "manifest": str(manifest)}), sort_keys=True))
    return 0 if outcome.passed else 1


if __name__ == "__main__":
    sys.exit(main())
