"""TOML experiment configs: schema validation, defaults, hashing, and object construction."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .base_process import BaseProcess, build_process
from .families import builtin_family
from .geometry import Box
from .grid import Grid
from .maps import BranchMap, MapFamily, SaussolMap
from .osc import OscParams
from .transfer import TransferBackend

DEFAULTS = {
    "grid": {"n": 128, "backend": "ulam", "sampler": "exact", "samples": 4096, "seed": 0},
    "osc": {"ratio": 0.75, "levels": 16, "extension": "zero"},
    "ly": {"n": 256, "ensemble_size": 60, "ensemble_seed": 0, "tol_discr": "auto"},
    "density": {"s_max": 1 << 24, "tol_l1": 1e-6, "k_max": 2000, "horizon": 512, "anchors": [0, 1]},
    "analysis": {"anchors": [0], "k_max": 200, "lyapunov_n": 64, "bundle_size": 3, "cluster_tol": 1e-3,
                 "observables": ["x", "y", "box:[0,0.5]x[0,0.5]"], "orbit_length": 10_000, "n_points": 100,
                 "scaling_ns": [100, 1000, 10_000], "seed": 0},
    "output": {"dir": "out", "formats": ["json", "csv", "bin"]},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def schema() -> dict:
    text = resources.files("saussol_lab").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}")


def resolve(raw: dict, seed_override: int | None = None) -> dict:
    """Validated config with defaults filled in and the process section made explicit."""
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    fam_cfg = cfg["family"]
    if "name" in fam_cfg:
        try:
            _, default_proc = builtin_family(fam_cfg["name"])
        except KeyError as exc:
            raise ConfigError(f"config error at family.name: {exc.args[0]}") from None
        cfg["process"] = _merge(default_proc, cfg.get("process", {}))
    elif "process" not in cfg:
        raise ConfigError("config error at process: required for custom map families")
    cfg["process"].setdefault("seed", 0)
    if seed_override is not None:
        cfg["process"]["seed"] = int(seed_override)
    return cfg


def load(path, seed_override: int | None = None) -> dict:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config error: {exc}") from None
    return resolve(raw, seed_override)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _box(d: dict) -> Box:
    return Box(tuple(d["lower"]), tuple(d["upper"]))


def build_family(cfg: dict) -> MapFamily:
    fc, oc = cfg["family"], cfg["osc"]
    if "name" in fc:
        fam, _ = builtin_family(fc["name"], oc["alpha"], oc["eps0"], oc["S"])
        return fam
    C = _box(fc["box"])
    maps = {}
    for sym, mc in fc["maps"].items():
        branches = []
        for bc in mc["branches"]:
            ext = _box(bc["extension"]) if "extension" in bc else None
            # V_i defaults to U_i inflated by 2 ε0
            branches.append(BranchMap.affine(_box(bc["domain"]), bc["matrix"], bc["offset"], extension=ext,
                                             margin=2 * oc["eps0"]))
        maps[sym] = SaussolMap(mc.get("label", sym), branches, C)
    return MapFamily(maps, oc["alpha"], oc["eps0"], oc["S"], name="custom")


def build_process_from(cfg: dict) -> BaseProcess:
    return build_process(cfg["process"])


def osc_params(cfg: dict, family: MapFamily) -> OscParams:
    oc = cfg["osc"]
    return OscParams(family.alpha, family.eps_tilde, oc["ratio"], oc["levels"], oc["extension"])


def grid_for(family: MapFamily, n: int) -> Grid:
    """``n`` cells per unit length along every axis of ``C``."""
    return Grid.square_cells(family.box, n)


def backend(cfg: dict, grid: Grid, threads: int = 1) -> TransferBackend:
    g = cfg["grid"]
    return TransferBackend(g["backend"], grid, g["sampler"], g["samples"], g["seed"], threads)
