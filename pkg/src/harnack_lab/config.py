"""Experiment configuration: TOML documents, ``--set`` overrides, and model resolution.

Grammar (all sections optional except ``seed``)::

    seed = 7
    [model]
    d = 2
    drift = "ou:1.0"              # zero | ou:<lambda> | osgood | rot-decay
    rho = "linear:1.0"            # linear:<c0> | osgood | table:<file of "r rho" rows>
    subordinator = "stable:1.5"   # one law for all coordinates, or a list of d laws
    alpha = [1.5, 1.5]            # shortcut for stable laws, overrides subordinator
    [run]
    T = 1.0
    x = [0.0, 0.0]
    y = [0.1, 0.0]
    n_mc = 10000
    n_steps = 200
    epsilon = 0.9
    p = 2.0
    regularize_n = 10000
    [f]
    kind = "shifted_gaussian_bump"
    center = [0.5, 0.5]
    [[scenarios]]                 # verify-harnack / gradient: per-scenario overrides
    name = "ou-d1"
    model = { d = 1 }
    run = { x = [0.0], y = [0.2] }

Command-specific sections are ``[levy]``, ``[moments]``, ``[couple]``,
``[harnack]``, ``[gradient]`` and ``[rho_table]``; see the README.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import rho as rho_mod
from .errors import ConfigError, DomainError
from .paths import SubordinatorSpec, parse_law
from .sde import parse_drift

RUN_DEFAULTS = {
    "T": 1.0,
    "n_mc": 10_000,
    "n_steps": 200,
    "epsilon": 0.9,
    "p": 2.0,
    "regularize_n": 10_000,
}


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc, assignment):
    """Apply ``a.b.c=value``; the value is read as a TOML literal, else as a bare string."""
    key, sep, value = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError("--set", f"expected key=value, got {assignment!r}")
    parts = key.split(".")
    node = doc
    for i, part in enumerate(parts[:-1]):
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(".".join(parts[: i + 1]), "is not a section")
    node[parts[-1]] = _parse_value(value.strip())
    return doc


def load_config(path, overrides=()):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    for assignment in overrides:
        apply_override(doc, assignment)
    if "seed" not in doc:
        raise ConfigError("seed", "required (runs are never seeded from the clock)")
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an integer in [0, 2^64)")
    doc["_base_dir"] = str(path.resolve().parent)
    return doc


def digest(doc):
    """sha256 of the canonical JSON form; insensitive to key order."""
    clean = {k: v for k, v in doc.items() if not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenarios(doc):
    """Yield (name, merged document) per ``[[scenarios]]`` entry, or the base document once."""
    entries = doc.get("scenarios") or [{}]
    if not isinstance(entries, list):
        raise ConfigError("scenarios", "must be an array of tables")
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"scenarios[{i}]", "must be a table")
        entry = dict(entry)
        name = str(entry.pop("name", f"scenario-{i}"))
        merged = _merge({k: v for k, v in doc.items() if k != "scenarios"}, entry)
        yield name, merged


@dataclass
class Model:
    d: int
    drift: object
    rho: rho_mod.RhoModulus
    spec: SubordinatorSpec


def section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    return sec


def resolve_model(doc):
    m = section(doc, "model")
    d = m.get("d")
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ConfigError("model.d", "must be a positive integer")
    try:
        rho = rho_mod.parse_rho(str(m.get("rho", "linear:1.0")), doc.get("_base_dir"))
    except (DomainError, ValueError, OSError) as exc:
        raise ConfigError("model.rho", str(exc)) from None
    if "alpha" in m:
        alphas = m["alpha"] if isinstance(m["alpha"], list) else [m["alpha"]] * d
        laws, where = [f"stable:{a}" for a in alphas], "model.alpha"
    else:
        sub = m.get("subordinator", "stable:1.5")
        laws, where = (sub if isinstance(sub, list) else [sub] * d), "model.subordinator"
    if len(laws) != d:
        raise ConfigError(where, f"has {len(laws)} entries, expected d = {d}")
    parsed = []
    for j, text in enumerate(laws):
        try:
            parsed.append(parse_law(str(text)))
        except ValueError as exc:
            raise ConfigError(f"{where}[{j}]", str(exc)) from None
    drift = parse_drift(str(m.get("drift", "ou:1.0")), d, rho)
    return Model(d, drift, rho, SubordinatorSpec(tuple(parsed)))


def run_params(doc, d=None):
    r = {**RUN_DEFAULTS, **section(doc, "run")}
    for key in ("n_mc", "n_steps", "regularize_n"):
        if not isinstance(r[key], int) or r[key] < 1:
            raise ConfigError(f"run.{key}", "must be a positive integer")
    for key in ("T", "epsilon", "p"):
        if not isinstance(r[key], (int, float)) or isinstance(r[key], bool):
            raise ConfigError(f"run.{key}", "must be a number")
        r[key] = float(r[key])
    if r["T"] <= 0:
        raise ConfigError("run.T", "must be positive")
    if d is not None:
        for key in ("x", "y"):
            v = r.setdefault(key, [0.0] * d)
            if not isinstance(v, list) or len(v) != d:
                raise ConfigError(f"run.{key}", f"must be a list of length d = {d}")
            r[key] = [float(t) for t in v]
    return r
