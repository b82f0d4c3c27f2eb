"""``harnack-lab <command> <config> [--set k=v ...] [--workers N] [--out DIR]``.

Exit status: 0 if every verdict holds, 1 on a violated verdict, 2 on an
invalid configuration, 3 on a numerical failure during simulation.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import export
from . import harnack as H
from . import rho as rho_mod
from .coupling import CouplingConfig, couple_batch, coupling_diagnostics, law_identification
from .errors import ConfigError, DomainError, NumericalError, PreconditionError, RangeError
from .montecarlo import default_workers, derive_substream
from .paths import (
    StableLaw,
    char_function_modulus,
    exact_char_function,
    fit_scaling,
    inverse_moment,
    levy_path,
    levy_samples,
    regularize_clock,
    sample_subordinator,
)
from .sde import simulate_terminal

SCALING_TOL = 0.05


class Run:
    """Collects output files and verdicts for one command invocation."""

    def __init__(self, out, doc, workers):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.doc = doc
        self.seed = doc["seed"]
        self.workers = workers
        self.files = []
        self.failures = []

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def verdict(self, ok, where):
        if not ok:
            self.failures.append(where)


def _f(doc, d):
    sec = cfgmod.section(doc, "f")
    if not sec:
        return H.TestFunction.shifted_gaussian_bump([0.5] * d)
    return H.TestFunction.from_dict(sec, d)


def cmd_simulate_levy(run):
    doc = run.doc
    m = cfgmod.resolve_model(doc)
    r = cfgmod.run_params(doc, m.d)
    sec = cfgmod.section(doc, "levy")
    t = float(sec.get("t", r["T"]))
    n = int(sec.get("n_samples", 100_000))
    n_paths = int(sec.get("n_paths", 3))
    zs = sec.get("z") or [list(row) for row in np.eye(m.d)] + [[1.0] * m.d]
    if any(len(z) != m.d for z in zs):
        raise ConfigError("levy.z", f"every frequency needs d = {m.d} entries")

    clock_rows, levy_rows = [], []
    for i in range(n_paths):
        ell, L = levy_path(m.spec, r["T"], r["n_steps"], derive_substream(run.seed, i, "levy-path"))
        clock_rows += export.clock_rows(ell, i)
        levy_rows += export.levy_rows(ell.grid, L, i)
    export.write_csv(run.path("clock_paths.csv"), ["path", "t", *export.headers(m.d, "l")], clock_rows)
    export.write_csv(run.path("levy_paths.csv"), ["path", "t", *export.headers(m.d, "L")], levy_rows)

    samples = levy_samples(m.spec, t, n, run.seed, run.workers)
    rows, reports = [], []
    for z in zs:
        mod, se = char_function_modulus(samples, z)
        exact = exact_char_function(m.spec, t, z)
        ok = abs(mod - exact) <= 3 * se if se > 0 else abs(mod - exact) <= 1e-12
        run.verdict(ok, f"char_function z={z}")
        rows.append([*z, mod, se, exact, ok])
        reports.append({"z": z, "t": t, "modulus": mod, "se": se, "exact": exact,
                        "verdict": "holds" if ok else "violated", "n": n, "seed": run.seed})
    export.write_csv(run.path("char_function.csv"), [*export.headers(m.d, "z"), "modulus", "se", "exact", "within_3se"], rows)
    export.write_jsonl(run.path("reports.jsonl"), reports)


def cmd_moments(run):
    doc = run.doc
    m = cfgmod.resolve_model(doc)
    sec = cfgmod.section(doc, "moments")
    ts = [float(t) for t in sec.get("T", [1.0, 2.0])]
    n = int(sec.get("n_samples", 100_000))
    coords = sec.get("coordinates", list(range(m.d)))
    rows, reports = [], []
    for j in coords:
        if not isinstance(j, int) or not 0 <= j < m.d:
            raise ConfigError("moments.coordinates", f"coordinate {j!r} out of range (0-based, d = {m.d})")
        ests = []
        for i, t in enumerate(ts):
            # a separate seed per T: with shared draws the scaling fit would be exact by construction
            e = inverse_moment(m.spec, j, t, n, (run.seed + i) % 2**64, run.workers)
            ok = e.within(3) if e.exact is not None else True
            if e.exact is not None and e.se == 0:
                ok = abs(e.estimate - e.exact) <= 1e-12 * e.exact
            run.verdict(ok, f"inverse moment j={j} T={t}")
            ests.append(e.estimate)
            rows.append([j, t, e.estimate, e.se, e.exact if e.exact is not None else math.nan, ok])
        law = m.spec.laws[j]
        if isinstance(law, StableLaw) and len(ts) >= 2:
            c0, k = fit_scaling(ts, ests)
            target = -2.0 / law.alpha
            ok = abs(k - target) <= SCALING_TOL
            run.verdict(ok, f"scaling exponent j={j}")
            reports.append({"coordinate": j, "law": law.describe(), "C0": c0, "exponent": k,
                            "target_exponent": target, "verdict": "holds" if ok else "violated"})
    export.write_csv(run.path("moments.csv"), ["coordinate", "T", "estimate", "se", "exact", "within_3se"], rows)
    export.write_jsonl(run.path("scaling.jsonl"), reports)


def cmd_couple(run):
    doc = run.doc
    m = cfgmod.resolve_model(doc)
    r = cfgmod.run_params(doc, m.d)
    sec = cfgmod.section(doc, "couple")
    n_paths = int(sec.get("n_paths", 1000))
    keep = int(sec.get("keep_paths", 3))
    cfg = CouplingConfig(r["T"], r["x"], r["y"], r["epsilon"], m.rho)
    batch = couple_batch(m.drift, cfg, m.spec, r["n_steps"], n_paths, run.seed, run.workers,
                         regularize_n=r["regularize_n"], keep=keep)
    diag = coupling_diagnostics(batch)
    success_min = float(sec.get("success_min", 0.99))
    mean_ok = abs(diag["mean_R"] - 1.0) <= 3 * diag["se_R"] if diag["se_R"] > 0 else diag["mean_R"] == 1.0
    diag["verdicts"] = {
        "success": diag["success_rate"] >= success_min,
        "mean_one": mean_ok,
        "bracket": diag["bracket_within_allowance"],
    }
    for k, ok in diag["verdicts"].items():
        run.verdict(ok, f"couple {k}")
    export.write_json(run.path("diagnostics.json"), diag)

    rows = []
    for i, traj in enumerate(batch.trajectories):
        rows += export.trajectory_rows(traj, i)
    header = ["path", "t", *export.headers(m.d, "X", "Y", "met"), "M", "bracket"]
    export.write_csv(run.path("trajectories.csv"), header, rows)

    if sec.get("law_check", True):
        fs = sec.get("functions") or [cfgmod.section(doc, "f") or {"kind": "shifted_gaussian_bump"}]
        direct = simulate_terminal(m.drift, [r["y"]], m.spec, r["T"], r["n_steps"], n_paths, run.seed,
                                   run.workers, tag="couple/direct", regularize_n=r["regularize_n"])[0]
        recs = []
        for i, fsec in enumerate(fs):
            f = H.TestFunction.from_dict(fsec, m.d)
            res = law_identification(batch, f, direct)
            run.verdict(res["agrees"], f"law identification f[{i}]")
            recs.append({"f": f.describe(), **res, "verdict": "holds" if res["agrees"] else "violated"})
        export.write_jsonl(run.path("law_identification.jsonl"), recs)


def _conditional_clock(m, r, seed, index, regularize):
    ell = sample_subordinator(m.spec, r["T"], r["n_steps"], derive_substream(seed, index, "harnack/clock"))
    return regularize_clock(ell, r["regularize_n"]) if regularize else ell


def cmd_verify_harnack(run):
    sec = cfgmod.section(run.doc, "harnack")
    checks = sec.get("checks", ["conditional-log", "conditional-power", "log", "power"])
    unknown = set(checks) - {"conditional-log", "conditional-power", "log", "power"}
    if unknown:
        raise ConfigError("harnack.checks", f"unknown checks {sorted(unknown)}")
    regularize = bool(sec.get("regularize", False))
    reports = []
    for idx, (name, doc) in enumerate(cfgmod.scenarios(run.doc)):
        m = cfgmod.resolve_model(doc)
        r = cfgmod.run_params(doc, m.d)
        f = _f(doc, m.d)
        b, x, y, n, p = m.drift, r["x"], r["y"], r["n_mc"], r["p"]
        ell = _conditional_clock(m, r, run.seed, idx, regularize) if any(c.startswith("cond") for c in checks) else None
        for c in checks:
            if c == "conditional-log":
                rep = H.conditional_log_harnack(b, m.rho, ell, x, y, f, n, run.seed, run.workers)
            elif c == "conditional-power":
                rep = H.conditional_power_harnack(b, m.rho, ell, x, y, f, p, n, run.seed, run.workers)
            elif c == "log":
                rep = H.log_harnack(b, m.rho, m.spec, x, y, r["T"], f, n, run.seed, run.workers, r["n_steps"])
            else:
                rep = H.power_harnack(b, m.rho, m.spec, x, y, r["T"], f, p, n, run.seed, run.workers, r["n_steps"])
            rep.scenario["name"] = name
            run.verdict(rep.holds, f"{name} {c}")
            reports.append(rep)
    _write_reports(run, reports)


def cmd_gradient(run):
    sec = cfgmod.section(run.doc, "gradient")
    reports = []
    for name, doc in cfgmod.scenarios(run.doc):
        m = cfgmod.resolve_model(doc)
        r = cfgmod.run_params(doc, m.d)
        h = sec.get("h")
        rep = H.gradient_estimate_check(m.drift, m.spec, r["x"], r["T"], _f(doc, m.d), r["n_mc"], run.seed,
                                        None if h is None else float(h), run.workers, r["n_steps"])
        rep.scenario["name"] = name
        run.verdict(rep.holds, f"{name} gradient")
        reports.append(rep)
    _write_reports(run, reports)


def _write_reports(run, reports):
    export.write_jsonl(run.path("reports.jsonl"), [rep.to_json() for rep in reports])
    export.write_csv(
        run.path("summary.csv"),
        ["scenario", "check", "lhs", "lhs_se", "rhs", "rhs_se", "slack", "verdict"],
        [[rep.scenario["name"], rep.check, rep.lhs, rep.lhs_se, rep.rhs, rep.rhs_se, rep.slack, rep.verdict]
         for rep in reports],
    )


def cmd_rho_table(run):
    doc = run.doc
    sec = cfgmod.section(doc, "rho_table")
    try:
        rho = rho_mod.parse_rho(str(sec.get("rho", cfgmod.section(doc, "model").get("rho", "linear:1.0"))),
                                doc.get("_base_dir"))
    except (DomainError, ValueError, OSError) as exc:
        raise ConfigError("rho_table.rho", str(exc)) from None
    ts = [float(t) for t in sec.get("T", [0.5, 1.0])]
    rs = [float(v) for v in sec.get("r", [0.5, 1.0, 2.0])]
    method = sec.get("method", "auto")
    rows = []
    for t in ts:
        for r in rs:
            g = rho_mod.g_rho(rho, r, method) if r > 0 else -math.inf
            gam = float(rho_mod.gamma_rho(rho, t, r, method))
            row = [t, r, g, gam]
            if rho.kind == "linear":
                c0 = rho.c0
                closed = (c0 * t * math.exp(c0 * t) + 1.0) * r
                ok = abs(gam - closed) <= 1e-8 * max(abs(closed), 1e-300)
                run.verdict(ok, f"gamma closed form T={t} r={r}")
                row.append(closed)
            rows.append(row)
    header = ["T", "r", "G", "Gamma"] + (["Gamma_closed_form"] if rho.kind == "linear" else [])
    export.write_csv(run.path("rho_table.csv"), header, rows)


COMMANDS = {
    "simulate-levy": cmd_simulate_levy,
    "moments": cmd_moments,
    "couple": cmd_couple,
    "verify-harnack": cmd_verify_harnack,
    "gradient": cmd_gradient,
    "rho-table": cmd_rho_table,
}


def build_parser():
    p = argparse.ArgumentParser(prog="harnack-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="TOML experiment document")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (dotted key, TOML literal)")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default $HARNACK_LAB_WORKERS or 1)")
    p.add_argument("--out", default=None, help="output directory (default results/<command>)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        doc = cfgmod.load_config(args.config, args.overrides)
        run = Run(args.out or Path("results") / args.command, doc, workers)
        COMMANDS[args.command](run)
    except (ConfigError, DomainError, PreconditionError, RangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3

    manifest = {
        "artifact_version": __version__,
        "command": args.command,
        "config_digest": cfgmod.digest(doc),
        "seed": run.seed,
        "outputs": run.files,
        "failures": run.failures,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    export.write_json(run.out / "manifest.json", manifest)
    if run.failures:
        for where in run.failures:
            print(f"violated: {where}", file=sys.stderr)
        print(f"see {run.out / run.files[-1]}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
