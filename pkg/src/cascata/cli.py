"""Command-line front end.

Every command reads one YAML config, runs deterministically from its seed
and writes a CSV (``#``-prefixed echo of version and config) or a JSON
document (``version`` and ``config`` keys).  Exit codes: 0 success,
2 invalid config, 3 node cap exceeded, 4 inconclusive statistical verdict.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DegenerateModel, EmptyPartition, coarse_spectrum, local_dimension, summarize
from .cascade import expand, replicate_seeds, total_mass_paths
from .config import ConfigError, ExperimentConfig, load, to_dict
from .perc import BracketError, critical_beta, survival_curve
from .spine import (ZeroNormalization, bound_check, doob_check, nondegeneracy_verdict, sample_spines,
                    submartingale_trajectory, sufficiency_constants)
from .tree import CapExceeded
from .weights import additivity_error, split_masses, weighted_total_paths

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_INCONCLUSIVE = 0, 2, 3, 4
THREADS_ENV = "CASCATA_THREADS"


class Result:
    """Tabular rows for CSV plus the JSON payload of one command."""

    def __init__(self, rows: list[dict], payload: dict | None = None):
        self.rows = rows
        self.payload = payload if payload is not None else {"rows": rows}


def _f(x):
    """JSON-safe float: infinities and NaN become strings."""
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _f(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_f(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, threads: int) -> Result:
    model, F = cfg.build_model(), cfg.build_weights()
    seeds = replicate_seeds(cfg.seed, cfg.replicates)
    if F.spec() == {"rule": "unit"}:
        logs = total_mass_paths(model, cfg.depth, seeds, threads)
    else:
        logs = weighted_total_paths(model, F, cfg.depth, seeds, threads)
    masses = np.exp(logs)
    rows = [{"replicate": i, "level": n, "total_mass": masses[i, n]}
            for i in range(len(seeds)) for n in range(cfg.depth + 1)]
    levels = []
    for n in range(cfg.depth + 1):
        s = summarize(masses[:, n])
        levels.append({"level": n, "mean": s.mean, "sd": s.sd, "se": s.se})
    return Result(rows, {"levels": levels, "trajectories": masses.tolist()})


def _constants(cfg: ExperimentConfig, model):
    if cfg.sufficiency == "unit":
        return np.ones(cfg.depth + 1)
    return sufficiency_constants(model, cfg.depth)


def cmd_spine(cfg: ExperimentConfig, threads: int) -> Result:
    model, F = cfg.build_model(), cfg.build_weights()
    s = sample_spines(model, F, cfg.depth, replicate_seeds(cfg.seed, cfg.replicates, "spine"))
    c = _constants(cfg, model)
    tr = submartingale_trajectory(s, c)
    bounds = bound_check(s, c)
    doob = None
    if F.spec() == {"rule": "unit"}:
        try:
            doob = doob_check(s, c)
        except ValueError:
            doob = None
    rows = []
    for n in range(cfg.depth + 1):
        row = {"level": n, "mean_total": tr.total[:, n].mean(), "mean_lower": tr.lower[:, n].mean(),
               "mean_upper": tr.upper[:, n].mean(), "mean_M": tr.M[:, n].mean(), "A": tr.A[n],
               "violations": int((~bounds.lower_ok[:, n]).sum() + (~bounds.upper_ok[:, n]).sum())}
        if doob is not None and n < cfg.depth:
            row.update(doob_mean=doob.mean_increment[n], doob_expected=doob.expected[n],
                       doob_se=doob.se[n], doob_z=doob.z[n])
        rows.append(row)
    payload = {"violations": bounds.violations, "replicates": bounds.replicates, "constants": c.tolist(),
               "doob_ok": None if doob is None else doob.ok(), "levels": rows}
    return Result(rows, payload)


def cmd_verdict(cfg: ExperimentConfig, threads: int) -> Result:
    v = nondegeneracy_verdict(cfg.build_model(), cfg.build_weights(), cfg.depth, cfg.replicates, cfg.seed)
    d = v.as_dict()
    rows = [{"verdict": v.verdict, "entropy_index": v.entropy_index, "consistent": v.consistent,
             "diagnostic": g.name, "estimate": g.estimate, "se": g.se, "lean": g.lean,
             "contradicts": g.contradicts} for g in v.diagnostics]
    return Result(rows, d)


def cmd_percolate(cfg: ExperimentConfig, threads: int) -> Result:
    p = cfg.percolation
    F = cfg.build_weights()
    F = None if F.spec() == {"rule": "unit"} else F
    curve = survival_curve(cfg.build_model(), p.betas, cfg.depth, cfg.replicates, cfg.seed, p.eps,
                           p.perc_seed, threads, F)
    rows = curve.rows()
    return Result(rows, {"curve": rows})


def cmd_critical_beta(cfg: ExperimentConfig, threads: int) -> Result:
    p = cfg.percolation
    F = cfg.build_weights()
    F = None if F.spec() == {"rule": "unit"} else F
    cb = critical_beta(cfg.build_model(), cfg.depth, cfg.replicates, cfg.seed, p.tolerance, p.method,
                       p.lo, p.hi, p.eps, p.perc_seed, F)
    d = cb.as_dict()
    return Result([{k: d[k] for k in ("lo", "hi", "estimate", "width", "method", "depth", "replicates", "target")}], d)


def cmd_spectrum(cfg: ExperimentConfig, threads: int) -> Result:
    sp = coarse_spectrum(cfg.build_model(), cfg.spectrum.depths, cfg.spectrum.h, cfg.replicates, cfg.seed, threads)
    rows = sp.rows()
    for row, se in zip(rows, sp.tau_se):
        row["tau_se"] = float(se)
    return Result(rows, {"spectrum": rows, "concave": sp.is_concave(), "depths": sp.depths.tolist(),
                         "surviving": sp.surviving.tolist()})


def cmd_local_dim(cfg: ExperimentConfig, threads: int) -> Result:
    ld = local_dimension(cfg.build_model(), cfg.local_dim.depth, cfg.local_dim.spines, cfg.seed)
    d = ld.as_dict()
    return Result([d], {**d, "quantiles": ld.summary.as_dict()["quantiles"]})


def cmd_decompose(cfg: ExperimentConfig, threads: int) -> Result:
    model, F = cfg.build_model(), cfg.build_weights()
    rows, worst = [], 0.0
    for i, seed in enumerate(replicate_seeds(cfg.seed, cfg.replicates, "decompose")):
        r = expand(model, cfg.depth, int(seed))
        part, rest = split_masses(r, F)
        err = additivity_error(r, F)
        worst = max(worst, err)
        for n in range(cfg.depth + 1):
            rows.append({"replicate": i, "level": n, "total": math.fsum(r.masses(n)),
                         "weighted": math.fsum(part[n]), "complement": math.fsum(rest[n])})
        rows[-1]["max_rel_error"] = err
    return Result(rows, {"weights": F.spec(), "max_rel_error": worst, "rows": rows})


def cmd_selftest(cfg: ExperimentConfig, threads: int) -> Result:
    from .selftest import run_checks

    checks = run_checks(cfg.seed)
    rows = [{"check": c.name, "ok": c.ok, "detail": c.detail} for c in checks]
    return Result(rows, {"ok": all(c.ok for c in checks), "checks": rows})


COMMANDS = {
    "simulate": cmd_simulate,
    "spine": cmd_spine,
    "verdict": cmd_verdict,
    "percolate": cmd_percolate,
    "critical-beta": cmd_critical_beta,
    "spectrum": cmd_spectrum,
    "local-dim": cmd_local_dim,
    "decompose": cmd_decompose,
    "selftest": cmd_selftest,
}


# ---------------------------------------------------------------------------
# emitters


def _echo(cfg: ExperimentConfig) -> dict:
    # the output location never changes an artifact's content
    d = to_dict(cfg)
    d.pop("out", None)
    return d


def render(command: str, cfg: ExperimentConfig, result: Result, fmt: str) -> str:
    echo = _echo(cfg)
    if fmt == "json":
        doc = {"command": command, "version": __version__, "config": echo, "result": _f(result.payload)}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# cascata {__version__} {command}\n")
    buf.write(f"# config: {json.dumps(echo, sort_keys=True, separators=(',', ':'))}\n")
    fields = []
    for row in result.rows:
        for k in row:
            if k not in fields:
                fields.append(k)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    w.writeheader()
    for row in result.rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else _f(v)) for k, v in row.items()})
    return buf.getvalue()


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: expected an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascata", description="Random multiplicative cascades on b-ary trees.")
    ap.add_argument("--version", action="version", version=f"cascata {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (default: stdout)")
        p.add_argument("--threads", type=int, help=f"worker threads; falls back to ${THREADS_ENV}")
        p.add_argument("--format", choices=("csv", "json"), help="overrides the config format")
    return ap


def run(command: str, cfg: ExperimentConfig, threads: int = 1) -> tuple[str, Result]:
    result = COMMANDS[command](cfg, threads)
    return render(command, cfg, result, cfg.format), result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config)
        updates = {k: v for k, v in (("seed", args.seed), ("format", args.format), ("out", args.out))
                   if v is not None}
        if updates:
            from .config import from_dict

            cfg = from_dict({**to_dict(cfg), **updates})
        threads = resolve_threads(args.threads)
        text, result = run(args.command, cfg, threads)
    except CapExceeded as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return EXIT_CAP
    except (BracketError, EmptyPartition) as e:
        print(f"inconclusive: {e}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (ConfigError, DegenerateModel, ZeroNormalization, FileNotFoundError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.{cfg.format}").write_text(text)
    else:
        sys.stdout.write(text)
    if args.command == "selftest" and not result.payload["ok"]:
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
