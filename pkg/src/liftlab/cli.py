"""``liftlab`` command line: sampling, relaxation scans, ECMC/HMC comparison, verification.

Every run writes its outputs plus ``manifest.json`` into the output directory;
``liftlab replay MANIFEST`` reruns the recorded configuration and checks that
every output digest matches.

Exit codes: 0 success, 2 configuration error, 3 estimation failure,
4 verification failure (including a replay mismatch).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, split_top, config_from_dict, load_config
from .relax import (
    RESULT_COLUMNS,
    EstimationFailure,
    Observable,
    RelaxationEstimate,
    estimate_relaxation,
    failed_estimate,
    power_law_fit,
    raw_path,
    replica_seeds,
    results_rows,
    scaling_fit,
)
from .rng import cell_seed, generator
from .srw import Observer, RefreshKind, TrajectoryRecord, write_event_log, write_trajectory_csv
from .verify import (
    adjoint_battery,
    lift_battery,
    verify_adjoints,
    verify_invariance,
    verify_invariant_covariance,
    verify_lift,
)

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_VERIFY = 0, 2, 3, 4
MANIFEST = "manifest.json"


# --- helpers ------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def digests(out: Path) -> dict[str, str]:
    return {str(p.relative_to(out)): sha256_file(p)
            for p in sorted(out.rglob("*")) if p.is_file() and p.name != MANIFEST and not p.name.startswith(".")}


def resolve_workers(flag: int | None, cfg: ExperimentConfig) -> int:
    if flag is not None:
        return flag
    if cfg.workers is not None:
        return cfg.workers
    env = os.environ.get("LIFTLAB_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"LIFTLAB_WORKERS must be an integer, got {env!r}") from None
        if w < 1:
            raise ConfigError("LIFTLAB_WORKERS must be at least 1")
        return w
    return os.cpu_count() or 1


def parallel_map(fn, tasks: list, workers: int) -> list:
    """Run ``fn(*task)`` for every task; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def _fmt(x) -> str:
    return repr(float(x))


# --- cells --------------------------------------------------------------------

def _relax_cell(cfg_dict: dict, sampler: str, n: int) -> RelaxationEstimate:
    cfg = config_from_dict(cfg_dict)
    sc = cfg.sampler_config(sampler, n)
    obs = Observable.parse(cfg.observable)
    horizon = cfg.horizon_for(sc)
    try:
        return estimate_relaxation(sc, obs, cfg.replicas, horizon, cfg.seed, method=cfg.method,
                                   dt=cfg.observer_dt)
    except EstimationFailure as exc:
        return failed_estimate(sc, obs, cfg.replicas, horizon, cfg.seed, cfg.method, exc)


def _cell_record(cfg: ExperimentConfig, sampler: str, n: int) -> dict:
    sc = cfg.sampler_config(sampler, n)
    return {"key": f"{sc.tag}|n={n}", "sampler": sc.tag, "n": n, "gamma": sc.gamma,
            "horizon": cfg.horizon_for(sc), "seeds": [str(s) for s in replica_seeds(cfg.seed, sc, cfg.replicas)]}


def _check_horizons(cfg: ExperimentConfig):
    if cfg.horizon is None:
        return
    for s in cfg.samplers:
        for n in cfg.n_grid:
            sc = cfg.sampler_config(s, n)
            if cfg.horizon < 10 * sc.anticipated_t_rel():
                raise ConfigError(f"horizon {cfg.horizon:g} is below 10x the anticipated relaxation time "
                                  f"{sc.anticipated_t_rel():.4g} of {sc.tag} at n={n}",
                                  cfg.lines.get("horizon"), cfg.source)


def _estimate_json(e: RelaxationEstimate) -> str:
    d = asdict(e)
    d["fit_window"] = list(e.fit_window)
    return json.dumps(d, indent=2, sort_keys=True, default=str) + "\n"


def _run_relax_cells(cfg: ExperimentConfig, out: Path, workers: int, samplers: list[str]):
    keys = sorted((s, n) for s in samplers for n in cfg.n_grid)
    results = parallel_map(_relax_cell, [(cfg.to_dict(), s, n) for s, n in keys], workers)
    by_key = dict(zip(keys, results))
    for (s, n), e in by_key.items():
        atomic_write(out / "cells" / f"{_safe(e.sampler)}_n{n}.json", _estimate_json(e))
    return by_key


def _safe(tag: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in tag)


# --- commands -----------------------------------------------------------------

def cmd_sample(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[dict]]:
    sampler, n = cfg.samplers[0], cfg.n_grid[0]
    sc = cfg.sampler_config(sampler, n)
    horizon = cfg.horizon_for(sc)
    dt = cfg.observer_dt or horizon / 2048
    obs = Observer.modes(n, (1, n - 1), dt)
    for r, s in enumerate(replica_seeds(cfg.seed, sc, cfg.replicas)):
        p = raw_path(sc, obs.projections, horizon, dt, s, log_events=cfg.log_events, start=cfg.start)
        n_events = int(p.work) if p.x is not None else 0
        rec = TrajectoryRecord(p.t, p.x, p.obs, p.potential, obs.names, n, n_events, None, p.events)
        meta = {"sampler": sc.tag, "gamma": sc.gamma, "horizon": horizon, "replica": r, "seed": str(s),
                "start": cfg.start, "work": p.work}
        write_trajectory_csv(rec, out / f"trajectory_r{r}.csv", meta=meta)
        if p.events is not None and cfg.log_events:
            write_event_log(p.events, out / f"events_r{r}.bin", n)
    return EXIT_OK, [_cell_record(cfg, sampler, n)]


def cmd_relax_scan(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[dict]]:
    _check_horizons(cfg)
    by_key = _run_relax_cells(cfg, out, workers, cfg.samplers)
    code = EXIT_OK
    rows = []
    for s in sorted(cfg.samplers):
        ests = [by_key[(s, n)] for n in sorted(cfg.n_grid)]
        good = [e for e in ests if not e.failed]
        exponent = None
        if len(good) >= 4:
            exponent = scaling_fit(good)
        elif len(good) < len(ests):
            code = EXIT_ESTIMATION
        rows.append((ests, exponent))
    _write_scan(out / "results.csv", rows)
    for ests, exponent in rows:
        for e in ests:
            tag = "FAILED" if e.failed else f"t_rel={e.t_rel:.6g} +- {e.t_rel_stderr:.2g}"
            print(f"{e.sampler:>16s} n={e.n:<5d} rate={e.rate:.6g} +- {e.stderr:.2g}  {tag}")
        if exponent is not None:
            print(f"{ests[0].sampler:>16s} exponent = {exponent[0]:.4f} +- {exponent[1]:.4f}")
    return code, [_cell_record(cfg, s, n) for s, n in sorted(by_key)]


def _write_scan(path: Path, rows):
    body = [r for ests, exponent in rows for r in results_rows(ests, exponent)]
    _write_csv(path, RESULT_COLUMNS, body)


COMPARE_COLUMNS = ("family", "sampler", "n", "gamma", "t_rel", "t_rel_stderr", "work_rate", "unit_cost",
                   "total_work", "status")
SLOPE_COLUMNS = ("family", "sampler", "quantity", "slope", "stderr")


def cmd_compare(cfg: ExperimentConfig, out: Path, workers: int) -> tuple[int, list[dict]]:
    """Work to relaxation: ECMC events cost O(1); a chain gradient costs n."""
    if not any(s.startswith("hmc-verlet") for s in cfg.samplers):
        raise ConfigError("compare counts gradient evaluations and needs hmc-verlet as the HMC sampler",
                          cfg.lines.get("samplers"), cfg.source)
    _check_horizons(cfg)
    by_key = _run_relax_cells(cfg, out, workers, cfg.samplers)
    code = EXIT_OK
    rows, slopes = [], []
    for s in sorted(cfg.samplers):
        family = "hmc" if s.startswith("hmc") else "ecmc"
        ns, tw, tw_err, wr, tr, tr_err = [], [], [], [], [], []
        for n in sorted(cfg.n_grid):
            e = by_key[(s, n)]
            cost = float(n) if family == "hmc" else 1.0
            if e.failed:
                code = EXIT_ESTIMATION
                rows.append([family, e.sampler, n, _fmt(e.gamma), "", "", "", _fmt(cost), "", "failed"])
                continue
            total = e.t_rel * e.work_rate * cost
            rows.append([family, e.sampler, n, _fmt(e.gamma), _fmt(e.t_rel), _fmt(e.t_rel_stderr),
                         _fmt(e.work_rate), _fmt(cost), _fmt(total), "ok"])
            ns.append(n), tw.append(total), tw_err.append(total * e.t_rel_stderr / e.t_rel)
            wr.append(e.work_rate), tr.append(e.t_rel), tr_err.append(e.t_rel_stderr)
        if len(ns) >= 2:
            for q, (y, err) in {"t_rel": (tr, tr_err), "work_rate": (wr, None), "total_work": (tw, tw_err)}.items():
                f = power_law_fit(ns, y, err)
                slopes.append([family, by_key[(s, ns[0])].sampler, q, _fmt(f.exponent), _fmt(f.stderr)])
    _write_csv(out / "compare.csv", COMPARE_COLUMNS, rows)
    _write_csv(out / "compare_slopes.csv", SLOPE_COLUMNS, slopes)
    for r in rows:
        print(" ".join(str(v) for v in r))
    for r in slopes:
        print(f"{r[0]:>5s} {r[2]:>10s} slope {float(r[3]):.4f} +- {float(r[4]):.4f}")
    return code, [_cell_record(cfg, s, n) for s, n in sorted(by_key)]


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write(path, buf.getvalue())


VERIFY_COLUMNS = ("n", "pair", "family", "identity", "check", "method", "estimate", "reference", "stderr",
                  "tolerance", "passed")


def _report_rows(n, pair, identity, rep) -> list[list]:
    rows = [[n, rep.label, pair.family if pair else "", identity, c.name, c.method, _fmt(c.estimate),
             _fmt(c.reference), _fmt(c.stderr), _fmt(c.tolerance), "pass" if c.passed else "FAIL"]
            for c in rep.checks]
    rows += [[n, rep.label, pair.family if pair else "", identity, why, "skipped", "", "", "", "", "skipped"]
             for why in rep.skipped]
    return rows


def _verify_lift_cell(cfg_dict: dict, n: int) -> list[list]:
    cfg = config_from_dict(cfg_dict)
    rng = generator(cell_seed(cfg.seed, "verify-lift", n))
    rows = []
    for pair in lift_battery(n, rng, cfg.battery_size):
        rows += _report_rows(n, pair, "lift", verify_lift(pair, None, cfg.mc_budget, rng))
    for pair in adjoint_battery(n, rng, cfg.battery_size):
        rows += _report_rows(n, pair, "adjoint", verify_adjoints(pair, cfg.mc_budget, rng))
    return rows


def _verify_invariant_cell(cfg_dict: dict, n: int) -> list[list]:
    cfg = config_from_dict(cfg_dict)
    seed = cell_seed(cfg.seed, "verify-invariant", n)
    rng = generator(seed, 0)
    rows = []
    seen = set()
    for pair in adjoint_battery(n, rng, cfg.battery_size):
        for f in (pair.f, pair.g):
            if id(f) in seen:
                continue
            seen.add(id(f))
            rep = verify_invariance(f, cfg.mc_budget, rng, corrupt=cfg.corrupt_rates)
            rep.label = f"{pair.label}:{f.name}"
            rows += _report_rows(n, pair, "invariance", rep)
    sampler = cfg.samplers[0]
    refresh = RefreshKind.none()
    if sampler.startswith("srw-"):
        refresh = cfg.sampler_config(sampler, n).refresh
    horizon = cfg.horizon if cfg.horizon is not None else 1e6
    chk = verify_invariant_covariance(n, horizon, seed, refresh=refresh)
    base = [n, f"srw:{refresh.variant}", "simulation", "covariance"]
    rows.append(base + ["max diagonal relative error", "batch-means", _fmt(chk.diag_rel_err.max()), "0.0", "",
                        "0.05", "pass" if chk.diag_ok else "FAIL"])
    rows.append(base + ["max off-diagonal z", "batch-means", _fmt(chk.offdiag_z.max() if chk.offdiag_z.size else 0),
                        "0.0", "", "3.0", "pass" if chk.offdiag_ok else "FAIL"])
    rows.append(base + ["position chi-square p-value", "chi-square", _fmt(chk.chi2_pvalue), "", "", "0.05",
                        "pass" if chk.uniform_ok else "FAIL"])
    return rows


def _cmd_verify(cfg, out, workers, fn, name) -> tuple[int, list[dict]]:
    ns = sorted(cfg.n_grid)
    results = parallel_map(fn, [(cfg.to_dict(), n) for n in ns], workers)
    rows = [r for rs in results for r in rs]
    _write_csv(out / f"{name}.csv", VERIFY_COLUMNS, rows)
    failed = [r for r in rows if r[-1] == "FAIL"]
    skipped = sum(r[-1] == "skipped" for r in rows)
    for r in failed:
        print(f"FAIL n={r[0]} {r[1]} {r[4]}: estimate {r[6]} reference {r[7]} tolerance {r[9]}")
    print(f"{name}: {len(rows) - len(failed) - skipped} passed, {len(failed)} failed, {skipped} skipped")
    cells = [{"key": f"{name}|n={n}", "n": n, "seeds": [str(cell_seed(cfg.seed, name, n))]} for n in ns]
    return (EXIT_VERIFY if failed else EXIT_OK), cells


def cmd_verify_lift(cfg, out, workers):
    return _cmd_verify(cfg, out, workers, _verify_lift_cell, "verify-lift")


def cmd_verify_invariant(cfg, out, workers):
    return _cmd_verify(cfg, out, workers, _verify_invariant_cell, "verify-invariant")


COMMANDS = {
    "sample": cmd_sample,
    "relax-scan": cmd_relax_scan,
    "compare": cmd_compare,
    "verify-lift": cmd_verify_lift,
    "verify-invariant": cmd_verify_invariant,
}


def run(cfg: ExperimentConfig, out: Path, workers: int, argv: list[str] | None = None) -> int:
    """Execute one configured command and write its manifest."""
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    code, cells = COMMANDS[cfg.command](cfg, out, workers)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "command": cfg.command,
        "argv": argv or [],
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
        "master_seed": str(cfg.seed),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "exit_code": code,
        "cells": cells,
        "outputs": digests(out),
    }
    atomic_write(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def replay(manifest_path: Path, out: Path | None, workers: int | None) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
    cfg = config_from_dict(manifest["config"]).validate()
    out = out or Path(manifest_path).parent / "replay"
    cfg.out = str(out)
    run(cfg, out, resolve_workers(workers, cfg), ["replay", str(manifest_path)])
    new = json.loads((out / MANIFEST).read_text())["outputs"]
    old = manifest["outputs"]
    bad = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    for k in bad:
        print(f"digest mismatch: {k}")
    print(f"replay: {len(old) - len(bad)} of {len(old)} outputs identical")
    return EXIT_VERIFY if bad else EXIT_OK


# --- argument handling --------------------------------------------------------

def _n_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liftlab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"liftlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--sampler", help="sampler tag, comma-separated for compare")
        s.add_argument("--n", type=int, dest="n")
        s.add_argument("--n-grid", type=_n_list, dest="n_grid")
        s.add_argument("--gamma", help="refresh rate or 'preset'")
        s.add_argument("--horizon", type=float)
        s.add_argument("--horizon-factor", type=float, dest="horizon_factor")
        s.add_argument("--replicas", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path)
        s.add_argument("--workers", type=int)
        s.add_argument("--observable")
        s.add_argument("--start", choices=("cold", "stationary"), help="initial condition for sample")
        s.add_argument("--method", choices=("StationaryAutocorr", "EnsembleDecay"))
        s.add_argument("--observer-dt", type=float, dest="observer_dt")
        s.add_argument("--mc-budget", type=int, dest="mc_budget")
        s.add_argument("--log-events", type=int, dest="log_events")
        s.add_argument("--corrupt-rates", action="store_true", default=None, dest="corrupt_rates",
                       help="test hook: flip the right-jump rate sign in the invariance check")
    r = sub.add_parser("replay", help="rerun a manifest and compare output digests")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path)
    r.add_argument("--workers", type=int)
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.command = args.command
    overrides = {
        "samplers": None if args.sampler is None else [s.strip() for s in split_top(args.sampler)],
        "n_grid": args.n_grid if args.n_grid is not None else (None if args.n is None else [args.n]),
        "gamma": args.gamma,
        "horizon": args.horizon,
        "horizon_factor": args.horizon_factor,
        "replicas": args.replicas,
        "seed": args.seed,
        "out": None if args.out is None else str(args.out),
        "observable": args.observable,
        "start": args.start,
        "method": args.method,
        "observer_dt": args.observer_dt,
        "mc_budget": args.mc_budget,
        "log_events": args.log_events,
        "corrupt_rates": args.corrupt_rates,
    }
    for attr, value in overrides.items():
        if value is not None:
            setattr(cfg, attr, value)
            cfg.lines.pop(attr, None)
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out, args.workers)
        cfg = config_from_args(args)
        workers = resolve_workers(args.workers, cfg)
        return run(cfg, Path(cfg.out), workers, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
