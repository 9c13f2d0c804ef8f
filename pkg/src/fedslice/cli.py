"""Command-line entry point: ``fedslice <subcommand> [config.json] [flags]``.

Every subcommand reads one optional JSON config (see ``schemas/config.schema.json``)
and accepts ``--seed``, ``--out-dir``, ``--mode`` and ``--solver`` overrides.  The
exit status is 0 only if every solver run converged.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, load_instance, save_instance
from .errors import DomainError, InfeasibleCellError, InfeasibleProblemError, NonConvergenceError
from .fedsim import TimingModel
from .model import response_times
from .oracle import SlicingMode
from .scenario import (ScenarioSpec, SweepSpec, export_rates_csv, generate_scenario,
                       load_rates_csv, rates_of, run_naive_demo, run_race, run_sweep,
                       shipped_sweeps, solve)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_ERROR = 0, 1, 2

_SCENARIO_KEYS = ("num_cells", "period", "bandwidth_hz", "fog_power_per_node", "confidence",
                  "min_slice_bandwidth_hz", "rate_scale")


def build_instance(cfg: dict):
    sc = cfg["scenario"]
    if sc.get("instance"):
        return load_instance(sc["instance"])
    rates = load_rates_csv(sc["rates_csv"]) if sc.get("rates_csv") else None
    spec = ScenarioSpec(seed=cfg["seed"], rates=rates, **{k: sc[k] for k in _SCENARIO_KEYS})
    return generate_scenario(spec)


def build_timing(cfg: dict, S: int, seed: int) -> TimingModel:
    tm = cfg["timing"]
    common = dict(uplink=tm["uplink"], downlink=tm["downlink"],
                  deterministic=tm["deterministic"], seed=seed)
    if tm["mean_compute"] is not None:
        if len(tm["mean_compute"]) != S:
            raise ConfigError(f"timing.mean_compute needs {S} entries")
        return TimingModel(tuple(tm["mean_compute"]), **common)
    bad = [s for s in tm["slow"] if s >= S]
    if bad:
        raise ConfigError(f"timing.slow names cells {bad} but the scenario has {S}")
    return TimingModel.with_stragglers(S, slow=tuple(tm["slow"]), factor=tm["factor"],
                                       mean=tm["mean"], **common)


def _admm_kw(cfg: dict) -> dict:
    return {k: v for k, v in cfg["admm"].items() if v is not None}


def _async_kw(cfg: dict) -> dict:
    return {k: v for k, v in cfg["async"].items() if v is not None}


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=_jsonable))
    return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _finite(v):
    return v if v is not None and math.isfinite(v) else None


# subcommands -------------------------------------------------------------------

def cmd_gen_scenario(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    p = save_instance(inst, out / "instance.json")
    export_rates_csv(rates_of(inst), out / "rates.csv")
    print(f"wrote {p} ({inst.num_cells} cells, {inst.num_services} services)")
    return True


def _outcome_doc(inst, out) -> dict:
    return {"mode": out.mode, "solver": out.solver, "objective": out.objective,
            "iterations": out.iterations, "converged": out.converged,
            "b_hz": out.alloc.b, "mu_tasks_per_s": out.alloc.mu,
            "response_time_s": response_times(inst, out.alloc)}


def cmd_solve(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    res = solve(inst, cfg["mode"], cfg["solver"], _admm_kw(cfg), _async_kw(cfg), cfg["seed"])
    if res.trace is not None:
        res.trace.to_csv(out / f"trace_{res.solver}.csv")
    _write_json(out / "solve.json", _outcome_doc(inst, res))
    print(f"{res.mode} via {res.solver}: objective {res.objective:.6g} s, "
          f"{res.iterations} iterations, converged={res.converged}")
    return res.converged


def cmd_compare(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    docs, ok = [], True
    for m in SlicingMode:
        try:
            res = solve(inst, m, cfg["solver"], _admm_kw(cfg), _async_kw(cfg), cfg["seed"])
        except (DomainError, InfeasibleCellError, InfeasibleProblemError,
                NonConvergenceError) as exc:
            print(f"{m.value}: failed: {exc}")
            docs.append({"mode": m.value, "error": str(exc)})
            ok = False
            continue
        if res.trace is not None:
            res.trace.to_csv(out / f"trace_{m.value}_{res.solver}.csv")
        docs.append(_outcome_doc(inst, res))
        ok &= res.converged
        print(f"{m.value:>15}: objective {res.objective:.6g} s ({res.solver}, "
              f"converged={res.converged})")
    _write_json(out / "compare.json", docs)
    return ok


def cmd_sweep(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    if "sweep" in cfg:
        sw = cfg["sweep"]
        modes = [args.mode] if args.mode else sw.get("modes", [m.value for m in SlicingMode])
        sweeps = [SweepSpec(sw["axis"], sw["points"], tuple(modes), cfg["solver"])]
        workers = sw.get("workers", 1)
    else:
        sweeps = shipped_sweeps(cfg["solver"])
        if args.mode:
            sweeps = [SweepSpec(s.axis, s.points, (args.mode,), s.solver) for s in sweeps]
        workers = 1
    ok = True
    for spec in sweeps:
        res = run_sweep(inst, spec, _admm_kw(cfg), _async_kw(cfg), cfg["seed"], workers)
        paths = res.write(out)
        ok &= res.all_converged
        print(f"{spec.axis}: {len(res.rows)} rows, all_converged={res.all_converged}, "
              f"crossover={res.crossover()} -> {paths['table']}")
    return ok


def cmd_race(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    rc, ac = cfg["race"], cfg["async"]
    ref = None
    rows, ok = [], True
    for seed in rc["seeds"]:
        timing = build_timing(cfg, inst.num_cells, seed)
        r = run_race(inst, timing, cfg["admm"]["rho"], ac["alpha"], ac["tau"], rc["rel_tol"],
                     rc["max_iter"], rc["max_updates"], reference=ref)
        ref = r.reference
        r.write(out, f"race_seed{seed}")
        ok &= r.converged
        rows.append({"seed": seed, "sync_time": _finite(r.sync_time),
                     "async_time": _finite(r.async_time),
                     "sync_idle": r.sync.idle_time, "async_idle": r.async_.idle_time})
        print(f"seed {seed}: sync {r.sync_time:.4g}  async {r.async_time:.4g} (simulated s)")
    st = [r["sync_time"] for r in rows]
    at = [r["async_time"] for r in rows]
    summary = {"reference_objective": ref, "rel_tol": rc["rel_tol"], "runs": rows,
               "mean_sync_time": float(np.mean(st)) if ok else None,
               "mean_async_time": float(np.mean(at)) if ok else None}
    _write_json(out / "race_summary.json", summary)
    if ok:
        print(f"mean time to objective: sync {summary['mean_sync_time']:.4g}, "
              f"async {summary['mean_async_time']:.4g}")
    return ok


def cmd_naive(cfg, out: Path, args) -> bool:
    inst = build_instance(cfg)
    nc = cfg["naive"]
    ok, rows = True, []
    for seed in nc["seeds"]:
        timing = build_timing(cfg, inst.num_cells, seed)
        d = run_naive_demo(inst, timing, cfg["admm"]["rho"], nc["perturbation"],
                           cfg["async"]["alpha"], nc["max_updates"], nc["async_max_updates"],
                           seed)
        d.naive.trace.to_csv(out / f"naive_seed{seed}_trace.csv")
        d.async_.trace.to_csv(out / f"async_seed{seed}_trace.csv")
        d.naive.event_log_to_csv(out / f"naive_seed{seed}_events.csv")
        ok &= d.async_.converged
        rows.append({"seed": seed, "naive_residual_grew": d.residual_grew,
                     "naive_divergent": d.naive.extra["divergent"],
                     "async_converged": d.async_.converged, "async_updates": d.async_.updates})
        print(f"seed {seed}: naive residual grew={d.residual_grew}, "
              f"async converged={d.async_.converged} after {d.async_.updates} updates")
    grew = sum(r["naive_residual_grew"] for r in rows)
    _write_json(out / "naive_summary.json", {"runs": rows, "grew": grew, "seeds": len(rows)})
    print(f"naive residual grew in {grew}/{len(rows)} seeds")
    return ok


COMMANDS = {
    "solve": (cmd_solve, "solve one slicing mode"),
    "compare": (cmd_compare, "solve joint and both single-resource baselines"),
    "sweep": (cmd_sweep, "sweep bandwidth, fog power or confidence"),
    "race": (cmd_race, "simulate sync vs async ADMM over timing seeds"),
    "naive-async-demo": (cmd_naive, "naive vs proper asynchronous ADMM on the same events"),
    "gen-scenario": (cmd_gen_scenario, "write a generated instance and its rate table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedslice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="scenario / simulation seed")
        p.add_argument("--out-dir", help="directory for CSV and JSON outputs")
        p.add_argument("--mode", choices=[m.value for m in SlicingMode])
        p.add_argument("--solver", choices=["central", "sync_admm", "async_admm"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out_dir": args.out_dir,
                                        "mode": args.mode, "solver": args.solver})
        out = Path(cfg["out_dir"]) / args.command
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config_used.json", cfg)
        ok = COMMANDS[args.command][0](cfg, out, args)
    except (ConfigError, OSError, ValueError, InfeasibleProblemError, InfeasibleCellError,
            NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
