"""Command-line front end: ``acmtdc <subcommand> ...``.

Exit codes: 0 success, 2 usage or input error, 3 infeasible OPF, 4 simulation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import errors
from .forecast import (backtest, farm_power, forecast_from, load_model, make_dataset, save_model, train,
                       write_backtest_csv, write_observed_predicted_csv)
from .netmodel import bundled_case_path, load_case
from .opf import (OpfProblem, extract_setpoints, load_solution, save_solution, setpoints_to_dict,
                  solve_opf)
from .simulator import (STRATEGIES, FrameworkConfig, SimConfig, bundled_scenario_path, deviation_metrics,
                        load_scenario, run_all, run_framework, strategy_name, write_traces_csv)
from .winddata import generate_wind, load_config, read_wind_csv, write_wind_csv

log = logging.getLogger("acmtdc")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SIMULATION = 0, 2, 3, 4
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def env_seed() -> int | None:
    raw = os.environ.get("ACMTDC_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ACMTDC_SEED must be an integer, got {raw!r}") from None


def atomic_write(path, write) -> Path:
    """Call ``write(tmp_path)`` then rename onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, data) -> Path:
    return atomic_write(path, lambda p: Path(p).write_text(json.dumps(data, indent=2, default=_json_default)))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {p}")
    return p


def _case(args):
    return load_case(_existing(args.case) if args.case else bundled_case_path())


def _scenario_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenario_path(name_or_path.removesuffix(".json"))
    if bundled.exists():
        return bundled
    raise UsageError(f"file not found: {p} (and no bundled scenario of that name)")


def _parse_wind(text: str | None) -> dict:
    """``OWF1=150,OWF2=120`` -> {"OWF1": 150.0, "OWF2": 120.0}."""
    out = {}
    if not text:
        return out
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise UsageError(f"wind injection {part!r} is not of the form FARM=MW")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"wind injection {part!r}: {val!r} is not a number") from None
    return out


def _strategies(arg: str) -> list[str]:
    if arg == "all":
        return list(STRATEGIES)
    try:
        return [strategy_name(s) for s in arg.split(",")]
    except ValueError:
        raise UsageError(f"unknown strategy {arg!r}; valid: all, {', '.join(STRATEGIES)}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_wind(args) -> int:
    cfg = load_config(_existing(args.config) if args.config else None)
    if args.steps is not None:
        cfg = replace(cfg, n_steps=args.steps)
    series = generate_wind(cfg, seed=args.seed)
    atomic_write(args.out, lambda p: write_wind_csv(series, p))
    print(f"wrote {len(series)} samples to {args.out}")
    return EXIT_OK


def _split(series, fraction: float) -> int:
    n_train = int(round(len(series) * fraction))
    if not 0 < n_train < len(series):
        raise UsageError(f"train fraction {fraction} leaves no training or test data")
    return n_train


def cmd_forecast(args) -> int:
    series = read_wind_csv(_existing(args.wind))
    n_train = _split(series, args.train_fraction)
    tr, te = series.slice(0, n_train), series.slice(n_train)
    data = make_dataset(tr.power_mw, tr.speed_mps, tr.hour_of_day)
    model = train(data, n_trees=args.trees, seed=DEFAULT_SEED if args.seed is None else args.seed,
                  jobs=args.jobs)
    atomic_write(args.out, lambda p: save_model(model, p))
    report = backtest(model, te.power_mw, te.speed_mps, te.hour_of_day)
    out = Path(args.out)
    bt = Path(args.backtest) if args.backtest else out.with_name(out.stem + "_backtest.csv")
    op = Path(args.observed) if args.observed else out.with_name(out.stem + "_observed_predicted.csv")
    atomic_write(bt, lambda p: write_backtest_csv(report, p))
    atomic_write(op, lambda p: write_observed_predicted_csv(report, p, te.timestamps))
    s = report.summary()
    print(f"trained {args.trees} trees on {len(data)} windows; "
          f"RMSE {s['rmse']:.4f} m/s vs persistence {s['persistence_rmse']:.4f} m/s")
    print(f"model: {out}\nbacktest: {bt}\nobserved/predicted: {op}")
    return EXIT_OK


def _opf_wind(args, case):
    """Per-step wind injections from a literal, or from a model + wind file."""
    if args.model:
        if not args.wind_csv:
            raise UsageError("--model needs --wind-csv for the history window")
        model = load_model(_existing(args.model))
        series = read_wind_csv(_existing(args.wind_csv))
        origin = args.origin if args.origin is not None else len(series) - model.window.horizon
        speeds = forecast_from(model, series.power_mw, series.speed_mps, series.hour_of_day, origin)
        if args.horizon > speeds.size:
            raise UsageError(f"horizon {args.horizon} exceeds the model's {speeds.size}-step forecast")
        return [{f.id: float(farm_power(f, v)) for f in case.wind_farms} for v in speeds[:args.horizon]]
    return _parse_wind(args.wind_mw)


def cmd_opf(args) -> int:
    case = _case(args)
    wind = _opf_wind(args, case)
    problem = OpfProblem(case, wind, args.horizon, args.ramp)
    sol = solve_opf(problem)
    out = Path(args.out)
    atomic_write(out, lambda p: save_solution(sol, p))
    sp_path = Path(args.setpoints) if args.setpoints else out.with_name(out.stem + "_setpoints.json")
    if sol.status == "Optimal":
        write_json(sp_path, [setpoints_to_dict(extract_setpoints(sol, t, case)) for t in range(len(sol.steps))])
    kkt = max(sol.kkt_residual.values()) if sol.kkt_residual else math.nan
    print(f"status {sol.status}: cost {sol.objective_cost:.4f} $/h over {len(sol.steps)} step(s), "
          f"{sol.iterations} iterations, KKT {kkt:.2e}")
    print(f"solution: {out}")
    return EXIT_OK


def _metrics_table(metrics: dict) -> str:
    cols = [("mean|dP| MW", "mean_abs_dp_mw"), ("max|dP| MW", "max_abs_dp_mw"),
            ("f nadir Hz", "frequency_nadir_hz"), ("u_dc min pu", "voltage_nadir_pu"),
            ("u_dc final dev", "dc_voltage_final_dev_pu"), ("f recov s", "frequency_recovery_s"),
            ("u recov s", "voltage_recovery_s")]
    lines = [f"{'strategy':<22}" + "".join(f"{c:>16}" for c, _ in cols)]
    for name, m in metrics.items():
        lines.append(f"{name:<22}" + "".join(f"{m[k]:>16.6g}" for _, k in cols))
    ranked = sorted(metrics, key=lambda n: -metrics[n]["frequency_nadir_hz"])
    lines.append("frequency nadir ranking (best first): " + " > ".join(ranked))
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    case = _case(args)
    scenario = load_scenario(_scenario_path(args.scenario), case)
    names = _strategies(args.strategy) if args.strategy else scenario.strategies
    if args.horizon is not None or args.dt is not None:
        scenario = replace(scenario, sim=SimConfig(args.dt or scenario.sim.dt_s,
                                                   args.horizon or scenario.sim.horizon_s,
                                                   scenario.sim.converter_tau_s, scenario.sim.seeds))
    state = None
    if args.opf:
        state = load_solution(_existing(args.opf)).steps[args.step]
    out_dir = Path(args.out_dir)
    conv = args.converter
    area = case.bus(case.converter(conv).ac_bus).area
    try:
        if state is None:
            state = solve_opf(OpfProblem(case, scenario.wind_mw)).steps[0]
        traces = run_all(case, scenario, state, jobs=args.jobs, strategies=names)
    except errors.CascadingInfeasibility as exc:
        dump = out_dir / f"{scenario.name}_truncated.csv"
        partial = exc.trace
        atomic_write(dump, lambda p: write_traces_csv([partial], p))
        print(f"simulation failed: {exc}\ntruncated trace: {dump}", file=sys.stderr)
        return EXIT_SIMULATION
    metrics = {n: deviation_metrics(tr, converter=conv, area=area).to_dict() for n, tr in traces.items()}
    trace_path = out_dir / f"{scenario.name}_traces.csv"
    atomic_write(trace_path, lambda p: write_traces_csv(list(traces.values()), p))
    write_json(out_dir / f"{scenario.name}_metrics.json", {"scenario": scenario.name, "converter": conv,
                                                            "area": area, "metrics": metrics})
    print(f"traces: {trace_path}")
    if args.compare:
        print(_metrics_table(metrics))
    return EXIT_OK


def cmd_run_framework(args) -> int:
    case = _case(args)
    scenario = load_scenario(_scenario_path(args.scenario), case)
    fw = dict(scenario.framework)
    if args.wind:
        series = read_wind_csv(_existing(args.wind))
    else:
        series = generate_wind(load_config(), seed=args.seed)
    n_train = fw.get("train_steps", int(0.75 * len(series)))
    if args.model:
        model = load_model(_existing(args.model))
    else:
        tr = series.slice(0, n_train)
        model = train(make_dataset(tr.power_mw, tr.speed_mps, tr.hour_of_day),
                      n_trees=fw.get("n_trees", 15),
                      seed=args.seed if args.seed is not None else fw.get("seed", DEFAULT_SEED),
                      jobs=args.jobs)
    origin = args.origin if args.origin is not None else fw.get("origin", n_train + model.window.history)
    cfg = FrameworkConfig(intervals=args.intervals or fw.get("intervals", 24),
                          event_time_s=fw.get("event_time_s", 0.5), sim=scenario.sim,
                          ramp_mw_per_step=fw.get("ramp_mw_per_step"),
                          converter=fw.get("converter", "VSC1"))
    names = _strategies(args.strategy) if args.strategy else scenario.strategies
    result = run_framework(case, series, model, origin, cfg, scenario, names)
    out_dir = Path(args.out_dir)
    summary = result.summary()
    rows = []
    for iv in result.intervals:
        row = {"step": iv.step, "error": iv.error, "forecast_wind_mw": iv.forecast_wind_mw,
               "actual_wind_mw": iv.actual_wind_mw}
        row["abs_dp_mw"] = {n: m.final_abs_dp_mw for n, m in iv.metrics.items()}
        rows.append(row)
    write_json(out_dir / f"{scenario.name}_framework.json", {"summary": summary, "intervals": rows})

    def write_csv(p):
        with open(p, "w") as fh:
            fh.write("step," + ",".join(names) + "\n")
            for iv in result.intervals:
                vals = [repr(iv.metrics[n].final_abs_dp_mw) if n in iv.metrics else "" for n in names]
                fh.write(f"{iv.step}," + ",".join(vals) + "\n")

    atomic_write(out_dir / f"{scenario.name}_deviation.csv", write_csv)
    print(f"{'strategy':<22}{'mean|dP| MW':>14}{'max|dP| MW':>14}")
    for n in names:
        print(f"{n:<22}{summary['mean_abs_dp_mw'][n]:>14.4f}{summary['max_abs_dp_mw'][n]:>14.4f}")
    if summary["failed_intervals"]:
        print(f"failed intervals: {summary['failed_intervals']}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = sorted(Path(args.results).glob("*_metrics.json")) if Path(args.results).is_dir() \
        else [_existing(args.results)]
    if not paths:
        raise UsageError(f"no *_metrics.json files in {args.results}")
    for p in paths:
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise errors.ParseError(f"{p}: {exc}") from None
        print(f"== {doc.get('scenario', p.stem)} ({doc.get('converter', '?')}, area {doc.get('area', '?')})")
        print(_metrics_table(doc["metrics"]))
    for p in sorted(Path(args.results).glob("*_framework.json")) if Path(args.results).is_dir() else []:
        s = json.loads(p.read_text())["summary"]
        print(f"== {p.stem}: mean |dP| over {s['intervals']} intervals")
        for n, v in sorted(s["mean_abs_dp_mw"].items(), key=lambda kv: kv[1]):
            print(f"  {n:<22}{v:>12.4f} MW")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acmtdc", description="Forecast-driven OPF and droop-control "
                                "simulation for hybrid AC/multi-terminal HVDC grids.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $ACMTDC_SEED, else the configured seed)")

    g = sub.add_parser("gen-wind", help="write a synthetic wind CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="synthetic wind settings JSON (default: bundled)")
    g.add_argument("--steps", type=int)
    seeded(g)
    g.set_defaults(func=cmd_gen_wind)

    f = sub.add_parser("forecast", help="train the forest and backtest it")
    f.add_argument("--wind", required=True, help="wind CSV")
    f.add_argument("--out", required=True, help="model JSON")
    f.add_argument("--trees", type=int, default=15)
    f.add_argument("--train-fraction", type=float, default=0.75)
    f.add_argument("--backtest", help="per-step error CSV (default: next to the model)")
    f.add_argument("--observed", help="observed/predicted CSV (default: next to the model)")
    f.add_argument("--jobs", type=int, default=1)
    seeded(f)
    f.set_defaults(func=cmd_forecast)

    o = sub.add_parser("opf", help="solve the AC/DC OPF")
    o.add_argument("--case")
    o.add_argument("--wind-mw", help="literal injections, e.g. OWF1=150,OWF2=120")
    o.add_argument("--model", help="forest model JSON; forecast the wind instead")
    o.add_argument("--wind-csv", help="wind history for --model")
    o.add_argument("--origin", type=int, help="first forecast index in --wind-csv")
    o.add_argument("--horizon", type=int, default=1)
    o.add_argument("--ramp", type=float, nargs="?", const=100.0, default=None,
                   help="ramp limit in MW per step; couples the horizon (bare flag: 100)")
    o.add_argument("--out", required=True, help="solution .json or .csv")
    o.add_argument("--setpoints", help="setpoint bundle JSON (default: next to the solution)")
    o.set_defaults(func=cmd_opf)

    s = sub.add_parser("simulate", help="simulate control strategies on a scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON or bundled name (s2, s3)")
    s.add_argument("--strategy", help="all, a name, or a comma list (default: from the scenario)")
    s.add_argument("--case")
    s.add_argument("--opf", help="OPF solution JSON giving the operating point")
    s.add_argument("--step", type=int, default=0)
    s.add_argument("--converter", default="VSC1", help="converter the metrics refer to")
    s.add_argument("--horizon", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--out-dir", default="results")
    s.add_argument("--compare", action="store_true", help="print a metrics table across strategies")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run-framework", help="forecast -> OPF -> simulation over a horizon")
    r.add_argument("--scenario", default="s1")
    r.add_argument("--case")
    r.add_argument("--wind", help="wind CSV (default: bundled synthetic series)")
    r.add_argument("--model", help="trained model JSON (default: train on the series)")
    r.add_argument("--origin", type=int)
    r.add_argument("--intervals", type=int)
    r.add_argument("--strategy")
    r.add_argument("--out-dir", default="results")
    r.add_argument("--jobs", type=int, default=1)
    seeded(r)
    r.set_defaults(func=cmd_run_framework)

    rp = sub.add_parser("report", help="summarise metrics files")
    rp.add_argument("results", help="results directory or a metrics JSON")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = env_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except errors.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        for label, amount in (exc.violations or [])[:10]:
            print(f"  {label}: {amount:.4g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (errors.CascadingInfeasibility, errors.NonConvergence, errors.SingularJacobian) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (errors.AcMtdcError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
