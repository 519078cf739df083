"""Forecast -> OPF -> simulation loop over the Scenario-1 horizon on the bundled synthetic wind."""
import argparse
import time

from acmtdc.forecast import make_dataset, train
from acmtdc.netmodel import load_bundled_case
from acmtdc.simulator import FrameworkConfig, bundled_scenario_path, load_scenario, run_framework
from acmtdc.winddata import generate_wind, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--intervals", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    case = load_bundled_case()
    sc = load_scenario(bundled_scenario_path("s1"), case)
    fw = sc.framework
    seed = fw["seed"] if args.seed is None else args.seed
    series = generate_wind(load_config())
    tr = series.slice(0, fw["train_steps"])
    t0 = time.perf_counter()
    model = train(make_dataset(tr.power_mw, tr.speed_mps, tr.hour_of_day), n_trees=fw["n_trees"], seed=seed,
                  jobs=args.jobs)
    print(f"trained {fw['n_trees']} trees in {time.perf_counter() - t0:.1f} s")
    cfg = FrameworkConfig(intervals=args.intervals or fw["intervals"], event_time_s=fw["event_time_s"],
                          sim=sc.sim, ramp_mw_per_step=fw["ramp_mw_per_step"], converter=fw["converter"])
    t0 = time.perf_counter()
    res = run_framework(case, series, model, fw["origin"], cfg, sc)
    print(f"ran {cfg.intervals} intervals in {time.perf_counter() - t0:.1f} s")
    s = res.summary()
    for name, v in sorted(s["mean_abs_dp_mw"].items(), key=lambda kv: kv[1]):
        print(f"{name:<22} mean |dP| {v:8.3f} MW   max {s['max_abs_dp_mw'][name]:8.3f} MW")
    if s["failed_intervals"]:
        print("failed intervals:", s["failed_intervals"])


if __name__ == "__main__":
    main()
