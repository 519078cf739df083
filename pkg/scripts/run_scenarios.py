"""Run the disturbance scenarios (load step, cable outage) for every strategy and print the metrics."""
import argparse
from pathlib import Path

from acmtdc.netmodel import load_bundled_case
from acmtdc.opf import OpfProblem, solve_opf
from acmtdc.simulator import bundled_scenario_path, deviation_metrics, load_scenario, run_all, write_traces_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenarios", nargs="*", default=["s2", "s3"])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    case = load_bundled_case()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.scenarios:
        path = Path(name) if Path(name).exists() else bundled_scenario_path(name)
        sc = load_scenario(path, case)
        state = solve_opf(OpfProblem(case, sc.wind_mw)).steps[0]
        traces = run_all(case, sc, state, jobs=args.jobs)
        write_traces_csv(list(traces.values()), out / f"{sc.name}_traces.csv")
        print(f"== {sc.name}")
        print(f"{'strategy':<22}{'f nadir Hz':>12}{'u_dc min':>10}{'u_dc dev':>11}{'f recov s':>10}")
        for s, tr in traces.items():
            m = deviation_metrics(tr, converter="VSC1", area="ac1")
            print(f"{s:<22}{m.frequency_nadir_hz:>12.4f}{m.voltage_nadir_pu:>10.5f}"
                  f"{m.dc_voltage_final_dev_pu:>11.2e}{m.frequency_recovery_s:>10.2f}")


if __name__ == "__main__":
    main()
