"""Train the wind-speed forest on the bundled synthetic series and compare it with persistence per horizon step."""
import argparse

from acmtdc.forecast import backtest, make_dataset, train
from acmtdc.winddata import generate_wind, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-steps", type=int, default=3000)
    ap.add_argument("--trees", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    series = generate_wind(load_config())
    tr, te = series.slice(0, args.train_steps), series.slice(args.train_steps)
    model = train(make_dataset(tr.power_mw, tr.speed_mps, tr.hour_of_day), n_trees=args.trees, seed=args.seed)
    rep = backtest(model, te.power_mw, te.speed_mps, te.hour_of_day)
    print(f"{'step':>4}{'MAE m/s':>10}{'RMSE m/s':>10}")
    for k, (mae, rmse) in enumerate(zip(rep.mae, rep.rmse), 1):
        print(f"{k:>4}{mae:>10.4f}{rmse:>10.4f}")
    print(f"total RMSE {rep.rmse_total:.4f} m/s, persistence {rep.persistence_rmse_total:.4f} m/s")


if __name__ == "__main__":
    main()
