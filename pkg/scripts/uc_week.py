"""Rolling week of unit commitment: cost-prediction error with many scenarios versus one.

    python3 scripts/uc_week.py --checkpoint runs/desk/model.npz --trials 20
"""

import argparse

from scenforecast import data as D
from scenforecast import desk
from scenforecast.pipeline import build_dataset
from scenforecast.state import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--days", type=int, default=7)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--nf", type=int, default=8)
    ap.add_argument("--nn", type=int, default=2)
    args = ap.parse_args()

    state, cfg = load_checkpoint(args.checkpoint)
    ds = build_dataset(cfg.data, seed=cfg.train.seed)
    days = D.non_overlapping(ds.split.test)[:args.days]
    wins = 0
    for trial in range(args.trials):
        many = desk.uc_deviation(state, days, args.nf, args.nn, seed=trial)
        one = desk.uc_deviation(state, days, 1, 1, seed=trial)
        wins += many < one
        print(f"trial {trial:2d}: {args.nf * args.nn} scenarios {many:9.2f}   1 scenario {one:9.2f}")
    print(f"{args.nf * args.nn} scenarios better in {wins}/{args.trials} trials")


if __name__ == "__main__":
    main()
