"""Median epistemic variance of a trained model at several dropout rates.

    python3 scripts/dropout_sweep.py --checkpoint runs/desk/model.npz
"""

import argparse

import numpy as np

from scenforecast import desk
from scenforecast.pipeline import build_dataset
from scenforecast.state import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--p", type=float, nargs="+", default=[0.05, 0.2, 0.4])
    ap.add_argument("--sets", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    state, cfg = load_checkpoint(args.checkpoint)
    ds = build_dataset(cfg.data, seed=cfg.train.seed)
    samples = ds.split.test[:args.sets]
    sweep = desk.dropout_sweep(state, samples, tuple(args.p), seed=args.seed)
    for p, v in sweep.items():
        print(f"p={p:<5} median var_hat {np.median(v):.5f}  (n={len(v)})")


if __name__ == "__main__":
    main()
