"""Train the desk configuration and report loss trend, skill and point-error reduction.

    python3 scripts/desk_experiment.py --out runs/desk
"""

import argparse
import json
import os

from scenforecast import desk
from scenforecast.state import save_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    def progress(outer, rec):
        if outer % 50 == 0:
            print(f"iteration {outer}: forecaster loss {rec['loss']:.4f}")

    run = desk.run_desk(args.seed, args.epochs, out_dir=args.out, progress=progress)
    save_checkpoint(run.state, os.path.join(args.out, "model.npz"), run.cfg)

    first, last = desk.loss_deciles(run.log)
    windows = desk.eval_windows(run)
    crps, mae_p, ss = desk.skill_vs_persistence(run.state, windows, seed=args.seed)
    trained = desk.deterministic_rmse(run.state, windows)
    run.state.load_snapshot(run.untrained)
    untrained = desk.deterministic_rmse(run.state, windows)

    report = {"seconds": run.seconds, "loss_first_decile": first, "loss_last_decile": last, "crps": crps,
              "persistence_mae": mae_p, "ss_crps": ss, "rmse_untrained": untrained, "rmse_trained": trained,
              "test_windows": len(windows)}
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    for k, v in report.items():
        print(f"{k:>20}: {v:.4f}" if isinstance(v, float) else f"{k:>20}: {v}")


if __name__ == "__main__":
    main()
