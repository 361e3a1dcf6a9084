"""Command-line entry point: synth, train, forecast, evaluate, uc, tune.

Exit codes: 0 success, 2 usage or configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import tempfile

import numpy as np

from . import __version__
from . import data as D
from . import metrics as M
from . import scenarios as SC
from . import uc as UC
from .config import DataConfig, ExperimentConfig
from .pipeline import build_dataset, synth_series
from .state import build_state, load_checkpoint, save_checkpoint
from .tensor import NumericError
from .trainer import TrainingAborted, random_search, short_run_objective, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out: str, command: str, args: argparse.Namespace, cfg: ExperimentConfig | None) -> None:
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "config_digest": cfg.digest() if cfg is not None else None,
        "versions": {"scenforecast": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    atomic_write_text(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2, default=str) + "\n")


def load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    else:
        from .config import desk_config
        cfg = desk_config()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "case", None):
        overrides.append(f'data.case="{args.case}"')
    return cfg.override(overrides)


def load_series(args, cfg: ExperimentConfig) -> tuple:
    holidays = ()
    if getattr(args, "sidecar", None):
        meta = D.load_sidecar(args.sidecar)
        holidays = tuple(meta["holidays"])
    if getattr(args, "data", None):
        series = D.ingest_csv(args.data)
        caps = D.load_sidecar(args.sidecar)["capacities"] if getattr(args, "sidecar", None) else {}
        series = [D.normalize(s, caps[s.site_id]) if s.site_id in caps and s.channel_kind == "power" else s
                  for s in series]
        return series, holidays
    return synth_series(cfg.data), holidays


def _mkout(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    out = _mkout(args.out)
    cfg = DataConfig(profile=args.profile, days=args.days, resolution=args.resolution, n_sites=args.sites,
                     seed=args.seed)
    series = synth_series(cfg)
    tmp = os.path.join(out, ".series.csv.tmp")
    D.write_csv(series, tmp)
    os.replace(tmp, os.path.join(out, "series.csv"))
    write_manifest(out, "synth", args, None)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _mkout(args.out)
    series, holidays = load_series(args, cfg)
    ds = build_dataset(cfg.data, series, cfg.train.seed, holidays)
    state = build_state(cfg, ds.n_info)
    say = (lambda i, r: print(f"iter {i + 1}: L_F={r['loss']:.4f}", file=sys.stderr)) if args.verbose else None
    try:
        state, log = train(ds.split, cfg.train, state, out_dir=out, experiment=cfg, progress=say)
    finally:
        atomic_write_text(os.path.join(out, "config.json"), cfg.to_json() + "\n")
    log.to_csv(os.path.join(out, "trainlog.csv"))
    save_checkpoint(state, os.path.join(out, "final.npz"), cfg)
    model = state.snapshot() if state.best is None else state.best
    save_checkpoint(state, os.path.join(out, "model.npz"), cfg, model)
    write_manifest(out, "train", args, cfg)
    return 0


def _forecast_samples(args, cfg):
    series, holidays = load_series(args, cfg)
    ds = build_dataset(cfg.data, series, cfg.train.seed, holidays)
    part = {"test": ds.split.test, "validation": ds.split.validation, "train": ds.split.train}[args.split]
    samples = D.non_overlapping(part)
    if args.windows:
        samples = samples[:args.windows]
    return ds, samples


def cmd_forecast(args) -> int:
    state, cfg = load_checkpoint(args.checkpoint)
    if cfg is None:
        raise UsageError("checkpoint carries no experiment config")
    if args.case and args.case != cfg.data.case:
        raise UsageError(f"checkpoint was trained for case {cfg.data.case}, not {args.case}")
    out = _mkout(args.out)
    ds, samples = _forecast_samples(args, cfg)
    seed = cfg.train.seed if args.seed is None else args.seed
    p = cfg.train.p_dropout if args.pdropout is None else args.pdropout
    sets = SC.sample_many(state, samples, args.nf, args.nn, seed, p)
    SC.write_scenarios_csv(sets, ds.aligned.site_ids, os.path.join(out, "scenarios.csv"))
    SC.write_actuals_csv(samples, ds.aligned.site_ids, os.path.join(out, "actuals.csv"))
    atomic_write_text(os.path.join(out, "summary.json"), SC.summary_json(sets) + "\n")
    write_manifest(out, "forecast", args, cfg)
    return 0


def cmd_evaluate(args) -> int:
    out = _mkout(args.out)
    grid, sites = SC.read_scenarios_csv(args.scenarios)
    y, ref, sites_y = SC.read_actuals_csv(args.actuals)
    if sites != sites_y or grid.shape[2] != y.shape[0]:
        raise D.DataError("scenario and actual files do not cover the same nodes and sites")
    X = grid.reshape((-1,) + grid.shape[2:])
    report = M.evaluate(X, y, ref, args.nodes_per_day)
    atomic_write_text(os.path.join(out, "metrics.json"), report.to_json() + "\n")
    days = M.per_day(X, y, args.nodes_per_day)
    lines = ["day,rmse,crps,energy"] + [f"{d['day']},{d['rmse']!r},{d['crps']!r},{d['energy']!r}" for d in days]
    atomic_write_text(os.path.join(out, "per_day.csv"), "\n".join(lines) + "\n")
    # plot data: empirical CDF of per-day RMSE
    r = np.sort([d["rmse"] for d in days])
    cdf = ["rmse,cumulative_fraction"] + [f"{v!r},{(i + 1) / len(r)!r}" for i, v in enumerate(r)]
    atomic_write_text(os.path.join(out, "rmse_cdf.csv"), "\n".join(cdf) + "\n")
    write_manifest(out, "evaluate", args, None)
    return 0


def cmd_uc(args) -> int:
    out = _mkout(args.out)
    grid, _ = SC.read_scenarios_csv(args.scenarios)
    y, _, _ = SC.read_actuals_csv(args.actuals)
    if args.system:
        with open(args.system) as fh:
            template = UC.UCInstance.from_dict(json.load(fh))
    else:
        template = UC.toy_system(horizon=args.hours)
    T = template.horizon
    members = grid.reshape((-1,) + grid.shape[2:]).sum(axis=-1) * args.capacity     # (members, nodes)
    if args.n_scenarios:
        members = members[:args.n_scenarios]
    obs = y.sum(axis=-1) * args.capacity
    n_days = min(members.shape[1] // T, args.days) if args.days else members.shape[1] // T
    if n_days < 1:
        raise D.DataError(f"scenario file covers fewer than {T} nodes")
    sl = [slice(d * T, (d + 1) * T) for d in range(n_days)]
    report = UC.rolling_evaluation([template] * n_days, [members[:, s] for s in sl], [obs[s] for s in sl],
                                   block=args.block)
    atomic_write_text(os.path.join(out, "uc_report.json"), report.to_json() + "\n")
    write_manifest(out, "uc", args, None)
    return 0


def parse_space(raw: dict) -> dict:
    """``{"key": {"range": [lo, hi]}}`` or ``{"key": {"choices": [...]}}``."""
    space = {}
    for k, v in raw.items():
        if isinstance(v, dict) and "range" in v:
            space[k] = tuple(v["range"])
        elif isinstance(v, dict) and "choices" in v:
            space[k] = list(v["choices"])
        else:
            raise UsageError(f"search space entry {k!r} needs 'range' or 'choices'")
    return space


def cmd_tune(args) -> int:
    cfg = load_config(args)
    out = _mkout(args.out)
    with open(args.space) as fh:
        space = parse_space(json.load(fh))
    series, holidays = load_series(args, cfg)
    ds = build_dataset(cfg.data, series, cfg.train.seed, holidays)
    res = random_search(space, args.budget, cfg.train.seed, cfg, short_run_objective(ds.split, ds.n_info))
    atomic_write_text(os.path.join(out, "best_config.json"), res.best.to_json() + "\n")
    with open(os.path.join(out, "trials.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "assignment", "score"])
        for i, (a, s) in enumerate(res.trials):
            w.writerow([i, json.dumps(a, sort_keys=True), repr(s)])
    write_manifest(out, "tune", args, res.best)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenforecast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic power/forecast/NWP series CSV")
    s.add_argument("--profile", choices=("wind", "pv"), default="wind")
    s.add_argument("--days", type=int, default=120)
    s.add_argument("--resolution", type=int, default=60, help="minutes per node")
    s.add_argument("--sites", type=int, default=2)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def data_flags(q):
        q.add_argument("--config", help="experiment JSON (defaults to the desk configuration)")
        q.add_argument("--data", help="series CSV (synthesised from the config when omitted)")
        q.add_argument("--sidecar", help="JSON with capacities and holidays")
        q.add_argument("--case", choices=sorted(D.CASE_CHANNELS), help="info channel preset")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. train.n_epochs=50")
        q.add_argument("--seed", type=int)
        q.add_argument("--out", required=True)

    t = sub.add_parser("train", help="adversarial training")
    data_flags(t)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("forecast", help="sample scenarios for non-overlapping windows of a split")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data")
    f.add_argument("--sidecar")
    f.add_argument("--case", choices=sorted(D.CASE_CHANNELS))
    f.add_argument("--split", choices=("test", "validation", "train"), default="test")
    f.add_argument("--windows", type=int, help="limit the number of windows")
    f.add_argument("--nf", type=int, default=8, help="dropout patterns")
    f.add_argument("--nn", type=int, default=2, help="latent draws per pattern")
    f.add_argument("--pdropout", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forecast)

    e = sub.add_parser("evaluate", help="score scenarios against actuals")
    e.add_argument("--scenarios", required=True)
    e.add_argument("--actuals", required=True)
    e.add_argument("--nodes-per-day", type=int, default=24)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    u = sub.add_parser("uc", help="rolling two-stage unit commitment on forecast scenarios")
    u.add_argument("--scenarios", required=True)
    u.add_argument("--actuals", required=True)
    u.add_argument("--system", help="UC system JSON (defaults to the three-unit toy system)")
    u.add_argument("--capacity", type=float, default=100.0, help="MW per site for normalised power")
    u.add_argument("--hours", type=int, default=24)
    u.add_argument("--block", type=int, default=4, help="commitment block length in hours")
    u.add_argument("--days", type=int, default=7)
    u.add_argument("--n-scenarios", type=int, help="use only the first K trajectories")
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_uc)

    r = sub.add_parser("tune", help="random hyperparameter search with short runs")
    data_flags(r)
    r.add_argument("--space", required=True, help='JSON file, e.g. {"train.lr": {"range": [1e-4, 1e-3]}, ...}')
    r.add_argument("--budget", type=int, default=5)
    r.set_defaults(func=cmd_tune)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (D.DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingAborted) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, KeyError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
