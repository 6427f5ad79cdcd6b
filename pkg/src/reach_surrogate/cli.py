"""Command-line entry point: ``reach-surrogate <subcommand> [flags]``.

Exit status is 0 on success, 1 for invalid input or usage, 2 when a
computation fails at run time (divergence, unstable rollout, oracle blow-up).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("reach_surrogate")

THREADS_ENV = "REACH_SURROGATE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _channels(text: str) -> tuple[str, ...]:
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else ()


def _add_train_flags(p, epochs_default=60, hidden_default=96):
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lambda-smooth", type=float, default=0.0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--hidden", type=int, default=hidden_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--float32", action="store_true", help="train and run in single precision")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reach-surrogate", description="Per-reach GRU-GeoFNO river surrogate.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{gen-data,train,rollout,evaluate,ablate,bench}",
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthetic reach, forcings and oracle truth")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-xs", type=int, default=40)
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--years", type=int, default=2, help="training years (a held-out year is always added)")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="fit a surrogate and write a checkpoint")
    p.add_argument("--geometry", required=True, type=Path)
    p.add_argument("--dataset", type=Path, help="binary dataset written by gen-data")
    p.add_argument("--forcings", type=Path, action="append", default=[])
    p.add_argument("--truth", type=Path, action="append", default=[])
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", type=Path, help="training report (JSON lines); default <checkpoint>.report.jsonl")
    p.add_argument("--drop-channels", type=_channels, default=())
    _add_train_flags(p)

    p = sub.add_parser("rollout", help="closed-loop forecast from a checkpoint")
    p.add_argument("--geometry", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--forcings", required=True, type=Path)
    p.add_argument("--truth", required=True, type=Path, help="state CSV whose first L hours seed the rollout")
    p.add_argument("--horizon", required=True, type=int)
    p.add_argument("--start", type=int, default=0, help="row offset into forcings and truth")
    p.add_argument("--drop-channels", type=_channels, default=(),
                   help="mask the checkpoint must have been trained with")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("evaluate", help="score a prediction against the truth")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--truth", required=True, type=Path)
    p.add_argument("--warmup", type=int, default=12)
    p.add_argument("--out", required=True, type=Path, help="report JSON; CSV tables are written alongside")

    p = sub.add_parser("ablate", help="feature or data-volume ablation on synthetic reaches")
    p.add_argument("--kind", choices=("features", "data-volume"), default="features")
    p.add_argument("--drop-channels", type=_channels, default=("z_bank", "n_man"))
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--n-xs", type=int, default=40)
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=240)
    p.add_argument("--reach-seed", type=int, default=7)
    p.add_argument("--out", required=True, type=Path)
    _add_train_flags(p)

    p = sub.add_parser("bench", help="oracle vs surrogate wall-clock on synthetic reaches")
    p.add_argument("--n-reaches", type=int, default=5)
    p.add_argument("--n-xs", type=int, default=40)
    p.add_argument("--hours", type=int, default=2000, help="training hours per reach")
    p.add_argument("--horizon", type=int, default=240)
    p.add_argument("--out", required=True, type=Path)
    # timing needs a stable rollout, not a fully converged model
    _add_train_flags(p, epochs_default=10, hidden_default=32)
    return parser


# ---------------------------------------------------------------- helpers

def _read_reach(path):
    from .ingest import parse_geometry

    return parse_geometry(Path(path).read_text())


def _read_forcings(path):
    from .ingest import parse_forcings

    return parse_forcings(Path(path).read_text())


def _read_state(path, reach_id=""):
    from .hydro import parse_state_csv

    return parse_state_csv(Path(path).read_text(), reach_id)


def _estimator(args, **extra):
    from .experiments import make_estimator

    return make_estimator(
        args.seed,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        smoothness_weight=args.lambda_smooth,
        val_fraction=args.val_fraction,
        hidden=args.hidden,
        dtype="float32" if args.float32 else "float64",
        verbose=int(args.verbose),
        **extra,
    )


def _write(path, text):
    from .storage import atomic_write_text

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, text)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from .experiments import standard_corpus
    from .hydro import serialize_state_csv
    from .ingest import serialize_forcings, serialize_geometry
    from .storage import save_dataset

    if args.years < 1:
        raise ValueError("--years must be >= 1")
    corpus = standard_corpus(args.seed, args.n_xs, args.hours, years=args.years)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "geometry.txt", serialize_geometry(corpus.reach))
    for k, (state, forcings) in enumerate(corpus.train):
        _write(out / f"train_{k}_forcings.csv", serialize_forcings(forcings))
        _write(out / f"train_{k}_truth.csv", serialize_state_csv(state))
    state, forcings = corpus.heldout
    _write(out / "heldout_forcings.csv", serialize_forcings(forcings))
    _write(out / "heldout_truth.csv", serialize_state_csv(state))
    save_dataset(out / "dataset.rsd", corpus.reach.id, corpus.train)
    print(f"wrote reach {corpus.reach.id!r} ({corpus.reach.n_xs} sections, {len(corpus.train)} training years) to {out}")


def cmd_train(args):
    from .estimator import build_dataset
    from .storage import checkpoint_from_estimator, load_dataset, save_checkpoint

    reach = _read_reach(args.geometry)
    if args.dataset:
        if args.forcings or args.truth:
            raise ValueError("use either --dataset or --forcings/--truth pairs, not both")
        _, segments = load_dataset(args.dataset)
    else:
        if not args.forcings or len(args.forcings) != len(args.truth):
            raise ValueError("train needs --dataset or matching --forcings/--truth pairs")
        segments = [(_read_state(t, reach.id), _read_forcings(f)) for f, t in zip(args.forcings, args.truth)]
    for state, _ in segments:
        if state.n_xs != reach.n_xs:
            raise ValueError(f"truth has {state.n_xs} sections, geometry has {reach.n_xs}")
    est = _estimator(args, drop_channels=args.drop_channels)
    X, y = build_dataset(reach, segments, est.seq_len)
    est.fit(X, y, x_coord=reach.x_coord)
    save_checkpoint(args.checkpoint, checkpoint_from_estimator(est, reach.id))
    report_path = args.out or args.checkpoint.with_name(args.checkpoint.name + ".report.jsonl")
    _write(report_path, est.report_.to_jsonl())
    print(f"best epoch {est.best_epoch_}; checkpoint {args.checkpoint}; report {report_path}")


def cmd_rollout(args):
    from .hydro import serialize_state_csv
    from .rollout import RolloutConfig, rollout
    from .storage import estimator_from_checkpoint, load_checkpoint

    reach = _read_reach(args.geometry)
    ckpt = load_checkpoint(args.checkpoint, expected_mask=args.drop_channels)
    if ckpt.reach_id and ckpt.reach_id != reach.id:
        raise ValueError(f"checkpoint belongs to reach {ckpt.reach_id!r}, geometry is {reach.id!r}")
    est = estimator_from_checkpoint(ckpt)
    L = est.seq_len
    forcings = _read_forcings(args.forcings).slice(args.start, args.start + L + args.horizon)
    truth = _read_state(args.truth, reach.id).slice(args.start)
    cfg = RolloutConfig(horizon=args.horizon, warmup=L, reach_id=reach.id, ablation_mask=args.drop_channels)
    pred = rollout(est, reach, forcings, truth, args.horizon, cfg)
    pred.t0 = truth.t0
    _write(args.out, serialize_state_csv(pred))
    print(f"wrote {args.horizon} forecast hours after {L} warmup hours to {args.out}")


def cmd_evaluate(args):
    from .metrics import evaluate_reach

    truth = _read_state(args.truth)
    pred = _read_state(args.pred)
    # a longer truth file is cut to the hours the prediction covers
    lo = pred.t0 - truth.t0
    if pred.n_hours != truth.n_hours and 0 <= lo and lo + pred.n_hours <= truth.n_hours:
        truth = truth.slice(lo, lo + pred.n_hours)
    report = evaluate_reach(pred, truth, args.warmup)
    out = args.out
    _write(out, report.to_json() + "\n")
    stem = out.with_suffix("")
    _write(stem.with_name(stem.name + "_per_xs_nse.csv"), report.per_xs_csv())
    _write(stem.with_name(stem.name + "_errors.csv"), report.error_csv())
    h = report.variables["H"]
    print(f"stage RMSE {h['rmse']:.4f} m, NSE {h['nse']:.4f}; median |error| {report.stage_error_ft['median']:.3f} ft")


def cmd_ablate(args):
    from .experiments import ablate_data_volume, ablate_features, extreme_event_corpus, roughness_corpus

    est_params = dict(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, smoothness_weight=args.lambda_smooth,
        hidden=args.hidden, dtype="float32" if args.float32 else "float64",
    )
    records = []
    if args.kind == "features":
        corpus = roughness_corpus(args.reach_seed, args.n_xs, args.hours)
        for s in range(args.seed, args.seed + args.n_seeds):
            full, ablated = ablate_features(corpus, args.drop_channels, s, args.horizon,
                                            val_fraction=args.val_fraction, **est_params)
            records.append({
                "seed": s, "dropped": list(args.drop_channels),
                "ablated_worse": full.aborted is None and ablated.stage_rmse > full.stage_rmse,
                "full": full.to_dict(), "ablated": ablated.to_dict(),
            })
    else:
        corpus = extreme_event_corpus(args.reach_seed, args.n_xs, args.hours)
        for s in range(args.seed, args.seed + args.n_seeds):
            arms = ablate_data_volume(corpus, seed=s, horizon=args.horizon, **est_params)
            records.append({
                "seed": s,
                "arms": [a.to_dict() for a in arms],
            })
    _write(args.out, json.dumps(records, indent=2, allow_nan=False) + "\n")
    print(f"wrote {len(records)} paired runs to {args.out}")


def cmd_bench(args):
    from .estimator import build_dataset
    from .experiments import benchmark, make_estimator
    from .hydro import SyntheticSpec, gen_synthetic_forcings, gen_synthetic_reach, route_reach

    if args.n_reaches < 1:
        raise ValueError("--n-reaches must be >= 1")
    cases = []
    for k in range(args.n_reaches):
        spec = SyntheticSpec(seed=args.seed + k, n_xs=args.n_xs, duration_hours=max(args.hours, 12 + args.horizon),
                             reach_id=f"reach{k:02d}")
        reach = gen_synthetic_reach(spec)
        forcings = gen_synthetic_forcings(spec, reach)
        truth = route_reach(reach, forcings)
        est = make_estimator(args.seed, epochs=args.epochs, hidden=args.hidden, batch_size=args.batch_size,
                             lr=args.lr, val_fraction=args.val_fraction,
                             dtype="float32" if args.float32 else "float64")
        X, y = build_dataset(reach, [(truth.slice(0, args.hours), forcings.slice(0, args.hours))], est.seq_len)
        est.fit(X, y, x_coord=reach.x_coord)
        cases.append((reach, forcings, truth.slice(0, est.seq_len), est))
    table = benchmark(cases, args.horizon)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "benchmark.csv", table.to_csv())
    _write(out / "benchmark.txt", table.to_text())
    sys.stdout.write(table.to_text())
    print(f"speedup (oracle / surrogate): {table.speedup:.2f}x")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    from .hydro import OracleInstability
    from .rollout import RolloutInstability
    from .training import TrainingDivergence

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        limit = _thread_limit()
        with threadpool_limits(limits=limit):
            COMMANDS[args.command](args)
    except (RolloutInstability, TrainingDivergence, OracleInstability) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, IsADirectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ArithmeticError, MemoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
