"""Command-line entry point for the full pipeline.

Subcommands: synth, ingest, sweep, train, backtest, report, index.  Exit codes:
0 success, 1 domain error, 2 usage error.  Domain errors print as
``error[<code>]: <message>``.  Outputs are idempotent for a fixed run
directory: an existing file is only overwritten when its new content is
identical or ``--force`` is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import agents as agents_mod
from . import experiments
from .errors import BenchmarkError, ConfigError
from .market_data import load_ohlcv, write_ohlcv
from .metrics import ValueSeries, aggregate_seeds
from .environment import Trajectory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="olps-bench",
        description="Benchmark online portfolio selection agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate the synthetic market and write CSVs + manifest"),
        ("ingest", "load and validate the configured market data"),
        ("sweep", "run the hyperparameter search"),
        ("train", "train one agent per seed with the best parameters"),
        ("backtest", "run every seed over the backtest period and report"),
        ("report", "recompute the report from logged trajectories"),
        ("index", "write the mean-variance index series"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--jobs", type=int, default=None, help="worker pool size")
        p.add_argument("--out", default=None, help="run directory override")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, repeatable",
        )
        p.add_argument("--costs", type=float, default=None, help="transaction cost rate")
        p.add_argument("--force", action="store_true", help="overwrite differing outputs")
    return parser


def _config_from_args(args) -> experiments.ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.master_seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.costs is not None:
        overrides.append(f"environment.cost_rate={args.costs}")
    return experiments.load_config(args.config, overrides)


_write = experiments.guarded_write


def _out_dir(config, force: bool) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", experiments.config_snapshot(config), force)
    return out


def cmd_synth(config, force: bool) -> int:
    if config.data_source != "synthetic":
        raise ConfigError("synth needs data.source = 'synthetic'")
    out = _out_dir(config, force)
    data = experiments.prepare_market(config)
    data_dir = out / "data"
    if data_dir.exists() and not force:
        existing = sorted(p.name for p in data_dir.glob("*.csv"))
        if existing and existing != [f"{a}.csv" for a in data.assets]:
            raise ConfigError(f"{data_dir} holds different assets; pass --force")
    manifest = write_ohlcv(data, data_dir)
    print(
        f"synth: {len(data.assets)} assets x {len(data.calendar)} days "
        f"-> {manifest.parent}"
    )
    return 0


def cmd_ingest(config, force: bool) -> int:
    out = _out_dir(config, force)
    if config.data_source == "csv":
        data = load_ohlcv(config.data_path)
    else:
        data = experiments.prepare_market(config)
    report = {
        "assets": list(data.assets),
        "calendar_start": data.calendar[0].isoformat(),
        "calendar_end": data.calendar[-1].isoformat(),
        "days": len(data.calendar),
        "rejections": [
            {"asset": r.asset, "reason": r.reason, "level": r.level,
             "date": r.day.isoformat() if r.day else None}
            for r in data.rejections
        ],
    }
    _write(out / "ingest_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n", force)
    print(
        f"ingest: {len(data.assets)} assets, {len(data.calendar)} days, "
        f"{len(data.rejections)} rejection(s)"
    )
    for r in data.rejections:
        print(f"  {r}")
    return 0


def cmd_sweep(config, force: bool) -> int:
    out = _out_dir(config, force)
    ws = experiments.build_workspace(config)
    result = experiments.run_sweep(ws)
    lines = "".join(
        json.dumps(
            {"trial": t.index, "params": t.params, "score": t.score,
             "status": t.status, "error": t.error},
            sort_keys=True,
        ) + "\n"
        for t in result.trials
    )
    _write(out / "sweep.jsonl", lines, force)
    best = result.best
    _write(
        out / "best_params.json",
        json.dumps({"trial": best.index, "params": best.params, "score": best.score},
                   indent=2, sort_keys=True) + "\n",
        force,
    )
    failed = sum(1 for t in result.trials if t.status != "ok")
    print(
        f"sweep: {len(result.trials)} trials ({failed} failed), "
        f"best trial {best.index} score {best.score:.6f}"
    )
    return 0


def _load_best_params(out: Path) -> dict:
    path = out / "best_params.json"
    if path.is_file():
        return json.loads(path.read_text())["params"]
    return {}


def cmd_train(config, force: bool) -> int:
    out = _out_dir(config, force)
    ws = experiments.build_workspace(config)
    params = _load_best_params(out)
    results = experiments.train_multi_seed(ws, params)
    records = []
    for r in results:
        ckpt_path = None
        if r.checkpoint is not None:
            ckpt_path = f"checkpoints/seed_{r.seed}.ckpt"
            _write(out / ckpt_path, r.checkpoint, force)
        records.append(
            {"seed": r.seed, "val_score": r.val_score, "val_ir": r.val_ir,
             "diverged": r.diverged, "episodes_run": r.episodes_run,
             "checkpoint": ckpt_path}
        )
    _write(
        out / "train_results.json",
        json.dumps({"params": params, "seeds": records}, indent=2, sort_keys=True) + "\n",
        force,
    )
    flagged = sum(1 for r in results if r.diverged)
    print(f"train: {len(results)} seeds, {flagged} diverged")
    for r in results:
        print(f"  seed {r.seed}: val_score {r.val_score:.6f}, val_ir {r.val_ir:.6f}")
    return 0


def _load_trained(out: Path, config) -> list[experiments.SeedTrainResult] | None:
    path = out / "train_results.json"
    if not path.is_file():
        if config.agent_kind == "reference_pg":
            raise ConfigError(
                f"no train_results.json under {out}; run the train subcommand first"
            )
        return None
    payload = json.loads(path.read_text())
    trained = []
    for rec in payload["seeds"]:
        blob = None
        if rec["checkpoint"]:
            blob = (out / rec["checkpoint"]).read_bytes()
        trained.append(
            experiments.SeedTrainResult(
                seed=rec["seed"],
                checkpoint=blob,
                val_score=rec["val_score"],
                val_ir=rec["val_ir"],
                diverged=rec["diverged"],
                episodes_run=rec["episodes_run"],
            )
        )
    return trained


def cmd_backtest(config, force: bool) -> int:
    out = _out_dir(config, force)
    ws = experiments.build_workspace(config)
    trained = _load_trained(out, config)
    combo = experiments.run_backtest(ws, trained)
    _write(out / "index.csv", ws.backtest_index.to_csv_text(), force)
    for seed, trajectory in combo.trajectories.items():
        path = out / "trajectories" / f"{combo.name}_seed{seed}.jsonl"
        _write(path, trajectory.to_jsonl_text(), force)
    paths = experiments.emit_report([combo], out, force)
    ror = combo.report.metrics["ror"]
    print(f"backtest: {combo.name} over {combo.report.seed_count} seed(s)")
    print(f"  ror {ror.mean:.6f} ± {ror.std:.6f}; report at {paths['csv']}")
    return 0


def cmd_report(config, force: bool) -> int:
    out = _out_dir(config, force)
    index_path = out / "index.csv"
    traj_dir = out / "trajectories"
    if not index_path.is_file() or not traj_dir.is_dir():
        raise ConfigError(f"no backtest outputs under {out}; run backtest first")
    index_series = ValueSeries.load_csv(index_path)
    val_irs: dict[int, float] = {}
    train_path = out / "train_results.json"
    if train_path.is_file():
        for rec in json.loads(train_path.read_text())["seeds"]:
            val_irs[rec["seed"]] = rec["val_ir"]

    combos: dict[str, dict[int, Trajectory]] = {}
    for path in sorted(traj_dir.glob("*_seed*.jsonl")):
        name, _, seed_part = path.stem.rpartition("_seed")
        combos.setdefault(name, {})[int(seed_part)] = Trajectory.load_jsonl(path)
    if not combos:
        raise ConfigError(f"no trajectories under {traj_dir}")

    results = []
    for name, by_seed in sorted(combos.items()):
        per_seed = [
            experiments.trajectory_metrics(
                by_seed[seed], index_series, val_irs.get(seed, float("nan"))
            )
            for seed in sorted(by_seed)
        ]
        results.append(
            experiments.CombinationResult(
                name=name,
                seeds=tuple(sorted(by_seed)),
                per_seed=per_seed,
                report=aggregate_seeds(per_seed),
                trajectories=by_seed,
            )
        )
    paths = experiments.emit_report(results, out, force)
    print(f"report: {len(results)} combination(s) -> {paths['csv']}")
    return 0


def cmd_index(config, force: bool) -> int:
    out = _out_dir(config, force)
    ws = experiments.build_workspace(config)
    series_text_path = _write(out / "index.csv", ws.backtest_index.to_csv_text(), force)
    print(
        f"index: {len(ws.backtest_index)} days "
        f"{ws.backtest_index.dates[0].isoformat()}..{ws.backtest_index.dates[-1].isoformat()} "
        f"-> {series_text_path}"
    )
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "report": cmd_report,
    "index": cmd_index,
}


def dispatch(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        return _COMMANDS[args.command](config, args.force)
    except ConfigError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except BenchmarkError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
