"""Pipeline driver: generate -> preprocess -> train -> evaluate -> export-plots.

Everything lives under one output root::

    out/data/                          seq_000.txt ... + manifest.json
    out/series/B30/                    seq_000.txt ... + split_80-15-5.json
    out/models/B30/split_80-15-5/      lstm.ggw, loss_lstm.csv
    out/reports/B30/split_80-15-5/lstm/seq_017.txt, seq_017.forecast.txt
    out/reports/summary.csv            (+ table_bins.csv / table_splits.csv for sweeps)
    out/plots/...                      CSV bundles for external plotting

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np
import yaml

from .forecast import ForecastError, forecast_full_protocol, horizon_steps, read_forecast, write_forecast
from .metrics import EvalReport, MetricError, evaluate
from .models import ARCHS, ModelConfig, NumericalError, load_bundle, train
from .preprocess import (
    BinningSpec,
    PreprocessError,
    SplitSpec,
    read_series,
    read_split_manifest,
    series_from_record,
    split_dataset,
    windows_to_arrays,
    write_series,
    write_split_manifest,
)
from .simgen import SimulationError, default_grid, generate_dataset, load_dataset, write_dataset

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

SNAPSHOT_TIMES = {60: (6, 20, 30, 40, 50, 60), 180: (6, 40, 75, 110, 145, 180)}


class DataError(RuntimeError):
    pass


# -- configuration ------------------------------------------------------------

@dataclass
class GeneratorSettings:
    sides: list = field(default_factory=lambda: [2, 3, 4, 5])
    sigmas: list = field(default_factory=lambda: list(range(2, 32)))
    duration: float = 3600.0
    mean_radius: float = 20.0
    reduced_mobility: float = 1e-6
    dt: float = 0.05


@dataclass
class TrainingSettings:
    epochs: int = 300
    lr: float = 1e-4
    blocks: int = 3
    batch_size: dict = field(default_factory=dict)  # per-arch override, e.g. {lstm: 32}


@dataclass
class ExperimentConfig:
    """Defaults reproduce the headline protocol: B=30, 80:15:5, all four models, 1 h horizon."""

    master_seed: int = 0
    out: str = "runs/default"
    workers: int = 0  # 0 -> number of cores
    limit: int | None = None
    generator: GeneratorSettings = field(default_factory=GeneratorSettings)
    bins: list = field(default_factory=lambda: [30])
    splits: list = field(default_factory=lambda: [[80, 15, 5]])
    models: list = field(default_factory=lambda: list(ARCHS))
    training: TrainingSettings = field(default_factory=TrainingSettings)
    train_frames: int = 61
    horizon: int = 60
    epsilon_policy: str = "exclude"

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorSettings(**self.generator)
        if isinstance(self.training, dict):
            self.training = TrainingSettings(**self.training)
        if isinstance(self.bins, int):
            self.bins = [self.bins]
        if self.splits and isinstance(self.splits[0], int):
            self.splits = [self.splits]
        self.splits = [list(s) for s in self.splits]
        unknown = set(self.models) - set(ARCHS)
        if unknown:
            raise click.BadParameter(f"unknown models {sorted(unknown)}; choose from {list(ARCHS)}")
        if self.horizon not in SNAPSHOT_TIMES:
            raise click.BadParameter(f"horizon must be 60 or 180 minutes, got {self.horizon}")
        try:
            for b in self.bins:
                BinningSpec(b)
            for s in self.splits:
                SplitSpec(tuple(s))
        except PreprocessError as exc:
            raise click.BadParameter(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        doc = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise click.BadParameter(f"unknown config keys {sorted(extra)}", param_hint="--config")
        return cls(**doc)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @property
    def root(self) -> Path:
        return Path(self.out)

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def split_specs(self) -> list[SplitSpec]:
        return [SplitSpec(tuple(s), self.master_seed) for s in self.splits]

    def model_config(self, arch: str, bins: int) -> ModelConfig:
        overrides = dict(bins=bins, epochs=self.training.epochs, lr=self.training.lr, blocks=self.training.blocks)
        if arch in self.training.batch_size:
            overrides["batch_size"] = int(self.training.batch_size[arch])
        return ModelConfig.for_arch(arch, **overrides)


def _data_dir(cfg):
    return cfg.root / "data"


def _series_dir(cfg, bins):
    return cfg.root / "series" / f"B{bins}"


def _model_dir(cfg, bins, split):
    return cfg.root / "models" / f"B{bins}" / f"split_{split.tag}"


def _report_dir(cfg, bins, split, arch):
    return cfg.root / "reports" / f"B{bins}" / f"split_{split.tag}" / arch


def _load_split(cfg, bins, split):
    sdir = _series_dir(cfg, bins)
    manifest = sdir / f"split_{split.tag}.json"
    if not manifest.exists():
        raise DataError(f"split manifest not found: {manifest} (run `preprocess` first)")
    doc = read_split_manifest(manifest)
    return {part: [read_series(sdir / f"{sid}.txt") for sid in doc[part]] for part in ("train", "val", "test")}


# -- commands -----------------------------------------------------------------

def common_options(f):
    f = click.option("--workers", type=int, default=None, help="Worker processes (default: cores).")(f)
    f = click.option("--epochs", type=click.IntRange(min=1), default=None, help="Override training epochs.")(f)
    f = click.option("--limit", type=click.IntRange(min=1), default=None, help="Use only the first N sequences.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output root directory.")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)(f)
    return f


def resolve_config(config_path, seed, out, limit, epochs, workers) -> ExperimentConfig:
    cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
    if seed is not None:
        cfg.master_seed = seed
    if out is not None:
        cfg.out = out
    if limit is not None:
        cfg.limit = limit
    if epochs is not None:
        cfg.training.epochs = epochs
    if workers is not None:
        cfg.workers = workers
    return cfg


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Grain-size distribution forecasting toolkit."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@common_options
def generate(**opts):
    """Simulate the grain-growth sequences."""
    cfg = resolve_config(**opts)
    g = cfg.generator
    grid = default_grid(
        cfg.master_seed,
        duration=g.duration,
        sides=g.sides,
        sigmas=g.sigmas,
        mean_radius=g.mean_radius,
        reduced_mobility=g.reduced_mobility,
        dt=g.dt,
    )
    if cfg.limit:
        grid = grid[: cfg.limit]
    records = generate_dataset(grid, workers=cfg.n_workers)
    path = write_dataset(records, _data_dir(cfg), cfg.master_seed)
    click.echo(f"wrote {len(records)} sequences to {path.parent}")


@cli.command()
@common_options
def preprocess(**opts):
    """Bin every snapshot and write the split manifests."""
    cfg = resolve_config(**opts)
    records = load_dataset(_data_dir(cfg))
    if cfg.limit:
        records = dict(list(records.items())[: cfg.limit])
    for bins in cfg.bins:
        spec = BinningSpec(bins)
        sdir = _series_dir(cfg, bins)
        sdir.mkdir(parents=True, exist_ok=True)
        series = [series_from_record(rec, spec, sid) for sid, rec in records.items()]
        for s in series:
            write_series(s, sdir / f"{s.source_id}.txt")
        for split in cfg.split_specs():
            parts = split_dataset(series, split)
            write_split_manifest(sdir / f"split_{split.tag}.json", split, *parts)
            click.echo(f"B={bins} split {split.tag}: {'/'.join(str(len(p)) for p in parts)} sequences")


@cli.command("train")
@common_options
@click.option("--model", "models", multiple=True, type=click.Choice(ARCHS), help="Restrict to these models.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None, help="Continue from a weight file.")
def train_cmd(models, resume, **opts):
    """Train each configured model on each binning and split."""
    cfg = resolve_config(**opts)
    models = list(models) or cfg.models
    prior = None
    if resume:
        if len(models) != 1:
            raise click.UsageError("--resume needs exactly one model (use --model)")
        try:
            prior = load_bundle(resume, expect_arch=models[0])
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--resume") from None
    for bins in cfg.bins:
        for split in cfg.split_specs():
            parts = _load_split(cfg, bins, split)
            X_tr, y_tr = windows_to_arrays(parts["train"], max_frames=cfg.train_frames)
            X_va, y_va = windows_to_arrays(parts["val"], max_frames=cfg.train_frames)
            mdir = _model_dir(cfg, bins, split)
            mdir.mkdir(parents=True, exist_ok=True)
            for arch in models:
                mcfg = cfg.model_config(arch, bins)
                network = None
                if prior is not None:
                    if prior.config.bins != bins:
                        raise click.BadParameter(f"weights are for B={prior.config.bins}, not B={bins}", param_hint="--resume")
                    network = prior.network
                t0 = time.perf_counter()
                bundle, history = train(mcfg, X_tr, y_tr, X_va, y_va, seed=cfg.master_seed, network=network)
                bundle.save(mdir / f"{arch}.ggw")
                (mdir / f"loss_{arch}.csv").write_text(history.to_csv())
                click.echo(
                    f"B={bins} split {split.tag} {arch}: val loss {history.val_loss[0]:.3e} -> "
                    f"{history.val_loss[-1]:.3e} ({time.perf_counter() - t0:.0f}s)"
                )


def _evaluate_one(task):
    weights, series_path, steps, policy, report_path, forecast_path = task
    bundle = load_bundle(weights)
    series = read_series(series_path)
    if len(series) < 5 + steps:
        raise DataError(
            f"{series_path} has {len(series)} frames; a {steps}-step forecast needs {5 + steps} "
            "(regenerate with a longer generator duration)"
        )
    run, truth = forecast_full_protocol(bundle, series, steps, model_ref=str(weights))
    times = series.times[5 : 5 + steps]
    report = evaluate(
        run.predictions, truth, times, policy,
        model=bundle.arch, bins=series.binning.bin_count, horizon=steps, sequence=series.source_id,
    )
    report.write(report_path)
    write_forecast(run, forecast_path, series.binning, start_minute=series.times[0])
    return report


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _fmt(x):
    return f"{x:.6g}"


@cli.command("evaluate")
@common_options
@click.option("--model", "models", multiple=True, type=click.Choice(ARCHS))
@click.option("--horizon", type=click.Choice(["60", "180"]), default=None, help="Forecast horizon in minutes.")
def evaluate_cmd(models, horizon, **opts):
    """Forecast every test sequence and aggregate the error metrics."""
    cfg = resolve_config(**opts)
    if horizon:
        cfg.horizon = int(horizon)
    models = list(models) or cfg.models
    steps = horizon_steps(cfg.horizon)
    summary = {}
    for bins in cfg.bins:
        for split in cfg.split_specs():
            parts = _load_split(cfg, bins, split)
            sdir = _series_dir(cfg, bins)
            for arch in models:
                weights = _model_dir(cfg, bins, split) / f"{arch}.ggw"
                if not weights.exists():
                    raise DataError(f"missing weights {weights} (run `train --model {arch}` first)")
                rdir = _report_dir(cfg, bins, split, arch)
                rdir.mkdir(parents=True, exist_ok=True)
                tasks = [
                    (weights, sdir / f"{s.source_id}.txt", steps, cfg.epsilon_policy,
                     rdir / f"{s.source_id}.txt", rdir / f"{s.source_id}.forecast.txt")
                    for s in parts["test"]
                ]
                if cfg.n_workers > 1 and len(tasks) > 1:
                    with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool:
                        reports = list(pool.map(_evaluate_one, tasks))
                else:
                    reports = [_evaluate_one(t) for t in tasks]
                summary[(bins, split.tag, arch)] = (
                    float(np.mean([r.rmse for r in reports])),
                    float(np.mean([r.mae for r in reports])),
                    float(np.mean([r.mre_percent for r in reports])),
                    len(reports),
                )
                rmse_, mae_, mre_, n = summary[(bins, split.tag, arch)]
                click.echo(f"B={bins} split {split.tag} {arch}: MRE {mre_:.2f}%  RMSE {rmse_:.4g}  ({n} sequences)")
    rdir = cfg.root / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        rdir / "summary.csv",
        ["bins", "split", "model", "horizon_min", "rmse", "mae", "mre_percent", "n_sequences"],
        [[b, s, a, cfg.horizon, _fmt(v[0]), _fmt(v[1]), _fmt(v[2]), v[3]] for (b, s, a), v in summary.items()],
    )
    tags = [s.tag for s in cfg.split_specs()]
    if len(cfg.bins) > 1:
        _write_csv(
            rdir / "table_bins.csv", ["bins", *models],
            [[b, *(_fmt(summary[(b, tags[0], a)][2]) for a in models)] for b in cfg.bins],
        )
    if len(tags) > 1:
        _write_csv(
            rdir / "table_splits.csv", ["split", *models],
            [[t, *(_fmt(summary[(cfg.bins[0], t, a)][2]) for a in models)] for t in tags],
        )


@cli.command("forecast")
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--series", "series_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Series file; only the first 5 frames seed the forecast.")
@click.option("--horizon", type=click.Choice(["60", "180"]), default="60", help="Forecast horizon in minutes.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Forecast file to write.")
def forecast_cmd(weights, series_path, horizon, out):
    """Recursive forecast from a single seed window."""
    bundle = load_bundle(weights)
    series = read_series(series_path)
    if series.binning.bin_count != bundle.config.bins:
        raise DataError(f"{series_path} has {series.binning.bin_count} bins; weights expect {bundle.config.bins}")
    steps = horizon_steps(int(horizon))
    t0 = time.perf_counter()
    run, truth = forecast_full_protocol(bundle, series, steps, model_ref=str(weights))
    elapsed = time.perf_counter() - t0
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_forecast(run, out, series.binning, start_minute=series.times[0])
    msg = f"wrote {run.horizon} predicted frames to {out} in {elapsed:.2f}s"
    if truth is not None:
        msg += f" (MRE {evaluate(run.predictions, truth).mre_percent:.2f}%)"
    click.echo(msg)


def _snapshot_rows(forecast_path, truth_series, times):
    pred, prov = read_forecast(forecast_path)
    centers = pred.binning.centers
    t_pred = {t: k for k, t in enumerate(pred.times)}
    t_true = {t: k for k, t in enumerate(truth_series.times)}
    rows = []
    for t in times:
        if t not in t_pred:
            continue
        p = pred.frames[t_pred[t]]
        y = truth_series.frames[t_true[t]] if t in t_true else np.full(len(p), np.nan)
        for c, pv, yv in zip(centers, p, y):
            rows.append([truth_series.source_id, t, prov[t_pred[t]], _fmt(c), _fmt(pv), _fmt(yv)])
    return rows


@cli.command("export-plots")
@common_options
def export_plots(**opts):
    """Collect loss curves, per-step errors and distribution snapshots as CSV."""
    cfg = resolve_config(**opts)
    times = SNAPSHOT_TIMES[cfg.horizon]
    n_written = 0
    for bins in cfg.bins:
        for split in cfg.split_specs():
            pdir = cfg.root / "plots" / f"B{bins}" / f"split_{split.tag}"
            pdir.mkdir(parents=True, exist_ok=True)
            mdir = _model_dir(cfg, bins, split)
            for arch in cfg.models:
                loss = mdir / f"loss_{arch}.csv"
                if loss.exists():
                    shutil.copyfile(loss, pdir / f"loss_{arch}.csv")
                    n_written += 1
                rdir = _report_dir(cfg, bins, split, arch)
                if not rdir.exists():
                    continue
                reports = sorted(p for p in rdir.glob("seq_*.txt") if not p.name.endswith(".forecast.txt"))
                per_step = {}
                snapshots = []
                for path in reports:
                    report = EvalReport.read(path)
                    for s in report.per_step:
                        per_step.setdefault(s.t, []).append((s.rmse, s.mae, s.mre))
                    sid = path.stem
                    truth = read_series(_series_dir(cfg, bins) / f"{sid}.txt")
                    snapshots += _snapshot_rows(rdir / f"{sid}.forecast.txt", truth, times)
                _write_csv(
                    pdir / f"per_step_{arch}.csv", ["t_min", "rmse", "mae", "mre_percent"],
                    [[t, *(_fmt(np.nanmean(col)) for col in zip(*vals))] for t, vals in sorted(per_step.items())],
                )
                _write_csv(
                    pdir / f"snapshots_{arch}.csv",
                    ["sequence", "t_min", "source", "bin_center", "predicted", "truth"], snapshots,
                )
                n_written += 2
    click.echo(f"wrote {n_written} CSV files under {cfg.root / 'plots'}")


@cli.command("show-config")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def show_config(config_path):
    """Print the effective configuration as YAML."""
    cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
    click.echo(cfg.to_yaml(), nl=False)


DATA_ERRORS = (DataError, PreprocessError, SimulationError, ForecastError, MetricError, FileNotFoundError, OSError, ValueError)


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="ggforecast", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    except DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
