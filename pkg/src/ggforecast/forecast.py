"""Recursive sliding-window forecasting.

The model sees five frames and emits the next one. Each repaired prediction
is appended to the window while the oldest frame is dropped, so from the
sixth step on the window holds predictions only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import WINDOW, BinningSpec, DistributionSeries, _binning_header, format_frame

OBSERVED = "observed"
PREDICTED = "predicted"


class ForecastError(ValueError):
    pass


def repair_distribution(raw) -> np.ndarray:
    """Clamp negatives to zero and renormalize; near-zero mass becomes uniform."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ForecastError("non-finite model output")
    v = np.maximum(raw, 0.0)
    total = v.sum()
    if total < 1e-8:
        return np.full(raw.shape, 1.0 / raw.size)
    return v / total


@dataclass
class ForecastRun:
    seed_window: np.ndarray  # (5, B)
    predictions: np.ndarray  # (horizon, B)
    provenance: list[tuple[str, ...]] = field(default_factory=list)
    model_ref: str = ""

    @property
    def horizon(self) -> int:
        return len(self.predictions)

    def observed_inputs(self, step: int) -> int:
        """Number of observed frames in the input window of 1-based ``step``."""
        return sum(tag == OBSERVED for tag in self.provenance[step - 1])


def _predict_one(model, window: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict"):
        return np.asarray(model.predict(window[None]))[0]
    return np.asarray(model(window))


def forecast(model, seed_window, horizon: int, model_ref: str = "") -> ForecastRun:
    """Roll ``model`` forward ``horizon`` steps from five observed frames.

    ``model`` is anything with ``predict`` on (N, 5, B) batches, or a plain
    callable on a single (5, B) window.
    """
    seed = np.asarray(seed_window, dtype=np.float64)
    if seed.ndim != 2 or seed.shape[0] != WINDOW:
        raise ForecastError(f"seed window must have shape (5, B), got {seed.shape}")
    if horizon < 1:
        raise ForecastError("horizon must be >= 1")
    frames = list(seed)
    tags = [OBSERVED] * WINDOW
    preds, provenance = [], []
    for _ in range(horizon):
        window = np.stack(frames[-WINDOW:])
        provenance.append(tuple(tags[-WINDOW:]))
        y = repair_distribution(_predict_one(model, window))
        if y.shape != (seed.shape[1],):
            raise ForecastError(f"model returned shape {y.shape}, expected ({seed.shape[1]},)")
        preds.append(y)
        frames.append(y)
        tags.append(PREDICTED)
    return ForecastRun(seed, np.array(preds), provenance, model_ref)


def forecast_full_protocol(model, series: DistributionSeries, horizon: int, model_ref: str = ""):
    """Seed from frames 0-4 and forecast; pair with frames 5.. when available.

    Returns ``(run, truth)`` where ``truth`` is ``None`` if the series is too
    short to cover the whole horizon.
    """
    if len(series) < WINDOW:
        raise ForecastError(f"series {series.source_id!r} has {len(series)} frames, need at least {WINDOW}")
    run = forecast(model, series.frames[:WINDOW], horizon, model_ref)
    truth = None
    if len(series) >= WINDOW + horizon:
        truth = series.frames[WINDOW : WINDOW + horizon]
    return run, truth


def horizon_steps(horizon_minutes: int) -> int:
    """Minutes 0-4 are observed; ``horizon_minutes`` = 60 means minutes 5..60."""
    return horizon_minutes - WINDOW + 1


def write_forecast(run: ForecastRun, path, binning: BinningSpec, start_minute: int = 0) -> None:
    """Series-format file with a trailing provenance column per frame."""
    lines = [_binning_header(binning)]
    t = start_minute
    for frame in run.seed_window:
        lines.append(format_frame(t, frame) + f";{OBSERVED}")
        t += 1
    for frame in run.predictions:
        lines.append(format_frame(t, frame) + f";{PREDICTED}")
        t += 1
    Path(path).write_text("\n".join(lines) + "\n")


def read_forecast(path):
    """Return ``(series, provenance)`` from a forecast file."""
    from .preprocess import read_series

    path = Path(path)
    series = read_series(path)
    provenance = [ln.rsplit(";", 1)[-1] for ln in path.read_text().splitlines()[1:] if ln.strip()]
    return series, provenance
