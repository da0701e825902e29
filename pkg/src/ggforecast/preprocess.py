"""Grain radii -> normalized R/<R> histograms -> sliding windows -> splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .simgen import SequenceRecord

WINDOW = 5
ALLOWED_SPLITS = ((80, 15, 5), (80, 10, 10), (70, 20, 10), (70, 15, 15))
SUM_TOL = 1e-9


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class BinningSpec:
    bin_count: int = 30
    lower_edge: float = 0.0
    upper_edge: float = 3.0

    def __post_init__(self):
        if not 10 <= self.bin_count <= 50:
            raise PreprocessError(f"bin_count must be in [10, 50], got {self.bin_count}")
        if not self.upper_edge > self.lower_edge:
            raise PreprocessError("bin edges must be strictly increasing")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lower_edge, self.upper_edge, self.bin_count + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])


def _histogram(radii: np.ndarray, bin_count: int, lower: float, upper: float) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise PreprocessError("empty snapshot")
    u = radii / radii.mean()
    idx = np.floor((u - lower) * (bin_count / (upper - lower))).astype(np.int64)
    np.clip(idx, 0, bin_count - 1, out=idx)
    counts = np.bincount(idx, minlength=bin_count).astype(float)
    values = counts / radii.size
    return values / values.sum()


def bin_snapshot(radii, spec: BinningSpec | None = None) -> np.ndarray:
    """Fraction of grains per uniform R/<R> bin; overflow goes to the last bin.

    Bins are half-open ``[a, b)`` except the last, which also collects every
    value above the upper edge.
    """
    spec = spec or BinningSpec()
    return _histogram(radii, spec.bin_count, spec.lower_edge, spec.upper_edge)


@dataclass
class DistributionSeries:
    binning: BinningSpec
    frames: np.ndarray  # (T, B)
    source_id: str = ""
    times: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.binning.bin_count:
            raise PreprocessError(
                f"frames shape {self.frames.shape} does not match bin_count {self.binning.bin_count}"
            )
        if not self.times:
            self.times = list(range(len(self.frames)))

    def __len__(self) -> int:
        return len(self.frames)

    def head(self, n: int) -> "DistributionSeries":
        return DistributionSeries(self.binning, self.frames[:n], self.source_id, self.times[:n])


def series_from_record(rec: SequenceRecord, spec: BinningSpec | None = None, source_id: str = "") -> DistributionSeries:
    spec = spec or BinningSpec()
    frames = []
    for t, radii in rec.snapshots:
        try:
            frames.append(bin_snapshot(radii, spec))
        except PreprocessError as exc:
            raise PreprocessError(f"{exc} at t={t} min") from None
    return DistributionSeries(spec, np.array(frames), source_id, [t for t, _ in rec.snapshots])


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray  # (5, B)
    target: np.ndarray  # (B,)
    origin: tuple[str, int]


def build_windows(series: DistributionSeries, window: int = WINDOW) -> list[WindowSample]:
    frames = series.frames
    if len(frames) < window + 1:
        raise PreprocessError(f"series needs at least {window + 1} frames, got {len(frames)}")
    return [
        WindowSample(frames[k : k + window].copy(), frames[k + window].copy(), (series.source_id, k))
        for k in range(len(frames) - window)
    ]


def windows_to_arrays(series_list, window: int = WINDOW, max_frames: int | None = None):
    """Stack every window of every series into ``X (N, window, B)`` and ``y (N, B)``."""
    xs, ys = [], []
    for s in series_list:
        frames = s.frames if max_frames is None else s.frames[:max_frames]
        if len(frames) < window + 1:
            raise PreprocessError(f"series {s.source_id!r} too short for windowing")
        idx = np.arange(len(frames) - window)[:, None] + np.arange(window)[None, :]
        xs.append(frames[idx])
        ys.append(frames[window:])
    return np.concatenate(xs), np.concatenate(ys)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[int, int, int] = (80, 15, 5)
    split_seed: int = 0

    def __post_init__(self):
        ratios = tuple(int(r) for r in self.ratios)
        object.__setattr__(self, "ratios", ratios)
        if ratios not in ALLOWED_SPLITS:
            raise PreprocessError(f"split ratios {ratios} not in {ALLOWED_SPLITS}")

    @property
    def tag(self) -> str:
        return "-".join(str(r) for r in self.ratios)


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` items over percentage ratios."""
    exact = np.array(ratios, dtype=float) * n / sum(ratios)
    counts = np.floor(exact).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return tuple(int(c) for c in counts)


def split_dataset(series_list: list, spec: SplitSpec | None = None):
    spec = spec or SplitSpec()
    if len(series_list) < 20:
        raise PreprocessError(f"need at least 20 sequences to split, got {len(series_list)}")
    order = np.random.default_rng(spec.split_seed).permutation(len(series_list))
    n_train, n_val, _ = split_counts(len(series_list), spec.ratios)
    shuffled = [series_list[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


class DistributionBinner(TransformerMixin, BaseEstimator):
    """Map each radius snapshot in ``X`` to its normalized histogram.

    Stateless apart from validating ``bin_count``; ``fit`` exists so the
    binner can sit in a Pipeline.
    """

    def __init__(self, bin_count: int = 30, lower_edge: float = 0.0, upper_edge: float = 3.0):
        self.bin_count = bin_count
        self.lower_edge = lower_edge
        self.upper_edge = upper_edge

    def fit(self, X, y=None):
        self.spec_ = BinningSpec(self.bin_count, self.lower_edge, self.upper_edge)
        self.n_features_out_ = self.bin_count
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or BinningSpec(self.bin_count, self.lower_edge, self.upper_edge)
        return np.array([bin_snapshot(r, spec) for r in X])


# -- persistence -----------------------------------------------------------

def _binning_header(spec: BinningSpec) -> str:
    return f"# bins={spec.bin_count} lower={spec.lower_edge!r} upper={spec.upper_edge!r} units=R/<R>"


def _parse_header(line: str) -> BinningSpec:
    fields = dict(tok.split("=", 1) for tok in line.lstrip("#").split() if "=" in tok)
    return BinningSpec(int(fields["bins"]), float(fields["lower"]), float(fields["upper"]))


def format_frame(t: int, values) -> str:
    # 17 significant digits round-trip a float64 exactly
    return f"{t};" + ",".join(f"{v:.17g}" for v in values)


def write_series(series: DistributionSeries, path: str | Path) -> None:
    lines = [_binning_header(series.binning)]
    lines += [format_frame(t, v) for t, v in zip(series.times, series.frames)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_series(path: str | Path) -> DistributionSeries:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise PreprocessError(f"{path}: missing binning header")
    spec = _parse_header(lines[0])
    times, frames = [], []
    for ln in lines[1:]:
        t, _, body = ln.partition(";")
        body = body.split(";")[0]
        times.append(int(t))
        frames.append([float(v) for v in body.split(",")])
    if not frames:
        raise PreprocessError(f"{path}: no frames")
    return DistributionSeries(spec, np.array(frames), path.stem, times)


def write_split_manifest(path, spec: SplitSpec, train, val, test) -> None:
    doc = {
        "ratios": list(spec.ratios),
        "split_seed": spec.split_seed,
        "train": [s.source_id for s in train],
        "val": [s.source_id for s in val],
        "test": [s.source_id for s in test],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_split_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
