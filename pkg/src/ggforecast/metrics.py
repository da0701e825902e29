"""Distribution error metrics over a (T, B) grid of time steps × bins."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXCLUDE = "exclude"
FLOOR = "floor"
FLOOR_VALUE = 1e-6


class MetricError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def mre(pred, truth, epsilon_policy: str = EXCLUDE) -> tuple[float, int]:
    """Mean relative error in percent and the number of (t, b) cells used.

    ``"exclude"`` drops cells whose true value is zero; ``"floor"`` keeps
    every cell and divides by ``max(y, 1e-6)`` instead.
    """
    pred, truth = _pair(pred, truth)
    if epsilon_policy == EXCLUDE:
        used = truth != 0
        if not used.any():
            raise MetricError("MRE undefined: no nonzero truth bins")
        rel = np.abs(pred[used] - truth[used]) / np.abs(truth[used])
        return float(100.0 * rel.mean()), int(used.sum())
    if epsilon_policy == FLOOR:
        denom = np.maximum(np.abs(truth), FLOOR_VALUE)
        return float(100.0 * np.mean(np.abs(pred - truth) / denom)), int(truth.size)
    raise MetricError(f"unknown epsilon policy {epsilon_policy!r}")


@dataclass
class StepMetrics:
    t: int
    rmse: float
    mae: float
    mre: float  # NaN when the step has no nonzero truth bins
    bins_used: int


def per_step_curves(pred, truth, times=None, epsilon_policy: str = EXCLUDE) -> list[StepMetrics]:
    pred, truth = _pair(pred, truth)
    times = list(range(len(pred))) if times is None else list(times)
    out = []
    for t, p, y in zip(times, pred, truth):
        try:
            m, used = mre(p, y, epsilon_policy)
        except MetricError:
            m, used = float("nan"), 0
        out.append(StepMetrics(int(t), rmse(p, y), mae(p, y), m, used))
    return out


@dataclass
class EvalReport:
    rmse: float
    mae: float
    mre_percent: float
    bins_used: int
    per_step: list[StepMetrics] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"rmse={self.rmse!r}\nmae={self.mae!r}\nmre_percent={self.mre_percent!r}\n")
        buf.write(f"bins_used={self.bins_used}\n")
        for k in sorted(self.config):
            buf.write(f"{k}={self.config[k]}\n")
        buf.write("\nt,rmse,mae,mre_percent,bins_used\n")
        for s in self.per_step:
            buf.write(f"{s.t},{s.rmse!r},{s.mae!r},{s.mre!r},{s.bins_used}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "EvalReport":
        text = Path(path).read_text()
        head, _, table = text.partition("\n\n")
        kv = dict(line.split("=", 1) for line in head.splitlines() if "=" in line)
        steps = []
        for line in table.splitlines()[1:]:
            if line.strip():
                t, r, a, m, u = line.split(",")
                steps.append(StepMetrics(int(t), float(r), float(a), float(m), int(u)))
        core = {"rmse", "mae", "mre_percent", "bins_used"}
        return cls(
            float(kv["rmse"]),
            float(kv["mae"]),
            float(kv["mre_percent"]),
            int(kv["bins_used"]),
            steps,
            {k: v for k, v in kv.items() if k not in core},
        )


def evaluate(pred, truth, times=None, epsilon_policy: str = EXCLUDE, **config) -> EvalReport:
    m, used = mre(pred, truth, epsilon_policy)
    return EvalReport(
        rmse(pred, truth),
        mae(pred, truth),
        m,
        used,
        per_step_curves(pred, truth, times, epsilon_policy),
        config,
    )
