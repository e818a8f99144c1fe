"""Correlation-based evaluation.

The headline numbers are Pearson correlations between predicted and
reference trajectories, computed per utterance and per dimension, then
averaged. Sensor-level and grand means aggregate over dimensions first so
every utterance carries equal weight regardless of length. Confidence
intervals come from a seeded percentile bootstrap over utterances.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_targets import EMA_AXES, EMA_DIM_NAMES, EMA_SENSORS, N_EMA_DIMS
from .nn_core import RngState

REPORT_JSON = "correlation_report.json"
REPORT_CSV = "correlation_report.csv"

# 12 per-dimension entries, 6 per-sensor means, then the three headline rows
REPORT_ROWS = (
    EMA_DIM_NAMES
    + EMA_SENSORS
    + ("ema_mean", "loudness", "pitch")
)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation of two equal-length 1-D sequences.

    Raises ValueError when either input has zero variance (the
    correlation is undefined there, and silently returning 0 or NaN hides
    degenerate predictions).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two samples")
    if x.max() == x.min() or y.max() == y.min():
        raise ValueError("zero variance input: correlation undefined")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance input: correlation undefined")
    return float(np.sum(xc * yc) / (sx * sy))


def drop_rate(r_full: float, r_condition: float) -> float:
    """Relative correlation loss of a condition against the full model."""
    if r_full == 0.0:
        raise ValueError("r_full is zero: drop rate undefined")
    return (r_full - r_condition) / r_full


def bootstrap_ci(
    values: np.ndarray, seed: int, n_resamples: int = 1000, coverage: float = 0.95
) -> tuple[float, float]:
    """Seeded percentile bootstrap interval for the mean of `values`."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("bootstrap needs at least one value")
    rng = RngState(seed).derive("bootstrap")
    idx = rng.integers(values.size, (n_resamples, values.size))
    means = values[idx].mean(axis=1)
    lo = (1.0 - coverage) / 2.0
    return (
        float(np.percentile(means, 100.0 * lo)),
        float(np.percentile(means, 100.0 * (1.0 - lo))),
    )


@dataclass
class UtterancePrediction:
    """Aligned prediction/reference pair for one utterance, frames first."""

    utterance_id: str
    ema_pred: np.ndarray  # [N, 12]
    ema_true: np.ndarray
    pitch_pred: np.ndarray  # [N]
    pitch_true: np.ndarray
    loudness_pred: np.ndarray  # [N]
    loudness_true: np.ndarray

    def __post_init__(self):
        n = self.ema_pred.shape[0]
        if self.ema_pred.shape != (n, N_EMA_DIMS) or self.ema_true.shape != (n, N_EMA_DIMS):
            raise ValueError(f"{self.utterance_id}: EMA must be [N, {N_EMA_DIMS}]")
        for name in ("pitch_pred", "pitch_true", "loudness_pred", "loudness_true"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{self.utterance_id}: {name} must be [N]")


@dataclass
class CorrelationReport:
    entries: dict  # row name -> {"r": float, "ci_low": float, "ci_high": float}
    n_utterances: int
    n_skipped: int  # zero-variance pairs left out of the averages

    def r(self, name: str) -> float:
        return self.entries[name]["r"]

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_utterances": self.n_utterances,
                "n_skipped": self.n_skipped,
                "entries": self.entries,
            },
            indent=1, sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CorrelationReport":
        d = json.loads(text)
        return cls(
            entries=d["entries"],
            n_utterances=d["n_utterances"],
            n_skipped=d["n_skipped"],
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "r", "ci_low", "ci_high"])
        for name in REPORT_ROWS:
            e = self.entries[name]
            w.writerow([name, f"{e['r']:.6f}", f"{e['ci_low']:.6f}", f"{e['ci_high']:.6f}"])
        return buf.getvalue()


def _per_utterance_table(preds: list) -> tuple[np.ndarray, int]:
    """[n_utt, 14] matrix of per-utterance correlations (NaN = skipped).

    Columns: 12 EMA dims, then loudness, then pitch.
    """
    n = len(preds)
    table = np.full((n, N_EMA_DIMS + 2), np.nan)
    skipped = 0
    for i, p in enumerate(preds):
        for d in range(N_EMA_DIMS):
            try:
                table[i, d] = pearson(p.ema_pred[:, d], p.ema_true[:, d])
            except ValueError:
                skipped += 1
        try:
            table[i, N_EMA_DIMS] = pearson(p.loudness_pred, p.loudness_true)
        except ValueError:
            skipped += 1
        try:
            table[i, N_EMA_DIMS + 1] = pearson(p.pitch_pred, p.pitch_true)
        except ValueError:
            skipped += 1
    return table, skipped


def evaluate(preds: list, seed: int = 0, n_resamples: int = 1000) -> CorrelationReport:
    """Aggregate per-utterance correlations into the standard report.

    Every row averages over utterances last, so the bootstrap resamples
    utterances. Sensor rows average the sensor's x and y correlations
    within each utterance first; ema_mean averages all 12.
    """
    if not preds:
        raise ValueError("evaluate needs at least one utterance")
    table, skipped = _per_utterance_table(preds)

    def row(values: np.ndarray) -> dict:
        values = values[np.isfinite(values)]
        if values.size == 0:
            return {"r": float("nan"), "ci_low": float("nan"), "ci_high": float("nan")}
        lo, hi = bootstrap_ci(values, seed=seed, n_resamples=n_resamples)
        return {"r": float(values.mean()), "ci_low": lo, "ci_high": hi}

    entries = {}
    for d, name in enumerate(EMA_DIM_NAMES):
        entries[name] = row(table[:, d])
    for s, sensor in enumerate(EMA_SENSORS):
        cols = table[:, 2 * s : 2 * s + len(EMA_AXES)]
        with np.errstate(invalid="ignore"):
            entries[sensor] = row(np.nanmean(cols, axis=1))
    with np.errstate(invalid="ignore"):
        entries["ema_mean"] = row(np.nanmean(table[:, :N_EMA_DIMS], axis=1))
    entries["loudness"] = row(table[:, N_EMA_DIMS])
    entries["pitch"] = row(table[:, N_EMA_DIMS + 1])
    return CorrelationReport(
        entries=entries, n_utterances=len(preds), n_skipped=skipped
    )


def write_report(report: CorrelationReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / REPORT_JSON).write_text(report.to_json())
    (out_dir / REPORT_CSV).write_text(report.to_csv())


def read_report(in_dir) -> CorrelationReport:
    return CorrelationReport.from_json((Path(in_dir) / REPORT_JSON).read_text())
