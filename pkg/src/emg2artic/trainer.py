"""Deterministic mini-batch training loop.

Variable-length utterances are shuffled per epoch, grouped into
similar-length buckets to limit padding, and right-padded to the bucket
maximum with masks carried through the model. AdamW with constant
learning rate, decoupled weight decay, and a global-norm gradient clip
as a blow-up guard. The best checkpoint is the one with the lowest
validation total loss.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core as nc
from .eval_metrics import UtterancePrediction
from .feature_targets import N_EMA_DIMS, align_lengths
from .model import (
    EncoderConfig,
    LossWeights,
    ModelParams,
    encode_batch,
    forward_backward,
    forward_batch,
    init_params,
    predict,
)
from .nn_core import RngState, Tensor

HISTORY_COLUMNS = (
    "epoch",
    "l_total", "l_ema", "l_pitch", "l_loud", "l_phon",
    "val_l_total", "val_l_ema", "val_l_pitch", "val_l_loud", "val_l_phon",
    "val_r_ema", "val_r_loud", "val_r_pitch",
)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-4
    weight_decay: float = 1e-7
    n_epochs: int = 80
    seed: int = 0
    eval_every: int = 5
    grad_clip_norm: float = 10.0  # <= 0 disables clipping

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")


@dataclass
class TrainItem:
    """One utterance ready for batching: EMG time-major, targets framewise."""

    utterance_id: str
    emg: np.ndarray  # [T, C]
    ema: np.ndarray  # [N, 12]
    pitch: np.ndarray  # [N]
    loudness: np.ndarray  # [N]
    phonemes: np.ndarray  # [N] int


def make_train_item(utt) -> TrainItem:
    """Adapt a loaded corpus utterance (preprocessed) for training."""
    if utt.emg_prep is None:
        raise ValueError(f"{utt.utterance_id}: utterance has no preprocessed EMG")
    return TrainItem(
        utterance_id=utt.utterance_id,
        emg=utt.emg_prep.T.astype(np.float64),
        ema=utt.track.ema.T.astype(np.float64),
        pitch=utt.track.pitch.astype(np.float64),
        loudness=utt.track.loudness.astype(np.float64),
        phonemes=utt.phonemes.ids.astype(np.int64),
    )


@dataclass
class Batch:
    utterance_ids: list
    emg: np.ndarray  # [B, T_max, C], zero-padded
    emg_lengths: np.ndarray
    ema: np.ndarray  # [B, N_max, 12]
    pitch: np.ndarray  # [B, N_max]
    loudness: np.ndarray  # [B, N_max]
    phonemes: np.ndarray  # [B, N_max]
    target_lengths: np.ndarray


def _assemble(items: list) -> Batch:
    b = len(items)
    t_max = max(it.emg.shape[0] for it in items)
    n_max = max(it.ema.shape[0] for it in items)
    c = items[0].emg.shape[1]
    emg = np.zeros((b, t_max, c))
    ema = np.zeros((b, n_max, N_EMA_DIMS))
    pitch = np.zeros((b, n_max))
    loud = np.zeros((b, n_max))
    phon = np.zeros((b, n_max), dtype=np.int64)
    emg_len = np.zeros(b, dtype=np.int64)
    tgt_len = np.zeros(b, dtype=np.int64)
    for i, it in enumerate(items):
        t, n = it.emg.shape[0], it.ema.shape[0]
        emg[i, :t] = it.emg
        ema[i, :n] = it.ema
        pitch[i, :n] = it.pitch
        loud[i, :n] = it.loudness
        phon[i, :n] = it.phonemes
        emg_len[i] = t
        tgt_len[i] = n
    return Batch(
        utterance_ids=[it.utterance_id for it in items],
        emg=emg, emg_lengths=emg_len,
        ema=ema, pitch=pitch, loudness=loud, phonemes=phon,
        target_lengths=tgt_len,
    )


def make_batches(items: list, batch_size: int, seed: int, epoch: int) -> list:
    """Deterministic epoch batching: shuffle, bucket by length, pad.

    A stable length sort after the shuffle groups similar lengths so
    padding stays small, while the shuffle varies bucket membership and
    the final chunk-order shuffle varies the step sequence across epochs.
    """
    if not items:
        raise ValueError("empty corpus")
    rng = RngState(seed).derive(f"epoch:{epoch}")
    perm = rng.permutation(len(items))
    shuffled = [items[i] for i in perm]
    shuffled.sort(key=lambda it: it.emg.shape[0])  # stable
    chunks = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    order = rng.permutation(len(chunks))
    return [_assemble(chunks[i]) for i in order]


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def add(self, rec: dict) -> None:
        self.records.append(rec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in self.records:
            row = {}
            for k in HISTORY_COLUMNS:
                v = rec.get(k)
                if v is None:
                    row[k] = ""
                elif k == "epoch":
                    row[k] = str(v)
                else:
                    row[k] = f"{v:.10g}"
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        hist = cls()
        for row in csv.DictReader(io.StringIO(text)):
            rec = {}
            for k, v in row.items():
                if v == "" or v is None:
                    rec[k] = None
                elif k == "epoch":
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            hist.add(rec)
        return hist


@dataclass
class TrainResult:
    final: ModelParams
    best: ModelParams
    best_epoch: int
    history: TrainHistory


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _snapshot(mp: ModelParams) -> ModelParams:
    return ModelParams(
        params={k: Tensor(t.data.copy(), requires_grad=True) for k, t in mp.params.items()},
        buffers={k: v.copy() for k, v in mp.buffers.items()},
    )


def _masked_pearson_mean(preds: list, targets: list) -> float:
    """Mean per-utterance, per-dim correlation; NaN-safe for constants."""
    rs = []
    for p, t in zip(preds, targets):
        for d in range(p.shape[1]):
            ps, ts = p[:, d], t[:, d]
            if ps.std() < 1e-12 or ts.std() < 1e-12:
                continue
            rs.append(float(np.corrcoef(ps, ts)[0, 1]))
    return float(np.mean(rs)) if rs else float("nan")


def validate(
    items: list,
    mp: ModelParams,
    model_cfg: EncoderConfig,
    weights: LossWeights,
    batch_size: int,
    with_correlations: bool = False,
) -> dict:
    """Validation losses (and optionally correlations); mutates nothing."""
    sums = {"l_total": 0.0, "l_ema": 0.0, "l_pitch": 0.0, "l_loud": 0.0, "l_phon": 0.0}
    n_frames = 0
    ema_p, ema_t = [], []
    loud_p, loud_t = [], []
    pitch_p, pitch_t = [], []
    ordered = sorted(items, key=lambda it: it.emg.shape[0])
    with nc.no_grad():
        for i in range(0, len(ordered), batch_size):
            batch = _assemble(ordered[i : i + batch_size])
            total, breakdown, out, usable = forward_batch(
                batch.emg, batch.emg_lengths, batch.ema, batch.pitch,
                batch.loudness, batch.phonemes, batch.target_lengths,
                mp, model_cfg, weights, training=False,
            )
            frames = int(usable.sum())
            n_frames += frames
            for k in sums:
                sums[k] += breakdown[k] * frames
            if with_correlations:
                for j, n in enumerate(usable):
                    n = int(n)
                    ema_p.append(out.ema.data[j, :n])
                    ema_t.append(batch.ema[j, :n])
                    loud_p.append(out.loudness.data[j, :n])
                    loud_t.append(batch.loudness[j, :n, None])
                    pitch_p.append(out.pitch.data[j, :n])
                    pitch_t.append(batch.pitch[j, :n, None])
    rec = {f"val_{k}": v / max(n_frames, 1) for k, v in sums.items()}
    if with_correlations:
        rec["val_r_ema"] = _masked_pearson_mean(ema_p, ema_t)
        rec["val_r_loud"] = _masked_pearson_mean(loud_p, loud_t)
        rec["val_r_pitch"] = _masked_pearson_mean(pitch_p, pitch_t)
    return rec


def predict_items(
    items: list,
    mp: ModelParams,
    model_cfg: EncoderConfig,
    batch_size: int = 8,
) -> list:
    """Run inference and pair predictions with references per utterance.

    Returns UtterancePrediction objects sorted by utterance id, trimmed to
    the usable frame count of each utterance.
    """
    out_preds = []
    ordered = sorted(items, key=lambda it: it.emg.shape[0])
    with nc.no_grad():
        for i in range(0, len(ordered), batch_size):
            batch = _assemble(ordered[i : i + batch_size])
            hidden, flen = encode_batch(
                batch.emg, batch.emg_lengths, mp, model_cfg, training=False
            )
            out = predict(hidden, mp)
            for j, uid in enumerate(batch.utterance_ids):
                n = align_lengths(int(flen[j]), int(batch.target_lengths[j]))
                out_preds.append(
                    UtterancePrediction(
                        utterance_id=uid,
                        ema_pred=out.ema.data[j, :n].copy(),
                        ema_true=batch.ema[j, :n].copy(),
                        pitch_pred=out.pitch.data[j, :n, 0].copy(),
                        pitch_true=batch.pitch[j, :n].copy(),
                        loudness_pred=out.loudness.data[j, :n, 0].copy(),
                        loudness_true=batch.loudness[j, :n].copy(),
                    )
                )
    out_preds.sort(key=lambda p: p.utterance_id)
    return out_preds


def train(
    train_items: list,
    val_items: list,
    model_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    weights: LossWeights | None = None,
    log=None,
) -> TrainResult:
    """Run the full loop; deterministic given (items, configs, seed)."""
    if weights is None:
        weights = LossWeights()
    mp = init_params(model_cfg, train_cfg.seed)
    opt = nc.AdamWState()
    history = TrainHistory()
    best, best_epoch, best_val = _snapshot(mp), 0, float("inf")
    for epoch in range(1, train_cfg.n_epochs + 1):
        batches = make_batches(train_items, train_cfg.batch_size, train_cfg.seed, epoch)
        sums = {"l_total": 0.0, "l_ema": 0.0, "l_pitch": 0.0, "l_loud": 0.0, "l_phon": 0.0}
        n_frames = 0
        for bi, batch in enumerate(batches):
            try:
                breakdown, grads = forward_backward(
                    batch.emg, batch.emg_lengths, batch.ema, batch.pitch,
                    batch.loudness, batch.phonemes, batch.target_lengths,
                    mp, model_cfg, weights, training=True,
                )
            except FloatingPointError as e:
                raise FloatingPointError(
                    f"epoch {epoch} batch {bi} ({batch.utterance_ids[:2]}...): {e}"
                ) from e
            clip_gradients(grads, train_cfg.grad_clip_norm)
            nc.adamw_step(
                mp.trainable(), grads, opt,
                lr=train_cfg.learning_rate,
                weight_decay=train_cfg.weight_decay,
            )
            frames = int(batch.target_lengths.sum())
            n_frames += frames
            for k in sums:
                sums[k] += breakdown[k] * frames
        rec = {"epoch": epoch}
        rec.update({k: v / max(n_frames, 1) for k, v in sums.items()})
        with_corr = (epoch % train_cfg.eval_every == 0) or (epoch == train_cfg.n_epochs)
        rec.update(
            validate(val_items, mp, model_cfg, weights, train_cfg.batch_size, with_corr)
        )
        history.add(rec)
        if log is not None:
            log(rec)
        if rec["val_l_total"] < best_val:
            best_val = rec["val_l_total"]
            best = _snapshot(mp)
            best_epoch = epoch
    return TrainResult(final=mp, best=best, best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MODEL_CONFIG_FILE = "model_config.json"


def save_checkpoint(mp: ModelParams, model_cfg: EncoderConfig, weights: LossWeights, path) -> None:
    """nn_core weights format plus model_config.json."""
    path = Path(path)
    entries = {k: t.data for k, t in mp.params.items()}
    entries.update(mp.buffers)
    nc.save_params(entries, path)
    with open(path / MODEL_CONFIG_FILE, "w") as fh:
        json.dump(
            {
                "config_version": 1,
                "encoder": asdict(model_cfg),
                "loss_weights": asdict(weights),
            },
            fh, indent=1, sort_keys=True,
        )
        fh.write("\n")


def load_checkpoint(path):
    """Returns (ModelParams, EncoderConfig, LossWeights)."""
    path = Path(path)
    with open(path / MODEL_CONFIG_FILE) as fh:
        meta = json.load(fh)
    cfg = EncoderConfig(**meta["encoder"])
    weights = LossWeights(**meta["loss_weights"])
    reference = init_params(cfg, seed=0)
    stored = nc.load_params(path)
    params: dict = {}
    buffers: dict = {}
    for name, t in reference.params.items():
        if name not in stored:
            raise ValueError(f"checkpoint missing parameter '{name}'")
        if stored[name].shape != t.data.shape:
            raise ValueError(
                f"shape mismatch for '{name}': {stored[name].shape} vs {t.data.shape}"
            )
        params[name] = Tensor(stored[name], requires_grad=True)
    for name, v in reference.buffers.items():
        if name not in stored:
            raise ValueError(f"checkpoint missing buffer '{name}'")
        if stored[name].shape != v.shape:
            raise ValueError(f"shape mismatch for buffer '{name}'")
        buffers[name] = stored[name]
    return ModelParams(params=params, buffers=buffers), cfg, weights
