"""On-disk corpus layout and validation.

One directory per utterance:

    emg.f32        channel-major little-endian float32, n_channels * n_samples
    meta.json      utterance_id, n_channels, sample_rate_hz, n_samples,
                   target_frame_rate_hz, n_frames
    targets.f32    frame-major rows of 14 float32: 12 EMA dims, pitch
                   (normalized), loudness
    phonemes.json  {"vocab_size": V, "ids": [...]}

Preprocessing writes emg_prep.f32 + meta_prep.json alongside. Utterance
directories live under a split directory (train/val/test).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_targets import (
    N_EMA_DIMS,
    TARGET_FRAME_RATE_HZ,
    ArticulatoryTrack,
    PhonemeTrack,
)

SPLITS = ("train", "val", "test")

EMG_FILE = "emg.f32"
META_FILE = "meta.json"
TARGETS_FILE = "targets.f32"
PHONEMES_FILE = "phonemes.json"
EMG_PREP_FILE = "emg_prep.f32"
META_PREP_FILE = "meta_prep.json"
GROUND_TRUTH_FILE = "ground_truth.json"


@dataclass
class Utterance:
    """One loaded corpus entry; emg_prep is None until preprocessing ran."""

    utterance_id: str
    emg: np.ndarray  # [C, T] float32 at sample_rate_hz
    sample_rate_hz: float
    track: ArticulatoryTrack
    phonemes: PhonemeTrack
    emg_prep: np.ndarray | None = None
    prep_rate_hz: float | None = None


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def save_utterance(
    utt_dir,
    emg: np.ndarray,
    sample_rate_hz: float,
    track: ArticulatoryTrack,
    phonemes: PhonemeTrack,
) -> None:
    """Write one utterance directory in the corpus layout."""
    utt_dir = Path(utt_dir)
    utt_dir.mkdir(parents=True, exist_ok=True)
    emg = np.ascontiguousarray(emg, dtype="<f4")
    if emg.ndim != 2:
        raise ValueError("emg must be [n_channels, n_samples]")
    if track.n_frames != phonemes.n_frames:
        raise ValueError("target and phoneme frame counts differ")
    (utt_dir / EMG_FILE).write_bytes(emg.tobytes())
    mat = np.ascontiguousarray(track.as_matrix(), dtype="<f4")
    (utt_dir / TARGETS_FILE).write_bytes(mat.tobytes())
    _write_json(
        utt_dir / PHONEMES_FILE,
        {"vocab_size": int(phonemes.vocab_size), "ids": phonemes.ids.tolist()},
    )
    _write_json(
        utt_dir / META_FILE,
        {
            "utterance_id": track.utterance_id,
            "n_channels": int(emg.shape[0]),
            "sample_rate_hz": float(sample_rate_hz),
            "n_samples": int(emg.shape[1]),
            "target_frame_rate_hz": float(track.frame_rate_hz),
            "n_frames": int(track.n_frames),
        },
    )


def save_preprocessed(utt_dir, samples: np.ndarray, rate_hz: float, utterance_id: str) -> None:
    utt_dir = Path(utt_dir)
    arr = np.ascontiguousarray(samples, dtype="<f4")
    (utt_dir / EMG_PREP_FILE).write_bytes(arr.tobytes())
    _write_json(
        utt_dir / META_PREP_FILE,
        {
            "utterance_id": utterance_id,
            "n_channels": int(arr.shape[0]),
            "sample_rate_hz": float(rate_hz),
            "n_samples": int(arr.shape[1]),
        },
    )


def has_preprocessed(utt_dir) -> bool:
    utt_dir = Path(utt_dir)
    return (utt_dir / EMG_PREP_FILE).exists() and (utt_dir / META_PREP_FILE).exists()


def load_utterance(utt_dir, want_prep: bool = False) -> Utterance:
    """Read one utterance directory back into memory."""
    utt_dir = Path(utt_dir)
    meta = _read_json(utt_dir / META_FILE)
    c, t = int(meta["n_channels"]), int(meta["n_samples"])
    emg = np.frombuffer((utt_dir / EMG_FILE).read_bytes(), dtype="<f4")
    if emg.size != c * t:
        raise ValueError(f"{utt_dir}: emg.f32 size {emg.size} != {c}x{t}")
    emg = emg.reshape(c, t)
    n = int(meta["n_frames"])
    mat = np.frombuffer((utt_dir / TARGETS_FILE).read_bytes(), dtype="<f4")
    if mat.size != n * (N_EMA_DIMS + 2):
        raise ValueError(f"{utt_dir}: targets.f32 size {mat.size} != {n}x{N_EMA_DIMS + 2}")
    track = ArticulatoryTrack.from_matrix(
        mat.reshape(n, N_EMA_DIMS + 2),
        frame_rate_hz=float(meta["target_frame_rate_hz"]),
        utterance_id=meta["utterance_id"],
    )
    ph = _read_json(utt_dir / PHONEMES_FILE)
    phonemes = PhonemeTrack(
        ids=np.array(ph["ids"], dtype=np.int64),
        vocab_size=int(ph["vocab_size"]),
        frame_rate_hz=track.frame_rate_hz,
    )
    if phonemes.n_frames != n:
        raise ValueError(f"{utt_dir}: phoneme frame count {phonemes.n_frames} != {n}")
    utt = Utterance(
        utterance_id=meta["utterance_id"],
        emg=emg,
        sample_rate_hz=float(meta["sample_rate_hz"]),
        track=track,
        phonemes=phonemes,
    )
    if want_prep:
        if not has_preprocessed(utt_dir):
            raise FileNotFoundError(f"{utt_dir}: no preprocessed EMG; run preprocessing first")
        pmeta = _read_json(utt_dir / META_PREP_FILE)
        pc, pt = int(pmeta["n_channels"]), int(pmeta["n_samples"])
        prep = np.frombuffer((utt_dir / EMG_PREP_FILE).read_bytes(), dtype="<f4")
        if prep.size != pc * pt:
            raise ValueError(f"{utt_dir}: emg_prep.f32 size mismatch")
        utt.emg_prep = prep.reshape(pc, pt)
        utt.prep_rate_hz = float(pmeta["sample_rate_hz"])
    return utt


def validate_utterance(utt_dir) -> None:
    """Raise with a concrete message if the directory is malformed."""
    utt = load_utterance(utt_dir)
    if not np.all(np.isfinite(utt.emg)):
        raise ValueError(f"{utt_dir}: non-finite EMG samples")
    if not np.all(np.isfinite(utt.track.as_matrix())):
        raise ValueError(f"{utt_dir}: non-finite target values")


def list_utterances(corpus_dir, split: str) -> list[Path]:
    """Sorted utterance directories of one split."""
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}'")
    split_dir = Path(corpus_dir) / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"missing split directory {split_dir}")
    return sorted(p for p in split_dir.iterdir() if (p / META_FILE).exists())


def save_ground_truth(corpus_dir, payload: dict) -> None:
    _write_json(Path(corpus_dir) / GROUND_TRUTH_FILE, payload)


def load_ground_truth(corpus_dir) -> dict:
    return _read_json(Path(corpus_dir) / GROUND_TRUTH_FILE)
