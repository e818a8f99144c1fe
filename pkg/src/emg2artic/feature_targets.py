"""Articulatory target representations and their frame-rate alignment.

Targets are 12 EMA dimensions (six sensors, x before y), a normalized
pitch stream, a loudness stream, and a frame-level phoneme track. All of
them live on a common frame grid whose nominal rate matches what three
stride-2 convolutions produce from the preprocessed EMG rate; the small
off-by-one frame count mismatch that leaves is cropped away by
align_lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EMA_SENSORS = ("UL", "LL", "LI", "TT", "TB", "TD")
EMA_AXES = ("x", "y")
N_EMA_DIMS = len(EMA_SENSORS) * len(EMA_AXES)  # 12
EMA_DIM_NAMES = tuple(f"{s}_{a}" for s in EMA_SENSORS for a in EMA_AXES)

TARGET_FRAME_RATE_HZ = 86.16
SOURCE_TRACK_RATE_HZ = 50.0

PITCH_CENTER_HZ = 130.0
PITCH_SCALE_HZ = 70.0

PHONEME_VOCAB_SIZE = 41  # 40 phoneme classes plus silence
SILENCE_ID = 0

# frame gaps beyond this indicate a rate misconfiguration, not rounding
MAX_LENGTH_GAP = 4


def ema_dim_index(sensor: str, axis: str) -> int:
    """Dimension index of one sensor coordinate: 2 * sensor + (0 for x, 1 for y)."""
    return 2 * EMA_SENSORS.index(sensor) + EMA_AXES.index(axis)


@dataclass
class ArticulatoryTrack:
    """Continuous regression targets for one utterance."""

    ema: np.ndarray  # [12, N] float32
    pitch: np.ndarray  # [N] float32, already normalized
    loudness: np.ndarray  # [N] float32
    frame_rate_hz: float = TARGET_FRAME_RATE_HZ
    utterance_id: str = ""

    def __post_init__(self):
        self.ema = np.asarray(self.ema, dtype=np.float32)
        self.pitch = np.asarray(self.pitch, dtype=np.float32)
        self.loudness = np.asarray(self.loudness, dtype=np.float32)
        if self.ema.ndim != 2 or self.ema.shape[0] != N_EMA_DIMS:
            raise ValueError(f"ema must be [{N_EMA_DIMS}, N]")
        n = self.ema.shape[1]
        if n < 1 or self.pitch.shape != (n,) or self.loudness.shape != (n,):
            raise ValueError("feature streams must share a positive length")

    @property
    def n_frames(self) -> int:
        return self.ema.shape[1]

    def as_matrix(self) -> np.ndarray:
        """Frame-major [N, 14] view: 12 EMA dims, pitch, loudness."""
        return np.concatenate(
            [self.ema.T, self.pitch[:, None], self.loudness[:, None]], axis=1
        )

    @classmethod
    def from_matrix(cls, mat, frame_rate_hz=TARGET_FRAME_RATE_HZ, utterance_id=""):
        mat = np.asarray(mat)
        if mat.ndim != 2 or mat.shape[1] != N_EMA_DIMS + 2:
            raise ValueError(f"target matrix must be [N, {N_EMA_DIMS + 2}]")
        return cls(
            ema=mat[:, :N_EMA_DIMS].T,
            pitch=mat[:, N_EMA_DIMS],
            loudness=mat[:, N_EMA_DIMS + 1],
            frame_rate_hz=frame_rate_hz,
            utterance_id=utterance_id,
        )


@dataclass
class PhonemeTrack:
    """Frame-level phoneme class ids, id 0 reserved for silence."""

    ids: np.ndarray  # [N] int
    vocab_size: int = PHONEME_VOCAB_SIZE
    frame_rate_hz: float = TARGET_FRAME_RATE_HZ

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError("ids must be one-dimensional")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise ValueError(f"phoneme ids must lie in [0, {self.vocab_size})")

    @property
    def n_frames(self) -> int:
        return self.ids.size


def normalize_pitch(f0_hz):
    """Map fundamental frequency to the dimensionless training range."""
    return (np.asarray(f0_hz, dtype=np.float64) - PITCH_CENTER_HZ) / PITCH_SCALE_HZ


def denormalize_pitch(v):
    return np.asarray(v, dtype=np.float64) * PITCH_SCALE_HZ + PITCH_CENTER_HZ


def _resample_length(n: int, from_rate: float, to_rate: float) -> int:
    return int(np.floor(n * to_rate / from_rate + 0.5))


def _interp_frames(values: np.ndarray, from_rate: float, to_rate: float) -> np.ndarray:
    """Linear interpolation of a [*, N] stream onto the new frame grid."""
    n = values.shape[-1]
    n_out = _resample_length(n, from_rate, to_rate)
    t_in = np.arange(n) / from_rate
    t_out = np.arange(n_out) / to_rate
    flat = values.reshape(-1, n)
    out = np.stack([np.interp(t_out, t_in, row) for row in flat])
    return out.reshape(values.shape[:-1] + (n_out,))


def resample_track(track, to_rate_hz: float):
    """Move a track onto a new frame rate.

    Continuous streams are linearly interpolated; phoneme ids take the
    nearest input frame. Output frame k sits at time k / to_rate_hz.
    """
    if to_rate_hz <= 0:
        raise ValueError("to_rate_hz must be positive")
    from_rate = track.frame_rate_hz
    if to_rate_hz == from_rate:
        return track
    if isinstance(track, PhonemeTrack):
        n = track.n_frames
        if n < 1:
            raise ValueError("cannot resample an empty track")
        n_out = _resample_length(n, from_rate, to_rate_hz)
        src = np.arange(n_out) * (from_rate / to_rate_hz)
        idx = np.clip(np.round(src).astype(int), 0, n - 1)
        return PhonemeTrack(
            ids=track.ids[idx], vocab_size=track.vocab_size, frame_rate_hz=to_rate_hz
        )
    if track.n_frames < 2:
        raise ValueError("linear interpolation needs at least 2 frames")
    return ArticulatoryTrack(
        ema=_interp_frames(track.ema.astype(np.float64), from_rate, to_rate_hz),
        pitch=_interp_frames(track.pitch.astype(np.float64), from_rate, to_rate_hz),
        loudness=_interp_frames(track.loudness.astype(np.float64), from_rate, to_rate_hz),
        frame_rate_hz=to_rate_hz,
        utterance_id=track.utterance_id,
    )


def align_lengths(pred_len: int, target_len: int) -> int:
    """Usable frame count when predictions and targets were resampled apart.

    Small gaps are rounding; large ones mean the rates are wrong, so fail
    loudly instead of silently cropping.
    """
    if pred_len <= 0 or target_len <= 0:
        raise ValueError("lengths must be positive")
    if abs(pred_len - target_len) > MAX_LENGTH_GAP:
        raise ValueError(
            f"frame count gap {abs(pred_len - target_len)} exceeds {MAX_LENGTH_GAP}: "
            f"{pred_len} vs {target_len}"
        )
    return min(pred_len, target_len)
