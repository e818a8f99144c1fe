"""Synthetic EMG/articulatory corpus with a known dependency structure.

Articulatory motion is driven by a small set of master oscillators (upper
lip, lower lip + jaw, tongue tip, tongue body/dorsum, pitch, loudness);
the 12 EMA dimensions are fixed mixes of the four articulator masters, so
the whole target set stays recoverable from eight EMG channels.

Each EMG channel is amplitude-modulated carrier noise. Articulatory and
loudness envelopes modulate a shared low-band carrier, while pitch rides
a separate high-band carrier (see CARRIER_BAND_HZ / PITCH_BAND_HZ), the
way voicing shows up more in the spectral shape of real EMG than in its
raw power.
Without that split a channel like electrode 4, which carries both
prosodic streams, would fold pitch and loudness into one envelope and
neither could be read back cleanly. The envelope of feature f is
softplus(x_f) plus a small rectified-velocity term, so channel power
tracks articulator position (softplus keeps it sign-resolvable) with a
movement-effort flavor on top.

Everything is a pure function of the config seed; utterance u draws from
seed XOR u.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import corpus
from .feature_targets import (
    N_EMA_DIMS,
    PHONEME_VOCAB_SIZE,
    SILENCE_ID,
    TARGET_FRAME_RATE_HZ,
    ArticulatoryTrack,
    PhonemeTrack,
    resample_track,
)
from .nn_core import RngState

N_CHANNELS = 8
N_TARGET_DIMS = N_EMA_DIMS + 2  # 12 EMA + pitch + loudness
PITCH_DIM = 12
LOUDNESS_DIM = 13

MASTER_NAMES = ("ul", "lip", "tt", "tbd", "pitch", "loud")
SINUSOIDS_PER_MASTER = 6
FREQ_RANGE_HZ = (0.4, 5.0)

# speech energy swings over a wider dynamic range than articulator
# positions do; the loudness master is driven proportionally harder
LOUDNESS_MASTER_GAIN = 1.6

# feature envelope: softplus(position) + VELOCITY_WEIGHT * |velocity| / omega
VELOCITY_WEIGHT = 0.15
VELOCITY_NORM = 2.0 * np.pi * 4.0

# articulatory/loudness envelopes modulate the low band; pitch gets its own
# high-band carrier (both bands survive the downstream resample to ~689 Hz)
CARRIER_BAND_HZ = (20.0, 240.0)
PITCH_BAND_HZ = (280.0, 335.0)
CARRIER_EDGE_HZ = 8.0

# how the 12 EMA dims mix the four articulator masters (ul, lip, tt, tbd);
# rows are L2-normalized at build time so dims stay near unit variance
_EMA_MASTER_MAP = np.array(
    [
        [1.00, 0.15, 0.00, 0.00],  # UL_x
        [0.95, 0.25, 0.00, 0.00],  # UL_y
        [0.20, 1.00, 0.00, 0.10],  # LL_x
        [0.15, 0.95, 0.10, 0.00],  # LL_y
        [0.10, 0.90, 0.20, 0.00],  # LI_x
        [0.00, 0.85, 0.15, 0.10],  # LI_y
        [0.00, 0.10, 1.00, 0.20],  # TT_x
        [0.00, 0.00, 0.95, 0.30],  # TT_y
        [0.00, 0.00, 0.25, 1.00],  # TB_x
        [0.00, 0.10, 0.20, 0.95],  # TB_y
        [0.00, 0.00, 0.10, 1.00],  # TD_x
        [0.10, 0.00, 0.00, 0.95],  # TD_y
    ]
)
EMA_MASTER_MAP = _EMA_MASTER_MAP / np.linalg.norm(_EMA_MASTER_MAP, axis=1, keepdims=True)

SILENCE_LOUDNESS_THRESHOLD = 0.35


@dataclass
class DependencyMatrix:
    """Non-negative channel-to-feature weights, [8, 14]."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (N_CHANNELS, N_TARGET_DIMS):
            raise ValueError(f"dependency must be [{N_CHANNELS}, {N_TARGET_DIMS}]")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("dependency weights must be finite and non-negative")
        if np.any(self.weights.max(axis=0) <= 0):
            raise ValueError("every target dim needs at least one nonzero weight")

    def to_json(self) -> list:
        return self.weights.tolist()

    @classmethod
    def from_json(cls, rows) -> "DependencyMatrix":
        return cls(np.array(rows, dtype=np.float64))


@dataclass
class SynthConfig:
    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    duration_range_s: tuple = (2.0, 4.0)
    emg_rate_hz: float = 1000.0
    target_rate_hz: float = 50.0
    dependency: DependencyMatrix | None = None
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("utterance counts must be >= 1")
        lo, hi = self.duration_range_s
        if lo <= 0 or hi < lo:
            raise ValueError("bad duration range")
        if self.dependency is None:
            self.dependency = default_dependency()


def default_dependency() -> DependencyMatrix:
    """Block-structured defaults mirroring the electrode-articulator map.

    Electrode numbering is 1-based in labels, row index = electrode - 1.
    Electrode 2 leads on tongue-tip dims and shares lower-lip/jaw dims
    with electrode 6; electrode 3 covers the tongue body/dorsum more
    weakly; electrode 7 takes the upper lip; electrode 4 takes pitch and
    loudness; electrodes 1, 5, 8 carry only background weight.
    """
    bg = 0.05
    w = np.full((N_CHANNELS, N_TARGET_DIMS), bg)
    #          ULx   ULy   LLx   LLy   LIx   LIy   TTx   TTy   TBx   TBy   TDx   TDy
    w[1, 2:12] = [0.50, 0.45, 0.45, 0.40, 1.00, 0.95, 0.40, 0.35, 0.25, 0.20]  # electrode 2
    w[2, 6:12] = [0.25, 0.20, 0.60, 0.55, 0.65, 0.60]  # electrode 3, tongue body lean
    w[3, PITCH_DIM] = 0.70  # electrode 4
    w[3, LOUDNESS_DIM] = 1.00
    w[5, 2:6] = [0.90, 0.85, 0.80, 0.75]  # electrode 6, lower lip + jaw
    w[6, 0:2] = [1.00, 0.95]  # electrode 7, upper lip
    return DependencyMatrix(w)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _master_stream(rng: RngState, t: np.ndarray) -> np.ndarray:
    """Sum of random sinusoids, standardized over the given time grid."""
    freqs = FREQ_RANGE_HZ[0] + rng.uniform(SINUSOIDS_PER_MASTER) * (
        FREQ_RANGE_HZ[1] - FREQ_RANGE_HZ[0]
    )
    amps = 0.5 + rng.uniform(SINUSOIDS_PER_MASTER)
    phases = rng.uniform(SINUSOIDS_PER_MASTER) * 2.0 * np.pi
    m = np.zeros_like(t)
    for a, f, p in zip(amps, freqs, phases):
        m += a * np.sin(2.0 * np.pi * f * t + p)
    return (m - m.mean()) / max(m.std(), 1e-12)


def gen_latent_trajectories(duration_s: float, rate_hz: float, seed: int) -> np.ndarray:
    """The 14 target streams for one utterance, [14, N] at rate_hz.

    Rows 0..11 are the EMA dims (zero mean by construction), row 12 is
    pitch squashed into the normalized range (-1, 1.5), row 13 is a
    positive loudness envelope.
    """
    if duration_s <= 0 or rate_hz <= 0:
        raise ValueError("duration and rate must be positive")
    n = int(np.floor(duration_s * rate_hz + 0.5))
    t = np.arange(n) / rate_hz
    root = RngState(seed)
    masters = {
        name: _master_stream(root.derive(f"master:{name}"), t) for name in MASTER_NAMES
    }
    articulators = np.stack([masters[k] for k in ("ul", "lip", "tt", "tbd")])
    ema = EMA_MASTER_MAP @ articulators
    pitch = 0.25 + 1.25 * np.tanh(masters["pitch"] / 2.0)
    loudness = _softplus(LOUDNESS_MASTER_GAIN * masters["loud"])
    return np.vstack([ema, pitch[None], loudness[None]])


def feature_envelopes(latents: np.ndarray, rate_hz: float) -> np.ndarray:
    """Non-negative per-feature envelopes the channels modulate with.

    EMA dims carry a rectified-velocity term on top of position (muscle
    effort rises with movement); the prosodic rows are energy-like already,
    so their envelopes track position alone.
    """
    vel = np.gradient(latents, axis=-1) * rate_hz
    env = _softplus(latents) + VELOCITY_WEIGHT * np.abs(vel) / VELOCITY_NORM
    for f in (PITCH_DIM, LOUDNESS_DIM):
        env[f] = _softplus(latents[f])
    return env


def _bandpass_noise(
    rng: RngState, n: int, rate_hz: float, band: tuple = CARRIER_BAND_HZ
) -> np.ndarray:
    """Unit-variance noise confined to the given band, raised-cosine edges."""
    lo, hi = band
    hi = min(hi, 0.95 * rate_hz / 2.0)
    white = rng.normal(n)
    spectrum = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / rate_hz)
    e = CARRIER_EDGE_HZ
    gain = np.zeros_like(f)
    rising = (f >= lo) & (f < lo + e)
    falling = (f > hi - e) & (f <= hi)
    gain[(f >= lo + e) & (f <= hi - e)] = 1.0
    gain[rising] = 0.5 * (1.0 - np.cos(np.pi * (f[rising] - lo) / e))
    gain[falling] = 0.5 * (1.0 - np.cos(np.pi * (hi - f[falling]) / e))
    y = np.fft.irfft(spectrum * gain, n)
    return y / max(y.std(), 1e-12)


def gen_emg_from_latent(
    latents: np.ndarray,
    dependency: DependencyMatrix,
    emg_rate_hz: float,
    noise_std: float,
    seed: int,
    latent_rate_hz: float = 50.0,
) -> np.ndarray:
    """Amplitude-modulated EMG, [8, M] with M = round(N * emg_rate / latent_rate).

    channel_c(t) = (sum_{f != pitch} dependency[c,f] * envelope_f(t)) * carrier_c(t)
                   + dependency[c,pitch] * envelope_pitch(t) * pitch_carrier_c(t)
                   + noise_std * white_c(t)

    carrier_c lives in CARRIER_BAND_HZ and pitch_carrier_c in PITCH_BAND_HZ,
    so the two prosodic streams a channel carries stay spectrally separable.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] != N_TARGET_DIMS:
        raise ValueError(f"latents must be [{N_TARGET_DIMS}, N]")
    n = latents.shape[1]
    m = int(np.floor(n * emg_rate_hz / latent_rate_hz + 0.5))
    env_lo = feature_envelopes(latents, latent_rate_hz)
    t_lo = np.arange(n) / latent_rate_hz
    t_hi = np.arange(m) / emg_rate_hz
    env = np.stack([np.interp(t_hi, t_lo, row) for row in env_lo])
    amp_w = dependency.weights.copy()
    amp_w[:, PITCH_DIM] = 0.0
    chan_env = amp_w @ env  # [8, M]
    pitch_w = dependency.weights[:, PITCH_DIM]
    root = RngState(seed)
    out = np.empty((N_CHANNELS, m))
    for c in range(N_CHANNELS):
        carrier = _bandpass_noise(root.derive(f"carrier:{c}"), m, emg_rate_hz)
        pcarrier = _bandpass_noise(
            root.derive(f"pitch carrier:{c}"), m, emg_rate_hz, PITCH_BAND_HZ
        )
        noise = root.derive(f"noise:{c}").normal(m)
        out[c] = (
            chan_env[c] * carrier
            + pitch_w[c] * env[PITCH_DIM] * pcarrier
            + noise_std * noise
        )
    return out


def phoneme_ids_from_latents(latents: np.ndarray, rate_hz: float) -> np.ndarray:
    """Frame labels by quantizing a slow articulatory mix into 40 bins.

    Frames with loudness under the silence threshold get id 0.
    """
    driver = latents[6] + 0.5 * latents[8] + 0.3 * latents[2]  # TT_x, TB_x, LL_x
    win = max(3, int(round(0.25 * rate_hz)))
    slow = uniform_filter1d(driver, size=win, mode="reflect")
    slow = (slow - slow.mean()) / max(slow.std(), 1e-12)
    u = 0.5 * (1.0 + np.tanh(slow / 1.2))
    ids = 1 + np.minimum((u * (PHONEME_VOCAB_SIZE - 1)).astype(np.int64), PHONEME_VOCAB_SIZE - 2)
    ids[latents[LOUDNESS_DIM] < SILENCE_LOUDNESS_THRESHOLD] = SILENCE_ID
    return ids


def _utterance_duration(cfg: SynthConfig, useed: int) -> float:
    """Duration snapped to a whole number of latent frames."""
    lo, hi = cfg.duration_range_s
    r = RngState(useed).derive("duration")
    d = lo + r.uniform() * (hi - lo)
    n = max(2, int(np.floor(d * cfg.target_rate_hz + 0.5)))
    return n / cfg.target_rate_hz


def gen_utterance(cfg: SynthConfig, global_index: int):
    """One utterance as (emg [8,M], track at 86.16 Hz, phonemes at 86.16 Hz)."""
    useed = cfg.seed ^ global_index
    uid = f"utt_{global_index:04d}"
    duration = _utterance_duration(cfg, useed)
    latents = gen_latent_trajectories(duration, cfg.target_rate_hz, useed)
    emg = gen_emg_from_latent(
        latents, cfg.dependency, cfg.emg_rate_hz, cfg.noise_std, useed, cfg.target_rate_hz
    )
    track = ArticulatoryTrack(
        ema=latents[:N_EMA_DIMS],
        pitch=latents[PITCH_DIM],
        loudness=latents[LOUDNESS_DIM],
        frame_rate_hz=cfg.target_rate_hz,
        utterance_id=uid,
    )
    phonemes = PhonemeTrack(
        ids=phoneme_ids_from_latents(latents, cfg.target_rate_hz),
        vocab_size=PHONEME_VOCAB_SIZE,
        frame_rate_hz=cfg.target_rate_hz,
    )
    track = resample_track(track, TARGET_FRAME_RATE_HZ)
    phonemes = resample_track(phonemes, TARGET_FRAME_RATE_HZ)
    return emg, track, phonemes


def gen_corpus(cfg: SynthConfig, out_dir) -> dict:
    """Write the full train/val/test corpus plus ground_truth.json."""
    out_dir = Path(out_dir)
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    manifest_splits = {}
    g = 0
    for split in corpus.SPLITS:
        ids = []
        for _ in range(counts[split]):
            emg, track, phonemes = gen_utterance(cfg, g)
            corpus.save_utterance(
                out_dir / split / track.utterance_id,
                emg.astype(np.float32),
                cfg.emg_rate_hz,
                track,
                phonemes,
            )
            ids.append(track.utterance_id)
            g += 1
        manifest_splits[split] = ids
    truth = {
        "seed": cfg.seed,
        "noise_std": cfg.noise_std,
        "emg_rate_hz": cfg.emg_rate_hz,
        "latent_rate_hz": cfg.target_rate_hz,
        "target_frame_rate_hz": TARGET_FRAME_RATE_HZ,
        "dependency": cfg.dependency.to_json(),
        "ema_master_map": EMA_MASTER_MAP.tolist(),
        "velocity_weight": VELOCITY_WEIGHT,
        "carrier_band_hz": list(CARRIER_BAND_HZ),
        "splits": manifest_splits,
    }
    corpus.save_ground_truth(out_dir, truth)
    return truth
