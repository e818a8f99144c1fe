"""Surface-EMG preprocessing chain.

Per channel, in order: powerline notch cascade, drift high-pass, soft
de-spiking, and rational-rate resampling down to the articulatory frame
grid's base rate. All stages compute in float64 and hand back float32.

The two IIR stages run forward then backward (zero initial conditions both
ways) so the chain is zero-phase; edge transients are left in place and
callers discard them where they matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import butter, iirnotch, sosfilt, upfirdn

MAD_TO_SIGMA = 1.4826  # consistency constant for Gaussian data
MAD_FLOOR = 1e-8


@dataclass
class RawEmgRecording:
    """One utterance of multichannel EMG straight off the recorder."""

    samples: np.ndarray  # [n_channels, n_samples] float32
    sample_rate_hz: float
    utterance_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise ValueError("samples must be [n_channels, n_samples]")
        if self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError("recording needs at least one channel and one sample")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class PreprocessConfig:
    notch_freq_hz: float = 60.0
    notch_harmonics: int = 5
    notch_q: float = 30.0
    hp_cutoff_hz: float = 2.0
    hp_order: int = 4
    despike_window: int = 101
    despike_z_threshold: float = 5.0
    target_rate_hz: float = 689.0

    def __post_init__(self):
        if self.despike_window < 3 or self.despike_window % 2 == 0:
            raise ValueError("despike_window must be odd and >= 3")
        if self.target_rate_hz <= 0:
            raise ValueError("target_rate_hz must be positive")
        if self.notch_freq_hz <= 0 or self.notch_q <= 0 or self.notch_harmonics < 1:
            raise ValueError("notch parameters must be positive")
        if self.hp_cutoff_hz <= 0 or self.hp_order < 1:
            raise ValueError("high-pass parameters must be positive")


@dataclass
class PreprocessedEmg:
    """Filtered, de-spiked, resampled EMG ready for feature alignment."""

    samples: np.ndarray  # [n_channels, n_out] float32
    sample_rate_hz: float
    source_id: str

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


def _zero_phase(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward-backward pass with zero initial conditions both ways."""
    y = sosfilt(sos, x)
    return sosfilt(sos, y[::-1])[::-1]


def notch_filter(signal, rate_hz, freq_hz=60.0, q=30.0, n_harmonics=5) -> np.ndarray:
    """Zero-phase cascade of biquad notches at freq_hz and its harmonics.

    Harmonics at or above Nyquist are skipped; the fundamental must sit
    below Nyquist.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("notch_filter: empty signal")
    nyq = rate_hz / 2.0
    if freq_hz >= nyq:
        raise ValueError(f"notch frequency {freq_hz} Hz is at or above Nyquist {nyq} Hz")
    sections = []
    for k in range(1, n_harmonics + 1):
        f = freq_hz * k
        if f >= nyq:
            break
        b, a = iirnotch(f, q, fs=rate_hz)
        sections.append(np.hstack([b, a]))
    return _zero_phase(np.array(sections), x)


def highpass_filter(signal, rate_hz, cutoff_hz=2.0, order=4) -> np.ndarray:
    """Zero-phase Butterworth high-pass for DC offset and slow drift."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("highpass_filter: empty signal")
    if not 0 < cutoff_hz < rate_hz / 2.0:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, Nyquist)")
    if order < 1:
        raise ValueError("order must be >= 1")
    sos = butter(order, cutoff_hz, btype="highpass", fs=rate_hz, output="sos")
    return _zero_phase(sos, x)


def soft_despike(signal, window=101, z_threshold=5.0) -> np.ndarray:
    """Compress outliers toward a running median without hard clipping.

    A sample at robust z-score z = |x - m| / (1.4826 * MAD) above the
    threshold is mapped to m +/- sigma * (threshold + tanh(z - threshold)),
    so the worst excursion beyond the threshold is one extra sigma.
    """
    x = np.asarray(signal, dtype=np.float64)
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if x.size == 0:
        raise ValueError("soft_despike: empty signal")
    half = window // 2
    # reflect padding needs more than `half` samples; fall back to edge
    mode = "reflect" if x.size > half else "edge"
    padded = np.pad(x, half, mode=mode)
    win = sliding_window_view(padded, window)
    m = np.median(win, axis=1)
    mad = np.median(np.abs(win - m[:, None]), axis=1)
    sigma = MAD_TO_SIGMA * np.maximum(mad, MAD_FLOOR)
    dev = x - m
    z = np.abs(dev) / sigma
    compressed = m + np.sign(dev) * sigma * (z_threshold + np.tanh(z - z_threshold))
    return np.where(z <= z_threshold, x, compressed)


def _kaiser_sinc(up: int, down: int, beta: float = 8.6, zeros: int = 64) -> tuple:
    """Low-pass prototype on the upsampled grid, cut at min(from, to)/2."""
    c = min(1.0 / up, 1.0 / down)  # cutoff in cycles per upsampled sample
    half = int(np.ceil(zeros / c))
    n = np.arange(-half, half + 1)
    h = c * np.sinc(c * n) * np.kaiser(2 * half + 1, beta)
    return h * up, half


def resample(signal, from_rate_hz, to_rate_hz) -> np.ndarray:
    """Kaiser-windowed sinc polyphase resampling.

    Output length is round(n * to/from); output sample i estimates the
    underlying signal at time i/to_rate.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("resample: empty signal")
    if from_rate_hz <= 0 or to_rate_hz <= 0:
        raise ValueError("rates must be positive")
    if from_rate_hz == to_rate_hz:
        return x.copy()
    ratio = Fraction(to_rate_hz).limit_denominator(10**6) / Fraction(
        from_rate_hz
    ).limit_denominator(10**6)
    up, down = ratio.numerator, ratio.denominator
    h, half = _kaiser_sinc(up, down)
    n_out = int(np.floor(x.size * up / down + 0.5))
    # shift the kernel so output sample 0 lands on input time 0
    n_pre_pad = (down - half % down) % down
    n_pre_remove = (half + n_pre_pad) // down
    h = np.concatenate([np.zeros(n_pre_pad), h])
    y = upfirdn(h, x, up, down)
    y = y[n_pre_remove:]
    if y.size < n_out:
        raise AssertionError("resample produced fewer samples than the length law")
    return y[:n_out]


def preprocess_recording(rec: RawEmgRecording, cfg: PreprocessConfig) -> PreprocessedEmg:
    """Run the full chain over every channel of one recording."""
    if cfg.target_rate_hz > rec.sample_rate_hz:
        raise ValueError(
            f"target rate {cfg.target_rate_hz} Hz exceeds source rate {rec.sample_rate_hz} Hz"
        )
    out = []
    for c in range(rec.n_channels):
        try:
            x = rec.samples[c].astype(np.float64)
            x = notch_filter(x, rec.sample_rate_hz, cfg.notch_freq_hz, cfg.notch_q, cfg.notch_harmonics)
            x = highpass_filter(x, rec.sample_rate_hz, cfg.hp_cutoff_hz, cfg.hp_order)
            x = soft_despike(x, cfg.despike_window, cfg.despike_z_threshold)
            x = resample(x, rec.sample_rate_hz, cfg.target_rate_hz)
        except ValueError as e:
            raise ValueError(f"channel {c}: {e}") from e
        out.append(x.astype(np.float32))
    return PreprocessedEmg(
        samples=np.stack(out),
        sample_rate_hz=cfg.target_rate_hz,
        source_id=rec.utterance_id,
    )
