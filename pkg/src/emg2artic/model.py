"""EMG encoder: three stride-2 ResNet conv blocks, a pre-norm Transformer,
and four linear predictor heads, with the weighted multi-task loss.

Batched sequences are right-padded. The invariant maintained throughout
encode is that padded frames stay exactly zero: every op that can smear
values into the padding (conv bias, norm shifts, positional encoding,
attention, feed-forward) is followed by a mask multiply, and attention
additionally masks padded keys, so the valid frames of a padded batch
match single-sequence processing to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core as nc
from .feature_targets import N_EMA_DIMS, align_lengths
from .nn_core import Tensor

FFN_MULT = 4  # feed-forward inner width relative to hidden


@dataclass
class EncoderConfig:
    n_emg_channels: int = 8
    hidden_dim: int = 64
    n_resnet_blocks: int = 3
    conv_kernel: int = 3
    conv_stride: int = 2
    n_transformer_layers: int = 2
    n_heads: int = 4
    phoneme_vocab: int = 41

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if min(self.n_emg_channels, self.hidden_dim, self.n_resnet_blocks,
               self.n_transformer_layers, self.n_heads, self.phoneme_vocab) < 1:
            raise ValueError("config counts must be positive")

    @property
    def downsample_factor(self) -> int:
        return self.conv_stride**self.n_resnet_blocks

    @property
    def min_input_length(self) -> int:
        return self.downsample_factor


def full_scale_config() -> EncoderConfig:
    return EncoderConfig(hidden_dim=768, n_transformer_layers=6, n_heads=8)


@dataclass
class LossWeights:
    alpha_pitch: float = 0.5
    alpha_loud: float = 1.0
    alpha_phon: float = 0.5

    def __post_init__(self):
        if min(self.alpha_pitch, self.alpha_loud, self.alpha_phon) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ModelOutput:
    ema: Tensor  # [..., T_f, 12]
    pitch: Tensor  # [..., T_f, 1]
    loudness: Tensor  # [..., T_f, 1]
    phoneme_logits: Tensor  # [..., T_f, V]


@dataclass
class ModelParams:
    params: dict  # name -> Tensor, canonical serialization order
    buffers: dict  # name -> np.ndarray (batch-norm running stats)

    def trainable(self) -> dict:
        return {k: t.data for k, t in self.params.items()}

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def grads(self) -> dict:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        }


def init_params(cfg: EncoderConfig, seed: int) -> ModelParams:
    """Kaiming-uniform weights, zero biases, unit/zero norm parameters.

    Insertion order here is the canonical checkpoint order.
    """
    root = nc.RngState(seed)
    params: dict = {}
    buffers: dict = {}

    def kaiming(name, shape, fan_in):
        params[name] = Tensor(
            nc.kaiming_uniform(root.derive(name), shape, fan_in), requires_grad=True
        )

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def norm_pair(prefix, dim):
        params[f"{prefix}.gamma"] = Tensor(np.ones(dim), requires_grad=True)
        params[f"{prefix}.beta"] = Tensor(np.zeros(dim), requires_grad=True)

    h, k = cfg.hidden_dim, cfg.conv_kernel
    c_in = cfg.n_emg_channels
    for i in range(cfg.n_resnet_blocks):
        p = f"block{i}"
        kaiming(f"{p}.conv1.W", (k, c_in, h), k * c_in)
        zeros(f"{p}.conv1.b", h)
        norm_pair(f"{p}.bn1", h)
        kaiming(f"{p}.conv2.W", (k, h, h), k * h)
        zeros(f"{p}.conv2.b", h)
        norm_pair(f"{p}.bn2", h)
        kaiming(f"{p}.proj.W", (1, c_in, h), c_in)
        zeros(f"{p}.proj.b", h)
        for bn in ("bn1", "bn2"):
            buffers[f"{p}.{bn}.running_mean"] = np.zeros(h)
            buffers[f"{p}.{bn}.running_var"] = np.ones(h)
        c_in = h
    for j in range(cfg.n_transformer_layers):
        p = f"layer{j}"
        norm_pair(f"{p}.ln1", h)
        for w in ("Wq", "Wk", "Wv", "Wo"):
            kaiming(f"{p}.attn.{w}", (h, h), h)
        norm_pair(f"{p}.ln2", h)
        kaiming(f"{p}.ffn.W1", (h, FFN_MULT * h), h)
        zeros(f"{p}.ffn.b1", FFN_MULT * h)
        kaiming(f"{p}.ffn.W2", (FFN_MULT * h, h), FFN_MULT * h)
        zeros(f"{p}.ffn.b2", h)
    norm_pair("final_ln", h)
    for name, width in (
        ("head_ema", N_EMA_DIMS),
        ("head_pitch", 1),
        ("head_loud", 1),
        ("head_phon", cfg.phoneme_vocab),
    ):
        kaiming(f"{name}.W", (h, width), h)
        zeros(f"{name}.b", width)
    return ModelParams(params=params, buffers=buffers)


def frame_length(input_length: int, n_blocks: int = 3) -> int:
    """Output frame count: ceil-halving once per stride-2 block."""
    n = int(input_length)
    for _ in range(n_blocks):
        n = (n + 1) // 2
    return n


def _length_mask(lengths: np.ndarray, t_max: int) -> np.ndarray:
    """[B, T] float mask, 1.0 on valid frames."""
    return (np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


def encode_batch(
    emg: np.ndarray,
    lengths: np.ndarray,
    mp: ModelParams,
    cfg: EncoderConfig,
    training: bool = False,
):
    """Encode a padded batch [B, T, C] -> (hidden [B, T_f, h], frame_lengths).

    Padded input samples must already be zero.
    """
    emg = np.asarray(emg, dtype=np.float64)
    if emg.ndim != 3:
        raise ValueError("encode_batch expects [B, T, C]")
    if emg.shape[2] != cfg.n_emg_channels:
        raise ValueError(
            f"expected {cfg.n_emg_channels} channels, got {emg.shape[2]}"
        )
    lengths = np.asarray(lengths, dtype=np.int64)
    if int(lengths.min()) < cfg.min_input_length:
        raise ValueError(
            f"sequence too short: need >= {cfg.min_input_length} samples"
        )
    P = mp.params
    x = Tensor(emg)
    cur_len = lengths
    for i in range(cfg.n_resnet_blocks):
        p = f"block{i}"
        new_len = (cur_len + 1) // 2
        m = Tensor(_length_mask(new_len, frame_length(emg.shape[1], i + 1))[:, :, None])
        y = nc.conv1d(x, P[f"{p}.conv1.W"], P[f"{p}.conv1.b"], cfg.conv_stride, 1)
        y = nc.mul(y, m)
        y = nc.batch_norm(
            y, P[f"{p}.bn1.gamma"], P[f"{p}.bn1.beta"],
            mp.buffers[f"{p}.bn1.running_mean"], mp.buffers[f"{p}.bn1.running_var"],
            training=training, mask=m.data,
        )
        y = nc.mul(y, m)
        y = nc.relu(y)
        y = nc.conv1d(y, P[f"{p}.conv2.W"], P[f"{p}.conv2.b"], 1, 1)
        y = nc.mul(y, m)
        y = nc.batch_norm(
            y, P[f"{p}.bn2.gamma"], P[f"{p}.bn2.beta"],
            mp.buffers[f"{p}.bn2.running_mean"], mp.buffers[f"{p}.bn2.running_var"],
            training=training, mask=m.data,
        )
        y = nc.mul(y, m)
        sc = nc.conv1d(x, P[f"{p}.proj.W"], P[f"{p}.proj.b"], cfg.conv_stride, 0)
        sc = nc.mul(sc, m)
        x = nc.relu(nc.add(y, sc))
        cur_len = new_len
    t_f = x.shape[1]
    frame_mask = _length_mask(cur_len, t_f)
    m3 = Tensor(frame_mask[:, :, None])
    pe = nc.positional_encoding(t_f, cfg.hidden_dim)
    x = nc.mul(nc.add(x, Tensor(pe[None])), m3)
    for j in range(cfg.n_transformer_layers):
        p = f"layer{j}"
        a = nc.layer_norm(x, P[f"{p}.ln1.gamma"], P[f"{p}.ln1.beta"])
        a = nc.mul(a, m3)
        a = nc.multi_head_attention(
            a, P[f"{p}.attn.Wq"], P[f"{p}.attn.Wk"], P[f"{p}.attn.Wv"],
            P[f"{p}.attn.Wo"], cfg.n_heads, key_mask=frame_mask,
        )
        x = nc.add(x, nc.mul(a, m3))
        b = nc.layer_norm(x, P[f"{p}.ln2.gamma"], P[f"{p}.ln2.beta"])
        b = nc.mul(b, m3)
        b = nc.linear(b, P[f"{p}.ffn.W1"], P[f"{p}.ffn.b1"])
        b = nc.relu(b)
        b = nc.linear(b, P[f"{p}.ffn.W2"], P[f"{p}.ffn.b2"])
        x = nc.add(x, nc.mul(b, m3))
    x = nc.layer_norm(x, P["final_ln.gamma"], P["final_ln.beta"])
    x = nc.mul(x, m3)
    return x, cur_len


def encode(emg, mp: ModelParams, cfg: EncoderConfig, training: bool = False) -> Tensor:
    """Encode one sequence [T, C] -> hidden [T_f, hidden_dim]."""
    emg = np.asarray(emg, dtype=np.float64)
    if emg.ndim != 2:
        raise ValueError("encode expects [T, C]")
    hidden, _ = encode_batch(emg[None], np.array([emg.shape[0]]), mp, cfg, training)
    return nc.reshape(hidden, hidden.shape[1:])


def predict(hidden: Tensor, mp: ModelParams) -> ModelOutput:
    """Apply the four per-frame linear heads."""
    P = mp.params
    return ModelOutput(
        ema=nc.linear(hidden, P["head_ema.W"], P["head_ema.b"]),
        pitch=nc.linear(hidden, P["head_pitch.W"], P["head_pitch.b"]),
        loudness=nc.linear(hidden, P["head_loud.W"], P["head_loud.b"]),
        phoneme_logits=nc.linear(hidden, P["head_phon.W"], P["head_phon.b"]),
    )


def total_loss(
    out: ModelOutput,
    ema_target: np.ndarray,
    pitch_target: np.ndarray,
    loud_target: np.ndarray,
    phoneme_target: np.ndarray,
    weights: LossWeights,
    mask: np.ndarray | None = None,
):
    """Weighted multi-task objective.

    total = L_EMA + alpha_pitch * L_pitch + alpha_loud * L_loud
            + alpha_phon * L_phon
    Terms with zero weight are skipped entirely, so their heads receive no
    gradient. Returns (total Tensor, breakdown dict of floats).
    """
    l_ema = nc.mse_loss(out.ema, ema_target, mask=mask)
    total = l_ema
    breakdown = {"l_ema": float(l_ema.data)}
    pitch_pred = nc.reshape(out.pitch, out.pitch.shape[:-1])
    loud_pred = nc.reshape(out.loudness, out.loudness.shape[:-1])
    if weights.alpha_pitch > 0:
        l_pitch = nc.mse_loss(pitch_pred, pitch_target, mask=mask)
        total = nc.add(total, nc.mul(l_pitch, Tensor(weights.alpha_pitch)))
        breakdown["l_pitch"] = float(l_pitch.data)
    else:
        breakdown["l_pitch"] = float(
            nc.mse_loss(Tensor(pitch_pred.data), pitch_target, mask=mask).data
        )
    if weights.alpha_loud > 0:
        l_loud = nc.mse_loss(loud_pred, loud_target, mask=mask)
        total = nc.add(total, nc.mul(l_loud, Tensor(weights.alpha_loud)))
        breakdown["l_loud"] = float(l_loud.data)
    else:
        breakdown["l_loud"] = float(
            nc.mse_loss(Tensor(loud_pred.data), loud_target, mask=mask).data
        )
    if weights.alpha_phon > 0:
        l_phon = nc.cross_entropy_loss(out.phoneme_logits, phoneme_target, mask=mask)
        total = nc.add(total, nc.mul(l_phon, Tensor(weights.alpha_phon)))
        breakdown["l_phon"] = float(l_phon.data)
    else:
        breakdown["l_phon"] = float(
            nc.cross_entropy_loss(
                Tensor(out.phoneme_logits.data), phoneme_target, mask=mask
            ).data
        )
    breakdown["l_total"] = float(total.data)
    return total, breakdown


def combine_losses(l_ema: float, l_pitch: float, l_loud: float, l_phon: float,
                   weights: LossWeights) -> float:
    """The same weighted sum on already-computed component values."""
    return (
        l_ema
        + weights.alpha_pitch * l_pitch
        + weights.alpha_loud * l_loud
        + weights.alpha_phon * l_phon
    )


def forward_batch(
    emg: np.ndarray,
    emg_lengths: np.ndarray,
    ema_target: np.ndarray,
    pitch_target: np.ndarray,
    loud_target: np.ndarray,
    phoneme_target: np.ndarray,
    target_lengths: np.ndarray,
    mp: ModelParams,
    cfg: EncoderConfig,
    weights: LossWeights,
    training: bool = False,
):
    """Encode, predict, align lengths, and compute the masked loss.

    Targets are padded to a common frame axis at least as long as the
    model's frame count. Per sequence, the usable length is
    min(model frames, target frames); everything beyond is masked out.
    """
    hidden, frame_lengths = encode_batch(emg, emg_lengths, mp, cfg, training)
    out = predict(hidden, mp)
    t_f = hidden.shape[1]
    usable = np.array(
        [align_lengths(int(f), int(t)) for f, t in zip(frame_lengths, target_lengths)]
    )
    mask = _length_mask(usable, t_f)

    def fit(arr, extra_dims):
        # pad or crop the target frame axis to the model's frame axis
        arr = np.asarray(arr)
        n = arr.shape[1]
        if n < t_f:
            pad = [(0, 0), (0, t_f - n)] + [(0, 0)] * extra_dims
            return np.pad(arr, pad)
        return arr[:, :t_f]

    total, breakdown = total_loss(
        out,
        fit(ema_target, 1),
        fit(pitch_target, 0),
        fit(loud_target, 0),
        fit(phoneme_target, 0),
        weights,
        mask=mask,
    )
    return total, breakdown, out, usable


def forward_backward(
    emg,
    emg_lengths,
    ema_target,
    pitch_target,
    loud_target,
    phoneme_target,
    target_lengths,
    mp: ModelParams,
    cfg: EncoderConfig,
    weights: LossWeights,
    training: bool = True,
):
    """One training step's forward and gradient computation.

    Returns (breakdown, grads). Raises on a non-finite loss.
    """
    mp.zero_grads()
    total, breakdown, _, _ = forward_batch(
        emg, emg_lengths, ema_target, pitch_target, loud_target,
        phoneme_target, target_lengths, mp, cfg, weights, training=training,
    )
    if not np.isfinite(breakdown["l_total"]):
        raise FloatingPointError(f"non-finite loss: {breakdown}")
    total.backward()
    return breakdown, mp.grads()
