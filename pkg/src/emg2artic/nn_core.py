"""Dense-tensor numerical core with reverse-mode differentiation.

Provides the small set of primitives the EMG encoder needs: linear maps,
strided 1-D convolution, batch/layer normalization, attention building
blocks, the two losses, and a decoupled-weight-decay Adam step. Forward
math runs in float64 so finite-difference gradient checks stay tight;
serialization stores float32.

Every differentiable operation here carries a hand-derived backward pass;
the test suite checks each one against central finite differences.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# ---------------------------------------------------------------------------
# Deterministic RNG (SplitMix64 core)
# ---------------------------------------------------------------------------

_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


def mix64(z: int) -> int:
    """SplitMix64 finalizer: one well-mixed 64-bit word from ``z``."""
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of a string; stable across processes (unlike hash())."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class RngState:
    """Counter-based SplitMix64 generator.

    Identical seeds yield identical draw sequences, independent of platform
    or of how draws are split into calls of different sizes.
    """

    algorithm = "splitmix64"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            z = idx * np.uint64(_GAMMA) + np.uint64(self.seed)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            return z ^ (z >> np.uint64(31))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform float64 in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normal via Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - np.asarray(self.uniform(m))  # (0, 1]
        u2 = np.asarray(self.uniform(m))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        """Uniform integers in [0, high)."""
        u = self.uniform(size if size is not None else 1)
        out = np.minimum((np.asarray(u) * high).astype(np.int64), high - 1)
        if size is None:
            return int(out[0])
        return out

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")

    def derive(self, tag: str) -> "RngState":
        """Independent substream keyed by a string tag."""
        return RngState(mix64(self.seed ^ fnv1a64(tag)))


# ---------------------------------------------------------------------------
# Tensor and autodiff graph
# ---------------------------------------------------------------------------

_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus an optional gradient tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor (typically a scalar loss)."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape).copy()
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # small operator surface used to compose larger blocks
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Create an op output, attaching the tape entry only when needed."""
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise / structural primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), backward)


def crop(x: Tensor, index) -> Tensor:
    """Basic (non-repeating) slice of a tensor, e.g. x[:, :n]."""
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            x._accumulate(full)

    return _make(x.data[index], (x,), backward)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); subgradient at 0 is taken as 0."""
    x = _as_tensor(x)
    keep = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    return _make(np.where(keep, x.data, 0.0), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exp-normalization with max subtraction for overflow safety."""
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = np.sum(g * y, axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# Network layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y[..., j] = sum_i x[..., i] W[i, j] + b[j]."""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(
            f"linear shape mismatch: x{x.shape} W{W.shape} b{b.shape}"
        )
    return add(matmul(x, W), b)


def conv1d(x: Tensor, W: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded strided cross-correlation along the time axis.

    x: [T, C_in] or [B, T, C_in]; W: [k, C_in, C_out]; b: [C_out].
    Output length is floor((T + 2*padding - k) / stride) + 1.
    """
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if stride < 1 or padding < 0:
        raise ValueError("conv1d: stride must be >= 1 and padding >= 0")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d expects [T,C] or [B,T,C], got shape {x.shape}")
    k, c_in, c_out = W.shape
    B, T, C = xd.shape
    if C != c_in:
        raise ValueError(f"conv1d channel mismatch: input {C}, kernel {c_in}")
    if T + 2 * padding < k:
        raise ValueError(f"conv1d: length {T} too short for kernel {k} with padding {padding}")
    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0))) if padding else xd
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # [B, T_out, C_in, k]
    t_out = (T + 2 * padding - k) // stride + 1
    win = win[:, :t_out]
    y = np.tensordot(win, W.data, axes=[(3, 2), (0, 1)]) + b.data

    def backward(g):
        if squeeze:
            g = g[None]
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 1)))
        if W.requires_grad:
            gw = np.tensordot(win, g, axes=[(0, 1), (0, 1)])  # [C_in, k, C_out]
            W._accumulate(gw.transpose(1, 0, 2))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + stride * t_out : stride] += np.matmul(g, W.data[j].T)
            gx = gxp[:, padding : padding + T] if padding else gxp
            x._accumulate(gx[0] if squeeze else gx)

    out_data = y[0] if squeeze else y
    return _make(out_data, (x, W, b), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Per-channel normalization of x: [B, T, C].

    Training mode normalizes by batch statistics over the (B, T) axes and
    updates the running buffers in place (biased variance throughout);
    inference mode normalizes by the running buffers. ``mask`` ([B, T, 1],
    1.0 at valid frames) restricts the statistics to valid frames so padding
    never leaks into them.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 3:
        raise ValueError(f"batch_norm expects [B,T,C], got shape {x.shape}")
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,) or running_mean.shape != (C,):
        raise ValueError("batch_norm: per-channel parameter shape mismatch")

    if training:
        if mask is None:
            n = float(x.shape[0] * x.shape[1])
            mean = x.data.mean(axis=(0, 1))
            var = x.data.var(axis=(0, 1))
        else:
            n = float(mask.sum())
            mean = (x.data * mask).sum(axis=(0, 1)) / n
            var = (((x.data - mean) ** 2) * mask).sum(axis=(0, 1)) / n
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 1)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 1)))
        if x.requires_grad:
            if not training:
                x._accumulate(g * (gamma.data * inv))
                return
            s1 = g.sum(axis=(0, 1))
            s2 = (g * xhat).sum(axis=(0, 1))
            m = 1.0 if mask is None else mask
            gx = gamma.data * inv * (g - m * ((s1 + xhat * s2) / n))
            x._accumulate(gx)

    return _make(y, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last (feature) axis, per position."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm parameter shape mismatch for d={d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.data
            gx = inv * (
                gg
                - gg.mean(axis=-1, keepdims=True)
                - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(gx)

    return _make(y, (x, gamma, beta), backward)


def multi_head_attention(
    x: Tensor,
    Wq: Tensor,
    Wk: Tensor,
    Wv: Tensor,
    Wo: Tensor,
    n_heads: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Bidirectional scaled dot-product self-attention.

    x: [T, d] or [B, T, d]; all projection matrices [d, d]; no causal mask.
    ``key_mask`` ([B, T], 1.0 at valid positions) excludes padded keys.
    """
    x = _as_tensor(x)
    d = x.shape[-1]
    if d % n_heads != 0:
        raise ValueError(f"hidden dim {d} not divisible by n_heads {n_heads}")
    dh = d // n_heads
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + x.shape) if squeeze else x
    B, T, _ = xb.shape

    def split_heads(t):
        return transpose(reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    q = split_heads(matmul(xb, Wq))
    k = split_heads(matmul(xb, Wk))
    v = split_heads(matmul(xb, Wv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), Tensor(1.0 / np.sqrt(dh)))
    if key_mask is not None:
        bias = np.where(key_mask[:, None, None, :] > 0, 0.0, -1e30)
        scores = add(scores, Tensor(bias))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)  # [B, H, T, dh]
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    out = matmul(merged, Wo)
    return reshape(out, (T, d)) if squeeze else out


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table [T, d]: sin on even dims, cos on odd dims."""
    if d % 2 != 0:
        raise ValueError(f"positional_encoding needs even d, got {d}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    inv_freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    angles = pos * inv_freq
    pe = np.empty((T, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared difference over all elements (or masked frames)."""
    pred = _as_tensor(pred)
    tgt = np.asarray(target, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    if mask is None:
        count = diff.size
        loss = float(np.sum(diff * diff)) / count
        scaled = diff
    else:
        per_elem = diff.shape[-1] if diff.ndim == mask.ndim + 1 else 1
        m = mask if per_elem == 1 else mask[..., None]
        count = float(mask.sum()) * per_elem
        scaled = diff * m
        loss = float(np.sum(scaled * diff)) / count

    def backward(g):
        if pred.requires_grad:
            pred._accumulate((2.0 * g / count) * scaled)

    return _make(loss, (pred,), backward)


def cross_entropy_loss(logits: Tensor, targets, mask: np.ndarray | None = None) -> Tensor:
    """Mean of -log softmax(logits)[target] over frames.

    logits: [..., V]; targets: integer ids of the leading shape.
    """
    logits = _as_tensor(logits)
    ids = np.asarray(targets)
    V = logits.shape[-1]
    if ids.shape != logits.shape[:-1]:
        raise ValueError(f"cross_entropy shape mismatch: {ids.shape} vs {logits.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise ValueError(f"cross_entropy target out of range for vocab {V}")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    lse = np.log(e.sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(z, ids[..., None], axis=-1)[..., 0]
    nll = lse - picked
    if mask is None:
        count = float(nll.size)
        loss = float(nll.sum()) / count
    else:
        count = float(mask.sum())
        loss = float((nll * mask).sum()) / count

    def backward(g):
        if logits.requires_grad:
            p = e / e.sum(axis=-1, keepdims=True)
            onehot = np.zeros_like(p)
            np.put_along_axis(onehot, ids[..., None], 1.0, axis=-1)
            gz = (p - onehot) * (g / count)
            if mask is not None:
                gz = gz * mask[..., None]
            logits._accumulate(gz)

    return _make(loss, (logits,), backward)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamWState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One AdamW update, in place: p -= lr * (m_hat/(sqrt(v_hat)+eps) + wd*p)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def kaiming_uniform(rng: RngState, shape: tuple, fan_in: int) -> np.ndarray:
    """Uniform(-b, b) with b = sqrt(6 / fan_in) (ReLU gain)."""
    bound = np.sqrt(6.0 / fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


# ---------------------------------------------------------------------------
# Parameter serialization: weights.bin + manifest.json
# ---------------------------------------------------------------------------

WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.json"


def save_params(entries: dict[str, np.ndarray], out_dir) -> None:
    """Write tensors as concatenated little-endian float32 plus a manifest.

    The manifest lists name, shape, and byte offset per parameter in the
    order given; that order is the canonical one for the checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    with open(out_dir / WEIGHTS_FILE, "wb") as fh:
        for name, arr in entries.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(a.tobytes())
            manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    with open(out_dir / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_params(in_dir) -> dict[str, np.ndarray]:
    """Inverse of save_params; validates shapes/offsets against the payload."""
    in_dir = Path(in_dir)
    with open(in_dir / MANIFEST_FILE) as fh:
        manifest = json.load(fh)
    blob = (in_dir / WEIGHTS_FILE).read_bytes()
    out: dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        if offset != expected_offset:
            raise ValueError(f"manifest offset mismatch at '{entry['name']}'")
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise ValueError(f"weights payload too short for '{entry['name']}'")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
        expected_offset = offset + nbytes
    if expected_offset != len(blob):
        raise ValueError("weights payload longer than manifest describes")
    return out
