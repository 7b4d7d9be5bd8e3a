"""Forward passes of the map encoder, scene-map cross-attention and decoder.

Everything is plain numpy and dtype-preserving: float64 inputs give float64
results (used by the oracle tests), the float32 defaults keep the full
Swin-S-sized pyramid tractable on a CPU.  There is no training here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import resize_bilinear

N_LEVELS = 4
CLIP_FRAMES = 16
MAP_CHANNELS = 2
MAP_SIZE = 128
OUT_SIZE = 224
N_HEADS = 2
LEAKY_SLOPE = 0.01

# (out_channels, kernel) for the four map-encoder layers
ENCODER_LAYERS = ((10, 5), (20, 3), (10, 3), (1, 1))


@dataclass(frozen=True)
class PyramidConfig:
    """Scene-feature pyramid geometry; the default mimics Swin-S on 16x224x224 clips."""
    channels: tuple[int, ...] = (96, 192, 384, 768)
    base_hw: int = 56
    frames: int = CLIP_FRAMES

    def __post_init__(self):
        if len(self.channels) != N_LEVELS:
            raise ValueError(f"need {N_LEVELS} pyramid levels")
        if self.base_hw % 2 ** (N_LEVELS - 1):
            raise ValueError("base_hw must halve cleanly across the pyramid")
        if any(c % N_HEADS for c in self.channels):
            raise ValueError(f"channels must be divisible by {N_HEADS} heads")
        if self.frames % 2 ** N_LEVELS:
            raise ValueError("frames must survive four temporal halvings")

    def shape(self, level: int) -> tuple[int, int, int, int]:
        hw = self.base_hw >> (level - 1)
        return (self.channels[level - 1], self.frames, hw, hw)

    @property
    def shapes(self) -> list[tuple[int, int, int, int]]:
        return [self.shape(n) for n in range(1, N_LEVELS + 1)]


@dataclass
class FeatureTensor:
    level: int
    data: np.ndarray      # (C, T, h, w)

    @property
    def shape(self):
        return self.data.shape


def synthetic_scene_features(seed: int, config: PyramidConfig = PyramidConfig(),
                             dtype=np.float32) -> list[FeatureTensor]:
    """Seeded standard-normal stand-ins for the video backbone outputs."""
    rng = np.random.default_rng(seed)
    return [FeatureTensor(n, rng.standard_normal(config.shape(n), dtype=np.float32).astype(dtype))
            for n in range(1, N_LEVELS + 1)]


# -- weights ---------------------------------------------------------------

@dataclass
class MapEncoderWeights:
    kernels: list[np.ndarray]     # (out, in, k, k)
    biases: list[np.ndarray]
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        c_in = MAP_CHANNELS
        for (c_out, k), w, b in zip(ENCODER_LAYERS, self.kernels, self.biases, strict=True):
            if w.shape != (c_out, c_in, k, k) or b.shape != (c_out,):
                raise ValueError(f"encoder layer shape {w.shape} != {(c_out, c_in, k, k)}")
            c_in = c_out


@dataclass
class AttentionParams:
    wq: np.ndarray    # (heads, c, d_head)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray    # (heads * d_head, c)

    def __post_init__(self):
        h, c, d = self.wq.shape
        if d * h != c or self.wk.shape != self.wq.shape or self.wv.shape != self.wq.shape:
            raise ValueError("attention projections must be (heads, c, c / heads)")
        if self.wo.shape != (h * d, c):
            raise ValueError("output projection must be (heads * d_head, c)")
        for w in (self.wq, self.wk, self.wv, self.wo):
            if not np.all(np.isfinite(w)):
                raise ValueError("attention weights must be finite")

    @property
    def n_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.wq.shape[2]


@dataclass
class DecoderWeights:
    kernels: list[np.ndarray]     # (out, in, 2, 3, 3)
    biases: list[np.ndarray]


@dataclass
class ModelWeights:
    encoder: MapEncoderWeights
    attention: dict[int, AttentionParams]
    decoder: DecoderWeights
    config: PyramidConfig = field(default_factory=PyramidConfig)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.encoder.kernels, self.encoder.biases)):
            out[f"encoder.conv{i}.weight"] = w
            out[f"encoder.conv{i}.bias"] = b
        for n, p in sorted(self.attention.items()):
            for name in ("wq", "wk", "wv", "wo"):
                out[f"attn{n}.{name}"] = getattr(p, name)
        for i, (w, b) in enumerate(zip(self.decoder.kernels, self.decoder.biases)):
            out[f"decoder.block{i}.weight"] = w
            out[f"decoder.block{i}.bias"] = b
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray], config: PyramidConfig) -> "ModelWeights":
        enc = MapEncoderWeights([t[f"encoder.conv{i}.weight"] for i in range(4)],
                                [t[f"encoder.conv{i}.bias"] for i in range(4)])
        attn = {}
        for n in range(1, N_LEVELS + 1):
            if f"attn{n}.wq" in t:
                attn[n] = AttentionParams(*(t[f"attn{n}.{k}"] for k in ("wq", "wk", "wv", "wo")))
        dec = DecoderWeights([t[f"decoder.block{i}.weight"] for i in range(4)],
                             [t[f"decoder.block{i}.bias"] for i in range(4)])
        return cls(enc, attn, dec, config)


def decoder_shapes(config: PyramidConfig) -> list[tuple[int, int]]:
    """(in, out) channels per decoder block, deepest level first."""
    c = config.channels
    x = c[3]
    shapes = []
    for k, skip in enumerate((c[2], c[1], c[0], None)):
        c_in = x + (skip or 0)
        c_out = 1 if skip is None else x // 2
        shapes.append((c_in, c_out))
        x = c_out
    return shapes


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_weights(seed: int, config: PyramidConfig = PyramidConfig(), dtype=np.float32) -> ModelWeights:
    """Seeded uniform(+-1/sqrt(fan_in)) initialization of every parameter."""
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    c_in = MAP_CHANNELS
    for c_out, k in ENCODER_LAYERS:
        fan = c_in * k * k
        kernels.append(_uniform(rng, (c_out, c_in, k, k), fan, dtype))
        biases.append(_uniform(rng, (c_out,), fan, dtype))
        c_in = c_out
    attention = {}
    for n, c in enumerate(config.channels, start=1):
        d = c // N_HEADS
        attention[n] = AttentionParams(
            *(_uniform(rng, (N_HEADS, c, d), c, dtype) for _ in range(3)),
            _uniform(rng, (N_HEADS * d, c), N_HEADS * d, dtype),
        )
    dk, db = [], []
    for c_in, c_out in decoder_shapes(config):
        fan = c_in * 2 * 3 * 3
        dk.append(_uniform(rng, (c_out, c_in, 2, 3, 3), fan, dtype))
        db.append(_uniform(rng, (c_out,), fan, dtype))
    return ModelWeights(MapEncoderWeights(kernels, biases), attention, DecoderWeights(dk, db), config)


def zero_like(weights: ModelWeights) -> ModelWeights:
    t = {k: np.zeros_like(v) for k, v in weights.tensors().items()}
    return ModelWeights.from_tensors(t, weights.config)


def save_checkpoint(weights: ModelWeights, path) -> None:
    """Little-endian float32 blob plus a JSON manifest of name -> shape, byte offset."""
    path = Path(path)
    manifest = {"config": {"channels": list(weights.config.channels), "base_hw": weights.config.base_hw,
                           "frames": weights.config.frames}, "tensors": {}}
    offset = 0
    with open(path, "wb") as fh:
        for name, t in weights.tensors().items():
            blob = np.ascontiguousarray(t, dtype="<f4").tobytes()
            manifest["tensors"][name] = {"shape": list(t.shape), "offset": offset}
            fh.write(blob)
            offset += len(blob)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_checkpoint(path) -> ModelWeights:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    raw = path.read_bytes()
    tensors = {}
    for name, entry in manifest["tensors"].items():
        n = int(np.prod(entry["shape"]))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=entry["offset"]).reshape(entry["shape"]).astype(np.float32)
    c = manifest["config"]
    return ModelWeights.from_tensors(tensors, PyramidConfig(tuple(c["channels"]), c["base_hw"], c["frames"]))


# -- map encoder -----------------------------------------------------------

def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def conv2d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 2-D convolution (cross-correlation) with zero same-padding."""
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"expected {c_in} input channels, got {x.shape[0]}")
    _, H, W = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((c_out, H, W), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(w[:, :, i, j], xp[:, i:i + H, j:j + W], axes=(1, 0))
    return out + b[:, None, None]


def map_encoder_forward(patch, weights: MapEncoderWeights) -> np.ndarray:
    """Four conv + leaky-ReLU stages; (2, H, W) map/route patch -> (1, H, W)."""
    x = np.asarray(getattr(patch, "channels", patch))
    if x.ndim != 3 or x.shape[0] != MAP_CHANNELS:
        raise ValueError(f"map patch must be ({MAP_CHANNELS}, H, W), got {x.shape}")
    x = x.astype(np.result_type(x.dtype, weights.kernels[0].dtype), copy=False)
    for w, b in zip(weights.kernels, weights.biases):
        x = leaky_relu(conv2d_same(x, w, b), weights.slope)
    return x


def align_map_features(feat2d: np.ndarray, shapes) -> list[np.ndarray]:
    """Bilinear resize to each level's (h, w), then replicate over channels and time."""
    f = np.asarray(feat2d)
    if f.ndim != 3 or f.shape[0] != 1:
        raise ValueError(f"map feature must be (1, H, W), got {f.shape}")
    out = []
    for C, T, h, w in shapes:
        plane = resize_bilinear(f[0], h, w).astype(f.dtype, copy=False)
        out.append(np.broadcast_to(plane, (C, T, h, w)))
    return out


# -- cross-attention -------------------------------------------------------

def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(f_v: np.ndarray, f_m: np.ndarray, params: AttentionParams, head: int) -> np.ndarray:
    """Full (L, L) attention matrix of one head; small inputs only."""
    c = f_v.shape[0]
    xv = f_v.reshape(c, -1).T
    xm = f_m.reshape(c, -1).T
    q = xm @ params.wq[head]
    k = xv @ params.wk[head]
    return softmax_rows(q @ k.T / math.sqrt(params.d_head))


def cross_attention_forward(f_v: np.ndarray, f_m: np.ndarray, params: AttentionParams,
                            chunk: int = 1024) -> np.ndarray:
    """Map features query the visual features: softmax(Q K^T / sqrt(d)) V per head.

    Inputs are (C, T, h, w), flattened to L = T h w tokens of width C.  Heads
    are concatenated and projected back to C; queries run in chunks so the
    (L, L) logits never materialize for large levels.
    """
    f_v = np.asarray(f_v)
    f_m = np.asarray(f_m)
    if f_v.shape != f_m.shape:
        raise ValueError(f"shape mismatch {f_v.shape} vs {f_m.shape}")
    c = f_v.shape[0]
    if params.wq.shape[1] != c:
        raise ValueError(f"attention params expect {params.wq.shape[1]} channels, features have {c}")
    dtype = np.result_type(f_v.dtype, params.wq.dtype)
    xv = f_v.reshape(c, -1).T.astype(dtype, copy=False)
    xm = f_m.reshape(c, -1).T.astype(dtype, copy=False)
    L = xv.shape[0]
    scale = 1.0 / math.sqrt(params.d_head)
    heads = []
    for h in range(params.n_heads):
        k = xv @ params.wk[h]
        v = xv @ params.wv[h]
        q = (xm @ params.wq[h]) * dtype.type(scale)
        out = np.empty((L, params.d_head), dtype=dtype)
        for s in range(0, L, chunk):
            a = softmax_rows(q[s:s + chunk] @ k.T)
            out[s:s + chunk] = a @ v
        heads.append(out)
    y = np.concatenate(heads, axis=1) @ params.wo
    return y.T.reshape(f_v.shape)


# -- decoder ---------------------------------------------------------------

def conv3d_halve_time(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3-D conv, kernel (2, 3, 3), stride (2, 1, 1), spatial zero padding 1."""
    c_out, c_in, kt, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"expected {c_in} channels, got {x.shape[0]}")
    _, T, H, W = x.shape
    if T % kt:
        raise ValueError(f"time length {T} not divisible by {kt}")
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.zeros((c_out, T // kt, H, W), dtype=np.result_type(x, w))
    for t in range(kt):
        for i in range(kh):
            for j in range(kw):
                out += np.tensordot(w[:, :, t, i, j], xp[:, t::kt, i:i + H, j:j + W], axes=(1, 0))
    return out + b[:, None, None, None]


def _pool_time(x: np.ndarray, T: int) -> np.ndarray:
    C, T0, H, W = x.shape
    if T0 == T:
        return x
    return x.reshape(C, T, T0 // T, H, W).mean(axis=2)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function kept inside the open interval (0, 1) even when saturated."""
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return np.clip(y, np.finfo(y.dtype).tiny, 1.0 - np.finfo(y.dtype).epsneg)


def decoder_forward(levels, weights: DecoderWeights, out_size: int = OUT_SIZE) -> np.ndarray:
    """Four upsample / ReLU / 3-D conv blocks, deepest level first, then sigmoid.

    Each block doubles the spatial size (nearest), concatenates the next
    shallower level (time-averaged to match) and halves time with its
    convolution, so 16 frames collapse to one.  The single-channel result is
    resized bilinearly to ``out_size`` before the sigmoid.
    """
    lv = [np.asarray(getattr(x, "data", x)) for x in levels]
    if len(lv) != N_LEVELS:
        raise ValueError(f"decoder needs {N_LEVELS} levels")
    for a, b in zip(lv, lv[1:]):
        if a.shape[1] != b.shape[1] or a.shape[2] != 2 * b.shape[2] or a.shape[3] != 2 * b.shape[3]:
            raise ValueError(f"inconsistent level shapes {a.shape} -> {b.shape}")
    x = lv[3]
    skips = (lv[2], lv[1], lv[0], None)
    for w, b, skip in zip(weights.kernels, weights.biases, skips):
        x = x.repeat(2, axis=2).repeat(2, axis=3)
        if skip is not None:
            x = np.concatenate([x, _pool_time(skip, x.shape[1]).astype(x.dtype, copy=False)], axis=0)
        x = conv3d_halve_time(np.maximum(x, 0), w, b)
    if x.shape[:2] != (1, 1):
        raise ValueError(f"decoder collapsed to {x.shape[:2]}, expected one channel and one frame")
    logits = resize_bilinear(x[0, 0].astype(np.float64), out_size, out_size)
    return sigmoid(logits)


# -- full forward ----------------------------------------------------------

def parse_enc_blocks(blocks) -> tuple[int, ...]:
    """'2,3,4' -> (2, 3, 4); levels that pass through cross-attention."""
    if isinstance(blocks, str):
        vals = tuple(int(s) for s in blocks.split(",") if s.strip())
    else:
        vals = tuple(int(s) for s in blocks)
    if not vals or any(v not in range(1, N_LEVELS + 1) for v in vals):
        raise ValueError(f"enc blocks must be drawn from 1..{N_LEVELS}, got {blocks!r}")
    return tuple(sorted(set(vals)))


def fuse_forward(patch, scene: list[FeatureTensor], weights: ModelWeights, enc_blocks=(3,)) -> np.ndarray:
    """Map patch + scene features -> (224, 224) saliency map in (0, 1)."""
    blocks = parse_enc_blocks(enc_blocks)
    feat = map_encoder_forward(patch, weights.encoder)
    shapes = [f.data.shape for f in scene]
    f_m = align_map_features(feat, shapes)
    levels = []
    for n, f in enumerate(scene, start=1):
        if n in blocks:
            levels.append(cross_attention_forward(f.data, f_m[n - 1], weights.attention[n]))
        else:
            levels.append(f.data)
    return decoder_forward(levels, weights.decoder)
