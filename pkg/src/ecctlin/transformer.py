"""Transformer decoders with parity-check-derived attention masks.

Inputs are the length n+m vectors [LLRs; syndrome] and outputs are n logits
expressing confidence that each codeword bit is 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codes import ParityCheckMatrix


# --------------------------------------------------------------------------
# masks
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AttentionMask:
    full: np.ndarray
    low_rank: np.ndarray
    division: int

    @property
    def size(self) -> int:
        return self.full.shape[0]

    @property
    def k(self) -> int:
        return self.low_rank.shape[1]


def build_mask(pcm: ParityCheckMatrix) -> np.ndarray:
    """(n+m) x (n+m) connectivity over bit nodes followed by check nodes.

    Allowed pairs: self, bit-check Tanner edges (both directions), bits that
    share a check, and checks that share a bit.
    """
    H = pcm.H.astype(np.int64)
    n, m = pcm.n, pcm.m
    mask = np.zeros((n + m, n + m), dtype=np.uint8)
    mask[:n, :n] = (H.T @ H) > 0
    mask[n:, n:] = (H @ H.T) > 0
    mask[:n, n:] = H.T
    mask[n:, :n] = H
    np.fill_diagonal(mask, 1)
    return mask


def resize_mask(full: np.ndarray, division: int) -> np.ndarray:
    """Pool mask columns in groups of ``division`` with logical OR: shape (N, ceil(N/d))."""
    if division < 1:
        raise ValueError(f"mask division must be >= 1, got {division}")
    full = np.asarray(full, dtype=np.uint8)
    N = full.shape[1]
    K = -(-N // division)
    pad = K * division - N
    padded = np.concatenate([full, np.zeros((full.shape[0], pad), dtype=np.uint8)], axis=1)
    return padded.reshape(full.shape[0], K, division).max(axis=2)


def make_mask(pcm: ParityCheckMatrix, division: int = 1) -> AttentionMask:
    full = build_mask(pcm)
    return AttentionMask(full, resize_mask(full, division), division)


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V with disallowed pairs filled by a large negative constant."""
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise ValueError(f"attention: expected equal (B, H, N, D_H) shapes, got {q.shape}, {k.shape}, {v.shape}")
    N, dh = q.shape[2], q.shape[3]
    if np.shape(mask) != (N, N):
        raise ValueError(f"attention: mask shape {np.shape(mask)} does not match sequence length {N}")
    scores = ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    weights = ad.softmax(ad.masked_fill(scores, mask), axis=-1)
    return ad.matmul(weights, v)


def linear_attention(q: Tensor, k: Tensor, v: Tensor, proj_k: Tensor, proj_v: Tensor, mask: np.ndarray) -> Tensor:
    """Attention against keys and values compressed along the sequence axis.

    ``proj_k`` and ``proj_v`` have shape (N, K); the score tensor is (B, H, N, K)
    and ``mask`` is the matching (N, K) pooled mask.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise ValueError(f"linear_attention: expected equal (B, H, N, D_H) shapes, got {q.shape}, {k.shape}, {v.shape}")
    N, dh = q.shape[2], q.shape[3]
    if proj_k.shape[0] != N or proj_k.shape != proj_v.shape or proj_k.ndim != 2:
        raise ValueError(f"linear_attention: projections {proj_k.shape}, {proj_v.shape} incompatible with N={N}")
    K = proj_k.shape[1]
    if np.shape(mask) != (N, K):
        raise ValueError(f"linear_attention: mask shape {np.shape(mask)} != ({N}, {K})")
    k_small = ad.matmul(ad.transpose(proj_k), k)  # (B, H, K, D_H)
    v_small = ad.matmul(ad.transpose(proj_v), v)
    scores = ad.scale(ad.matmul(q, ad.swapaxes(k_small, -1, -2)), 1.0 / math.sqrt(dh))
    weights = ad.softmax(ad.masked_fill(scores, mask), axis=-1)
    return ad.matmul(weights, v_small)


def attention_flops(batch: int, heads: int, n: int, head_dim: int) -> int:
    """Closed-form flop count of ``attention`` under the autodiff cost model."""
    return batch * heads * n * n * (4 * head_dim + 7)


def linear_attention_flops(batch: int, heads: int, n: int, k: int, head_dim: int) -> int:
    """Closed-form flop count of ``linear_attention``: two projections plus attention over K slots."""
    return batch * heads * n * k * (8 * head_dim + 7)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    n: int
    m: int
    dim: int = 32
    heads: int = 4
    blocks: int = 2
    attention: str = "standard"
    mask_division: int = 2
    ff_mult: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"hidden dim {self.dim} is not divisible by {self.heads} heads")
        if self.attention not in ("standard", "linear"):
            raise ValueError(f"attention must be 'standard' or 'linear', got {self.attention!r}")
        if self.mask_division < 1:
            raise ValueError("mask_division must be >= 1")
        if min(self.n, self.m, self.dim, self.heads, self.blocks, self.ff_mult) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def length(self) -> int:
        return self.n + self.m

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def proj_dim(self) -> int:
        return -(-self.length // self.mask_division)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, val in d.items():
            if key not in types:
                raise KeyError(f"unknown model config field {key!r}")
            out[key] = val if types[key] == "str" else int(val)
        return cls(**out)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    """Seeded parameters; weights uniform in +-1/sqrt(fan_in), biases and LN shifts zero."""
    rng = np.random.default_rng(config.seed)
    D, N, n = config.dim, config.length, config.n
    F = D * config.ff_mult
    raw: dict[str, np.ndarray] = {"embed": _uniform(rng, (N, D), 1)}
    for b in range(config.blocks):
        p = f"block{b}."
        raw[p + "ln1.gain"] = np.ones(D)
        raw[p + "ln1.bias"] = np.zeros(D)
        for name in ("q", "k", "v", "o"):
            raw[p + f"attn.w{name}"] = _uniform(rng, (D, D), D)
            raw[p + f"attn.b{name}"] = np.zeros(D)
        if config.attention == "linear":
            raw[p + "attn.proj_k"] = _uniform(rng, (N, config.proj_dim), N)
            raw[p + "attn.proj_v"] = _uniform(rng, (N, config.proj_dim), N)
        raw[p + "ln2.gain"] = np.ones(D)
        raw[p + "ln2.bias"] = np.zeros(D)
        raw[p + "ff.w1"] = _uniform(rng, (D, F), D)
        raw[p + "ff.b1"] = np.zeros(F)
        raw[p + "ff.w2"] = _uniform(rng, (F, D), F)
        raw[p + "ff.b2"] = np.zeros(D)
    raw["ln_f.gain"] = np.ones(D)
    raw["ln_f.bias"] = np.zeros(D)
    raw["head.w"] = _uniform(rng, (D, 1), D)
    raw["head.b"] = np.zeros(1)
    raw["out.w"] = _uniform(rng, (N, n), N)
    raw["out.b"] = np.zeros(n)
    return {k: ad.parameter(v) for k, v in raw.items()}


def embed(x, table: Tensor) -> Tensor:
    """Scale a learned per-position direction by each input scalar: (B, N) -> (B, N, D)."""
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != table.shape[0]:
        raise ValueError(f"embed: expected (B, {table.shape[0]}) input, got {x.shape}")
    return ad.mul(ad.reshape(x, x.shape + (1,)), table)


def _dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, D = x.shape
    return ad.transpose(ad.reshape(x, (B, N, heads, D // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, N, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, N, H * dh))


def multi_head_attention(x: Tensor, params: dict, prefix: str, mask: AttentionMask, heads: int, kind: str) -> Tensor:
    q = _split_heads(_dense(x, params[prefix + "wq"], params[prefix + "bq"]), heads)
    k = _split_heads(_dense(x, params[prefix + "wk"], params[prefix + "bk"]), heads)
    v = _split_heads(_dense(x, params[prefix + "wv"], params[prefix + "bv"]), heads)
    if kind == "linear":
        out = linear_attention(q, k, v, params[prefix + "proj_k"], params[prefix + "proj_v"], mask.low_rank)
    else:
        out = attention(q, k, v, mask.full)
    return _dense(_merge_heads(out), params[prefix + "wo"], params[prefix + "bo"])


def transformer_block(x: Tensor, params: dict, prefix: str, mask: AttentionMask, heads: int, kind: str) -> Tensor:
    """Pre-norm residual block: x + MHA(LN(x)), then + FFN(LN(.)) with GELU."""
    if x.ndim != 3 or x.shape[1] != mask.size:
        raise ValueError(f"transformer_block: expected (B, {mask.size}, D) input, got {x.shape}")
    h = ad.layer_norm(x, params[prefix + "ln1.gain"], params[prefix + "ln1.bias"])
    x = ad.add(x, multi_head_attention(h, params, prefix + "attn.", mask, heads, kind))
    h = ad.layer_norm(x, params[prefix + "ln2.gain"], params[prefix + "ln2.bias"])
    h = ad.gelu(_dense(h, params[prefix + "ff.w1"], params[prefix + "ff.b1"]))
    return ad.add(x, _dense(h, params[prefix + "ff.w2"], params[prefix + "ff.b2"]))


class DecoderModel:
    """Embedding, a stack of transformer blocks and the (n+m) -> n output head."""

    def __init__(self, config: ModelConfig, pcm: ParityCheckMatrix, params: dict[str, Tensor] | None = None):
        if (pcm.n, pcm.m) != (config.n, config.m):
            raise ValueError(f"model expects an ({config.m}, {config.n}) parity-check matrix, got {pcm.shape}")
        self.config = config
        self.pcm = pcm
        self.mask = make_mask(pcm, config.mask_division)
        self.params = init_params(config) if params is None else params
        expected = set(init_params_shapes(config))
        if set(self.params) != expected:
            raise ValueError(f"parameter names do not match config: {sorted(set(self.params) ^ expected)}")
        for name, shape in init_params_shapes(config).items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, config implies {shape}")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x) -> Tensor:
        """(B, n+m) decoder inputs -> (B, n) bit-1 logits."""
        x = ad.as_tensor(x)
        cfg = self.config
        if x.ndim != 2 or x.shape[1] != cfg.length:
            raise ValueError(f"decoder input must have shape (B, {cfg.length}), got {x.shape}")
        p = self.params
        h = embed(x, p["embed"])
        for b in range(cfg.blocks):
            h = transformer_block(h, p, f"block{b}.", self.mask, cfg.heads, cfg.attention)
        h = ad.layer_norm(h, p["ln_f.gain"], p["ln_f.bias"])
        per_pos = ad.reshape(_dense(h, p["head.w"], p["head.b"]), (x.shape[0], cfg.length))
        return _dense(per_pos, p["out.w"], p["out.b"])

    __call__ = forward

    def decode(self, x) -> np.ndarray:
        return threshold(self.forward(x).data)


def init_params_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, N, n, F, K = config.dim, config.length, config.n, config.dim * config.ff_mult, config.proj_dim
    shapes = {"embed": (N, D)}
    for b in range(config.blocks):
        p = f"block{b}."
        shapes.update({p + "ln1.gain": (D,), p + "ln1.bias": (D,)})
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{name}"] = (D, D)
            shapes[p + f"attn.b{name}"] = (D,)
        if config.attention == "linear":
            shapes[p + "attn.proj_k"] = (N, K)
            shapes[p + "attn.proj_v"] = (N, K)
        shapes.update({p + "ln2.gain": (D,), p + "ln2.bias": (D,)})
        shapes.update({p + "ff.w1": (D, F), p + "ff.b1": (F,), p + "ff.w2": (F, D), p + "ff.b2": (D,)})
    shapes.update({"ln_f.gain": (D,), "ln_f.bias": (D,), "head.w": (D, 1), "head.b": (1,), "out.w": (N, n), "out.b": (n,)})
    return shapes


def threshold(logits) -> np.ndarray:
    """Bit 1 iff the logit is strictly positive."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (data > 0).astype(np.uint8)
