"""Modulation, AWGN, LLR demapping and decoder-input assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import LLR_CLIP, ParityCheckMatrix, syndrome

_BITS_PER_SYMBOL = {"bpsk": 1, "qpsk": 2, "16qam": 4}


@dataclass(frozen=True)
class ChannelConfig:
    modulation: str = "bpsk"
    coderate: float = 1.0
    llr_clip: float = LLR_CLIP

    def __post_init__(self):
        mod = self.modulation.lower()
        if mod not in _BITS_PER_SYMBOL:
            raise ValueError(f"unknown modulation {self.modulation!r}; choose from {sorted(_BITS_PER_SYMBOL)}")
        object.__setattr__(self, "modulation", mod)
        if not 0 < self.coderate <= 1:
            raise ValueError(f"coderate must lie in (0, 1], got {self.coderate}")
        if self.llr_clip <= 0:
            raise ValueError("llr_clip must be positive")

    @property
    def bits_per_symbol(self) -> int:
        return _BITS_PER_SYMBOL[self.modulation]

    @property
    def symbol_energy(self) -> float:
        return 1.0

    @property
    def is_complex(self) -> bool:
        return self.modulation != "bpsk"


def _pam4(b_sign, b_mag):
    # Gray labels along the axis: -3:10, -1:11, +1:01, +3:00
    return (1 - 2 * b_sign) * (3 - 2 * b_mag)


def constellation(modulation: str) -> tuple[np.ndarray, np.ndarray]:
    """Unit-energy points and their bit labels (shape (2**M, M))."""
    M = _BITS_PER_SYMBOL[modulation]
    labels = ((np.arange(2**M)[:, None] >> np.arange(M - 1, -1, -1)) & 1).astype(np.int64)
    if modulation == "bpsk":
        pts = (1.0 - 2.0 * labels[:, 0]).astype(np.float64)
    elif modulation == "qpsk":
        pts = ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2.0)
    else:
        i = _pam4(labels[:, 0], labels[:, 1])
        q = _pam4(labels[:, 2], labels[:, 3])
        pts = (i + 1j * q) / np.sqrt(10.0)
    return pts, labels


def ebno_to_n0(ebno_db: float, coderate: float, bits_per_symbol: int = 1, es: float = 1.0) -> float:
    """Noise variance N0 = (Eb/N0 * r * M / Es)^-1 with Eb/N0 given in dB."""
    if coderate <= 0 or bits_per_symbol <= 0 or es <= 0:
        raise ValueError("coderate, bits per symbol and Es must all be positive")
    return 1.0 / (10.0 ** (ebno_db / 10.0) * coderate * bits_per_symbol / es)


def map_bits(bits: np.ndarray, config: ChannelConfig) -> tuple[np.ndarray, int]:
    """Map bits (last axis) to symbols; returns (symbols, number of pad bits appended)."""
    c = np.asarray(bits, dtype=np.int64)
    M = config.bits_per_symbol
    if config.modulation == "bpsk":
        return 1.0 - 2.0 * c, 0
    pad = (-c.shape[-1]) % M
    if pad:
        c = np.concatenate([c, np.zeros(c.shape[:-1] + (pad,), dtype=np.int64)], axis=-1)
    groups = c.reshape(c.shape[:-1] + (-1, M))
    index = groups @ (1 << np.arange(M - 1, -1, -1))
    pts, _ = constellation(config.modulation)
    return pts[index], pad


def apply_awgn(x: np.ndarray, n0, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise of variance N0/2 per real dimension.

    ``n0`` is a scalar or an array broadcastable against ``x``.
    """
    n0 = np.asarray(n0, dtype=np.float64)
    if np.any(n0 <= 0):
        raise ValueError(f"noise variance must be positive, got {n0}")
    x = np.asarray(x)
    sigma = np.sqrt(n0 / 2.0)
    if np.iscomplexobj(x):
        noise = rng.standard_normal(x.shape + (2,))
        return x + sigma * (noise[..., 0] + 1j * noise[..., 1])
    return x + sigma * rng.standard_normal(x.shape)


def demap_llr(y: np.ndarray, n0, config: ChannelConfig, pad: int = 0) -> np.ndarray:
    """Exact log-likelihood ratios ln p(y|0) - ln p(y|1), clipped to +-llr_clip.

    Positive values favour bit 0. ``n0`` broadcasts against ``y`` (one value
    per symbol or per row). ``pad`` trailing bits added by the mapper are
    stripped.
    """
    n0 = np.asarray(n0, dtype=np.float64)
    if np.any(n0 <= 0):
        raise ValueError(f"noise variance must be positive, got {n0}")
    y = np.asarray(y)
    clip = config.llr_clip
    if config.modulation == "bpsk":
        return np.clip(4.0 * np.real(y) / n0, -clip, clip)

    pts, labels = constellation(config.modulation)
    # log p(y|s) up to a shared constant
    metric = -np.abs(y[..., None] - pts) ** 2 / n0[..., None]
    M = config.bits_per_symbol
    llr = np.empty(y.shape + (M,))
    for b in range(M):
        zero = labels[:, b] == 0
        llr[..., b] = np.logaddexp.reduce(metric[..., zero], axis=-1) - np.logaddexp.reduce(metric[..., ~zero], axis=-1)
    llr = llr.reshape(y.shape[:-1] + (-1,))
    if pad:
        llr = llr[..., :-pad]
    return np.clip(llr, -clip, clip)


def hard_decision(llr: np.ndarray) -> np.ndarray:
    """Bit 1 where the channel LLR is negative."""
    return (np.asarray(llr) < 0).astype(np.uint8)


def build_decoder_input(llr: np.ndarray, pcm: ParityCheckMatrix) -> np.ndarray:
    """Concatenate the LLRs with the syndrome of their hard decision: length n + m."""
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape[-1] != pcm.n:
        raise ValueError(f"expected {pcm.n} LLRs per word, got shape {llr.shape}")
    sigma = syndrome(pcm, hard_decision(llr)).astype(np.float64)
    return np.concatenate([llr, sigma], axis=-1)


def transmit(codewords: np.ndarray, ebno_db, config: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Modulate, add noise and demap a batch of codewords; ``ebno_db`` may be per-row."""
    cw = np.asarray(codewords)
    ebno = np.asarray(ebno_db, dtype=np.float64)
    n0 = 1.0 / (10.0 ** (ebno / 10.0) * config.coderate * config.bits_per_symbol / config.symbol_energy)
    if n0.ndim:
        n0 = n0[..., None]
    x, pad = map_bits(cw, config)
    y = apply_awgn(x, n0, rng)
    return demap_llr(y, n0, config, pad)
