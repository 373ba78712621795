"""Training loop: channel batch synthesis, BCE objective, Adam with cosine decay."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .channel import ChannelConfig, build_decoder_input, transmit
from .codes import Code
from .transformer import DecoderModel, threshold

log = logging.getLogger(__name__)

PRESETS = {
    "default": (8.0, 15.0),
    "wide": (0.0, 8.0),
    "finetune": (4.0, 8.0),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 128
    lr: float = 5e-3
    lr_floor: float = 0.01
    ebno_low: float = 8.0
    ebno_high: float = 15.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.ebno_low > self.ebno_high:
            raise ValueError(f"Eb/N0 range is inverted: [{self.ebno_low}, {self.ebno_high}]")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch size must be >= 1")
        if not 0 <= self.lr_floor <= 1:
            raise ValueError("lr_floor is a fraction in [0, 1]")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        low, high = PRESETS[name]
        return cls(ebno_low=low, ebno_high=high, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = 0.0
    loss: float = float("nan")
    ber: float = float("nan")
    rng: np.random.Generator | None = None

    @classmethod
    def fresh(cls, params: dict, seed: int) -> "TrainState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            rng=np.random.default_rng(seed),
        )


def cosine_lr(step: int, total: int, lr0: float, floor: float = 0.01) -> float:
    """Cosine decay from lr0 at step 0 to floor*lr0 at ``total``; clamps past the end."""
    if step < 0:
        raise ValueError("step must be non-negative")
    frac = min(step, total) / total if total > 0 else 1.0
    return floor * lr0 + (1.0 - floor) * lr0 * 0.5 * (1.0 + math.cos(math.pi * frac))


def sample_training_batch(
    code: Code,
    channel: ChannelConfig,
    ebno_range: tuple[float, float],
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Random codewords through the channel: (B, n+m) decoder inputs and (B, n) target bits."""
    info = rng.integers(0, 2, size=(batch_size, code.k), dtype=np.uint8)
    cw = code.encode(info)
    ebno = rng.uniform(ebno_range[0], ebno_range[1], size=batch_size)
    llr = transmit(cw, ebno, channel, rng)
    return build_decoder_input(llr, code.pcm), cw


def adam_step(params: dict, grads: dict, state: TrainState, lr: float, config: TrainConfig) -> None:
    """In-place Adam update; ``state.step`` counts completed updates."""
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.data -= update.astype(p.data.dtype)
    state.step = t
    state.lr = lr


def clip_global_norm(grads: dict, max_norm: float | None) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(factor)
    return norm


def train_step(model: DecoderModel, batch: np.ndarray, targets: np.ndarray, state: TrainState, config: TrainConfig) -> float:
    """One forward/backward/Adam update; returns the batch loss."""
    params = model.params
    for p in params.values():
        p.zero_grad()
    logits = model.forward(batch)
    loss = ad.bce_with_logits(logits, targets)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at step {state.step}")
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    clip_global_norm(grads, config.clip_norm)
    lr = cosine_lr(state.step, config.iterations, config.lr, config.lr_floor)
    adam_step(params, grads, state, lr, config)
    state.loss = value
    state.ber = float(np.mean(threshold(logits.data) != targets))
    return value


def train(
    model: DecoderModel,
    code: Code,
    config: TrainConfig,
    state: TrainState | None = None,
    *,
    channel: ChannelConfig | None = None,
    until: int | None = None,
    log_path: str | Path | None = None,
    callback: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run (or resume) training until ``until`` (default: config.iterations) steps."""
    if channel is None:
        channel = ChannelConfig("bpsk", coderate=float(code.rate))
    if state is None:
        state = TrainState.fresh(model.params, config.seed)
    stop = config.iterations if until is None else min(until, config.iterations)
    writer = None
    fh = None
    if log_path is not None:
        path = Path(log_path)
        new = not path.exists() or path.stat().st_size == 0
        fh = open(path, "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "lr", "loss", "train_ber"])
    try:
        while state.step < stop:
            batch, targets = sample_training_batch(
                code, channel, (config.ebno_low, config.ebno_high), config.batch_size, state.rng
            )
            train_step(model, batch.astype(ad.get_dtype()), targets, state, config)
            if writer is not None:
                writer.writerow([state.step, f"{state.lr:.9g}", f"{state.loss:.9g}", f"{state.ber:.9g}"])
            if callback is not None:
                callback(state)
            if state.step % 100 == 0:
                log.info("step %d lr %.3g loss %.4f ber %.4g", state.step, state.lr, state.loss, state.ber)
    finally:
        if fh is not None:
            fh.close()
    return state
