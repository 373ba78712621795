"""Central finite-difference checks for every differentiable op and the full model.

Relative error is measured as max|analytic - numeric| divided by the larger of
the two gradients' max-norms, so near-zero components do not dominate.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .codes import hamming74
from .transformer import (
    DecoderModel,
    ModelConfig,
    attention,
    init_params,
    linear_attention,
    make_mask,
    transformer_block,
)

EPS = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = EPS) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def check(fn: Callable[..., ad.Tensor], *arrays: np.ndarray, seed: int = 0, eps: float = EPS) -> float:
    """Max relative error over all inputs of ``sum(fn(*inputs) * R)`` for a fixed random R."""
    with ad.precision(np.float64):
        leaves = [ad.parameter(np.array(a, dtype=np.float64)) for a in arrays]
        out = fn(*leaves)
        weights = np.random.default_rng(seed).standard_normal(out.shape)

        def value() -> float:
            with ad.no_grad():
                return float(np.sum(fn(*leaves).data * weights))

        loss = ad.reduce_sum(ad.mul(out, weights))
        loss.backward()
        worst = 0.0
        for leaf in leaves:
            num = numeric_grad(value, leaf.data, eps)
            worst = max(worst, relative_error(leaf.grad, num))
        return worst


def _model_error(model: DecoderModel, x: np.ndarray, targets: np.ndarray) -> float:
    params = model.params
    for p in params.values():
        p.zero_grad()
    loss = ad.bce_with_logits(model.forward(x), targets)
    loss.backward()

    def value() -> float:
        with ad.no_grad():
            return float(ad.bce_with_logits(model.forward(x), targets).data)

    worst = 0.0
    for p in params.values():
        worst = max(worst, relative_error(p.grad, numeric_grad(value, p.data)))
    return worst


def model_check(attention_kind: str = "standard", blocks: int = 1, dim: int = 8, seed: int = 0) -> float:
    """Full-model BCE gradient against finite differences on the (7,4) Hamming code."""
    code = hamming74()
    rng = np.random.default_rng(seed)
    with ad.precision(np.float64):
        cfg = ModelConfig(code.n, code.m, dim=dim, heads=2, blocks=blocks, attention=attention_kind,
                          mask_division=2, seed=seed)
        model = DecoderModel(cfg, code.pcm)
        x = np.concatenate([rng.normal(0, 2, (3, code.n)), rng.integers(0, 2, (3, code.m))], axis=1)
        targets = rng.integers(0, 2, (3, code.n))
        return _model_error(model, x, targets)


def run_suite(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    mask = make_mask(hamming74().pcm, 2)
    away_from_zero = r((4, 5)) + np.sign(r((4, 5))) * 0.2
    bits = (r((4, 7)) > 0).astype(float)
    results = {
        "add": check(ad.add, r((2, 3)), r((1, 3))),
        "sub": check(ad.sub, r((2, 3)), r((3,))),
        "mul": check(ad.mul, r((2, 3, 4)), r((3, 1))),
        "scale": check(lambda a: ad.scale(a, 0.37), r((3, 4))),
        "matmul": check(ad.matmul, r((3, 5)), r((5, 2))),
        "matmul_batched": check(ad.matmul, r((2, 3, 4, 5)), r((3, 5, 2))),
        "transpose": check(lambda a: ad.transpose(a, (2, 0, 1)), r((2, 3, 4))),
        "reshape": check(lambda a: ad.reshape(a, (6, 4)), r((2, 3, 4))),
        "concat": check(lambda a, b: ad.concat([a, b], axis=1), r((2, 3)), r((2, 2))),
        "slice": check(lambda a: a[1:, ::2], r((3, 5))),
        "reduce_sum": check(lambda a: ad.reduce_sum(a, axis=1), r((3, 4, 2))),
        "reduce_mean": check(lambda a: ad.reduce_mean(a, axis=(0, 2), keepdims=True), r((3, 4, 2))),
        "softmax": check(lambda a: ad.softmax(a, axis=-1), r((3, 6))),
        "gelu": check(ad.gelu, r((20,)) * 2),
        "relu": check(ad.relu, away_from_zero),
        "sigmoid": check(ad.sigmoid, r((4, 5)) * 3),
        "layer_norm": check(lambda a, g, b: ad.layer_norm(a, g, b), r((3, 4, 6)), r((6,)), r((6,))),
        "masked_fill": check(lambda a: ad.softmax(ad.masked_fill(a, mask.full), axis=-1), r((2, 10, 10))),
        "bce_with_logits": check(lambda a: ad.bce_with_logits(a, bits), r((4, 7)) * 3),
        "attention": check(lambda q, k, v: attention(q, k, v, mask.full), r((2, 2, 10, 4)), r((2, 2, 10, 4)), r((2, 2, 10, 4))),
        "linear_attention": check(
            lambda q, k, v, pk, pv: linear_attention(q, k, v, pk, pv, mask.low_rank),
            r((2, 2, 10, 4)), r((2, 2, 10, 4)), r((2, 2, 10, 4)), r((10, 5)), r((10, 5)),
        ),
    }
    results["transformer_block_x2"] = two_block_check(seed)
    results["model_standard"] = model_check("standard", seed=seed)
    results["model_linear"] = model_check("linear", seed=seed)
    return results


def two_block_check(seed: int) -> float:
    code = hamming74()
    with ad.precision(np.float64):
        cfg = ModelConfig(code.n, code.m, dim=8, heads=2, blocks=2, seed=seed)
        params = init_params(cfg)
        mask = make_mask(code.pcm, 1)
        x0 = np.random.default_rng(seed + 1).standard_normal((2, code.n + code.m, 8))

        def fn(x):
            h = transformer_block(x, params, "block0.", mask, 2, "standard")
            return transformer_block(h, params, "block1.", mask, 2, "standard")

        return check(fn, x0, seed=seed)
