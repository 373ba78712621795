"""Checkpoint container ("ecctlin-v1").

Layout, all header text UTF-8 and newline-terminated::

    ecctlin-v1
    [config]            ModelConfig fields as key=value
    [train_config]      optional, TrainConfig fields
    [train]             optional: step, lr, loss, ber, rng (JSON bit-generator state)
    block <name> <d0,d1,...>
    <float32 little-endian payload>
    ...
    end

Block names: ``param.<name>`` for model weights, ``code.H`` for the
parity-check matrix, ``adam.m.<name>`` / ``adam.v.<name>`` for optimizer
moments.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .codes import ParityCheckMatrix
from .training import TrainConfig, TrainState
from .transformer import DecoderModel, ModelConfig, init_params_shapes

VERSION = "ecctlin-v1"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_section(fh, name: str, items: dict) -> None:
    fh.write(f"[{name}]\n".encode())
    for key, val in items.items():
        fh.write(f"{key}={_fmt(val)}\n".encode())


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=_LE_F32)
    shape = ",".join(str(s) for s in arr.shape)
    fh.write(f"block {name} {shape}\n".encode())
    fh.write(arr.tobytes())
    fh.write(b"\n")


def save_checkpoint(
    path: str | Path,
    model: DecoderModel,
    state: TrainState | None = None,
    train_config: TrainConfig | None = None,
) -> None:
    buf = io.BytesIO()
    buf.write(f"{VERSION}\n".encode())
    _write_section(buf, "config", model.config.to_dict())
    if train_config is not None:
        _write_section(buf, "train_config", {k: ("none" if v is None else v) for k, v in train_config.to_dict().items()})
    if state is not None:
        meta = {"step": state.step, "lr": state.lr, "loss": state.loss, "ber": state.ber}
        if state.rng is not None:
            meta["rng"] = json.dumps(state.rng.bit_generator.state, sort_keys=True)
        _write_section(buf, "train", meta)
    for name, p in model.params.items():
        _write_block(buf, f"param.{name}", p.data)
    _write_block(buf, "code.H", model.pcm.H)
    if state is not None:
        for name in model.params:
            _write_block(buf, f"adam.m.{name}", state.m[name])
            _write_block(buf, f"adam.v.{name}", state.v[name])
    buf.write(b"end\n")
    Path(path).write_bytes(buf.getvalue())


def _train_config_from(items: dict[str, str]) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, text in items.items():
        if key not in types:
            raise CheckpointError(f"unknown training config field {key!r}")
        if text == "none":
            out[key] = None
        else:
            out[key] = int(text) if types[key] == "int" else float(text)
    return TrainConfig(**out)


def load_checkpoint(path: str | Path) -> tuple[DecoderModel, TrainState | None, TrainConfig | None]:
    """Inverse of ``save_checkpoint``; parameters come back in the current autodiff dtype."""
    raw = Path(path).read_bytes()
    fh = io.BytesIO(raw)

    def line() -> str:
        text = fh.readline()
        if not text.endswith(b"\n"):
            raise CheckpointError(f"{path}: truncated checkpoint")
        return text[:-1].decode()

    tag = line()
    if tag != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {tag!r} (expected {VERSION!r})")

    sections: dict[str, dict[str, str]] = {}
    blocks: dict[str, np.ndarray] = {}
    current = None
    while True:
        text = line()
        if text == "end":
            break
        if text.startswith("[") and text.endswith("]"):
            current = sections.setdefault(text[1:-1], {})
        elif text.startswith("block "):
            try:
                _, name, shape_txt = text.split(" ")
                shape = tuple(int(s) for s in shape_txt.split(",")) if shape_txt else ()
            except ValueError:
                raise CheckpointError(f"{path}: malformed block header {text!r}") from None
            count = math.prod(shape)
            payload = fh.read(4 * count)
            if len(payload) != 4 * count or fh.read(1) != b"\n":
                raise CheckpointError(f"{path}: truncated block {name}")
            blocks[name] = np.frombuffer(payload, dtype=_LE_F32).reshape(shape)
        elif "=" in text and current is not None:
            key, val = text.split("=", 1)
            current[key] = val
        else:
            raise CheckpointError(f"{path}: unexpected line {text!r}")

    if "config" not in sections:
        raise CheckpointError(f"{path}: missing [config] section")
    config = ModelConfig.from_dict(sections["config"])
    if "code.H" not in blocks:
        raise CheckpointError(f"{path}: missing parity-check matrix block")
    pcm = ParityCheckMatrix(blocks["code.H"].astype(np.uint8))

    params = {}
    for name, shape in init_params_shapes(config).items():
        arr = blocks.get(f"param.{name}")
        if arr is None:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arr.shape != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {arr.shape}, config declares {shape}")
        params[name] = ad.parameter(arr.astype(ad.get_dtype()))
    model = DecoderModel(config, pcm, params)

    train_config = None
    if "train_config" in sections:
        train_config = _train_config_from(sections["train_config"])

    state = None
    if "train" in sections:
        meta = sections["train"]
        rng = None
        if "rng" in meta:
            rng = np.random.default_rng()
            rng.bit_generator.state = json.loads(meta["rng"])
        state = TrainState(
            step=int(meta["step"]),
            lr=float(meta["lr"]),
            loss=float(meta["loss"]),
            ber=float(meta["ber"]),
            rng=rng,
        )
        for name, shape in init_params_shapes(config).items():
            for kind, store in (("m", state.m), ("v", state.v)):
                arr = blocks.get(f"adam.{kind}.{name}")
                if arr is None or arr.shape != shape:
                    raise CheckpointError(f"{path}: optimizer moment adam.{kind}.{name} missing or misshapen")
                store[name] = arr.astype(ad.get_dtype())
    return model, state, train_config
