"""Monte-Carlo BER/BLER sweeps, decoder timing and result emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .bp import bp_decode_batch
from .channel import ChannelConfig, build_decoder_input, hard_decision, transmit
from .codes import Code
from .transformer import (
    DecoderModel,
    ModelConfig,
    attention,
    attention_flops,
    linear_attention,
    linear_attention_flops,
)

CSV_COLUMNS = ["decoder", "n", "k", "ebno_db", "bits", "bit_errors", "block_errors", "ber", "bler", "seconds", "config_hash"]


def q_function(x: float) -> float:
    """Gaussian tail probability P(Z > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def uncoded_bpsk_ber(ebno_db: float) -> float:
    return q_function(math.sqrt(2.0 * 10.0 ** (ebno_db / 10.0)))


def parse_ebno_range(text: str) -> list[float]:
    """'start:step:stop' in dB (inclusive), or a comma-separated list."""
    if ":" in text:
        start, step, stop = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("Eb/N0 step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


# --------------------------------------------------------------------------
# decoders
# --------------------------------------------------------------------------


@dataclass
class Decoder:
    name: str
    code: Code | None
    decode: Callable[[np.ndarray], np.ndarray]  # (B, n) channel LLRs -> (B, n) hard bits
    meta: dict = field(default_factory=dict)


def bp_decoder(code: Code, iters: int, early_stop: bool = True) -> Decoder:
    def run(llr):
        return bp_decode_batch(code.pcm, llr, iters, early_stop=early_stop).hard

    meta = {"algorithm": "sum-product", "schedule": "flooding", "iterations": iters, "early_stop": early_stop}
    return Decoder(f"bp:{iters}", code, run, meta)


def transformer_decoder(model: DecoderModel, code: Code, name: str | None = None) -> Decoder:
    if code.pcm != model.pcm:
        raise ValueError("model was trained for a different parity-check matrix")

    def run(llr):
        x = build_decoder_input(llr, code.pcm).astype(ad.get_dtype())
        with ad.no_grad():
            return model.decode(x)

    return Decoder(name or f"transformer-{model.config.attention}", code, run, model.config.to_dict())


def uncoded_decoder() -> Decoder:
    return Decoder("uncoded", None, hard_decision, {})


def make_decoder(spec: str, code: Code | None) -> Decoder:
    """Build a decoder from ``uncoded``, ``bp:ITERS[:noearly]`` or a checkpoint path."""
    if spec == "uncoded":
        return uncoded_decoder()
    if spec.startswith("bp:"):
        parts = spec.split(":")
        if code is None:
            raise ValueError("a BP decoder needs a code")
        try:
            iters = int(parts[1])
        except (IndexError, ValueError):
            raise ValueError(f"bad BP decoder spec {spec!r}; expected bp:ITERS") from None
        return bp_decoder(code, iters, early_stop=not (len(parts) > 2 and parts[2] == "noearly"))
    from .checkpoint import load_checkpoint

    model, _, _ = load_checkpoint(spec)
    if code is None:
        code = Code.from_pcm(model.pcm)
    elif code.pcm != model.pcm:
        raise ValueError(f"checkpoint {spec} was trained on a different code ({model.pcm.shape} vs {code.pcm.shape})")
    return transformer_decoder(model, code, name=f"transformer-{model.config.attention}")


# --------------------------------------------------------------------------
# BER
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StopRule:
    max_bits: int = 10**6
    target_errors: int = 100
    max_seconds: float | None = None


@dataclass
class BerPoint:
    ebno_db: float
    bits: int
    bit_errors: int
    block_errors: int
    seconds: float

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits

    @property
    def stderr(self) -> float:
        p = self.ber
        return math.sqrt(max(p * (1 - p), 0.0) / self.bits)


@dataclass
class BerReport:
    decoder: str
    n: int
    k: int
    points: list[BerPoint]
    config: dict
    config_hash: str
    metadata: dict = field(default_factory=dict)

    def bler(self, point: BerPoint) -> float:
        return point.block_errors / (point.bits // self.n)

    def rows(self) -> list[dict]:
        out = []
        for p in self.points:
            out.append(
                {
                    "decoder": self.decoder,
                    "n": self.n,
                    "k": self.k,
                    "ebno_db": p.ebno_db,
                    "bits": p.bits,
                    "bit_errors": p.bit_errors,
                    "block_errors": p.block_errors,
                    "ber": p.ber,
                    "bler": self.bler(p),
                    "seconds": p.seconds,
                    "config_hash": self.config_hash,
                }
            )
        return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _code_fingerprint(code: Code) -> str:
    return hashlib.sha256(np.packbits(code.pcm.H).tobytes() + str(code.pcm.shape).encode()).hexdigest()[:16]


def run_ber(
    decoder: Decoder,
    ebno_list: list[float],
    *,
    channel: ChannelConfig | None = None,
    stop: StopRule = StopRule(),
    seed: int = 0,
    batch_size: int = 1000,
    block_length: int = 1000,
    record_time: bool = True,
    calibrate: bool = False,
) -> BerReport:
    """Stream random codewords through channel and decoder at each Eb/N0 point.

    Each point stops at the first of: ``target_errors`` bit errors, ``max_bits``
    simulated bits, or ``max_seconds`` of wall clock. Point i draws from the
    stream seeded by (seed, i), so reports are reproducible from the seed.
    """
    if not ebno_list:
        raise ValueError("empty Eb/N0 list")
    code = decoder.code
    if code is None:
        n = k = block_length
        rate = 1.0
    else:
        n, k = code.n, code.k
        rate = float(code.rate)
    modulation = channel.modulation if channel is not None else "bpsk"
    channel = ChannelConfig(modulation, coderate=rate)

    config = {
        "decoder": decoder.name,
        "decoder_meta": decoder.meta,
        "code": None if code is None else {"kind": code.spec.kind, "n": n, "k": k, "m": code.m, "H": _code_fingerprint(code)},
        "block_length": n,
        "channel": asdict(channel),
        "ebno_db": list(map(float, ebno_list)),
        "stop": asdict(stop),
        "seed": seed,
        "batch_size": batch_size,
    }
    points = []
    for i, ebno in enumerate(ebno_list):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        bits = errors = block_errors = 0
        elapsed = 0.0
        t_start = time.perf_counter()
        while errors < stop.target_errors and bits < stop.max_bits:
            if stop.max_seconds is not None and time.perf_counter() - t_start > stop.max_seconds:
                break
            B = min(batch_size, max(1, -(-(stop.max_bits - bits) // n)))
            if code is None:
                cw = rng.integers(0, 2, size=(B, n), dtype=np.uint8)
            else:
                cw = code.encode(rng.integers(0, 2, size=(B, k), dtype=np.uint8))
            llr = transmit(cw, ebno, channel, rng)
            t0 = time.perf_counter()
            hard = decoder.decode(llr)
            elapsed += time.perf_counter() - t0
            wrong = hard != cw
            errors += int(wrong.sum())
            block_errors += int(wrong.any(axis=1).sum())
            bits += B * n
        points.append(BerPoint(float(ebno), bits, errors, block_errors, elapsed if record_time else 0.0))

    report = BerReport(decoder.name, n, k, points, config, config_hash(config))
    report.metadata["bp_variant"] = "sum-product" if decoder.name.startswith("bp") else None
    report.metadata["stderr"] = [p.stderr for p in points]
    report.metadata["non_monotone"] = _non_monotone(points)
    if calibrate:
        cal = calibration_check(seed=seed)
        report.metadata["calibration"] = cal
        report.metadata["valid"] = cal["passed"]
    return report


def _non_monotone(points: list[BerPoint]) -> list[list[float]]:
    flagged = []
    ordered = sorted(points, key=lambda p: p.ebno_db)
    for lo, hi in zip(ordered, ordered[1:]):
        if hi.ber - lo.ber > 3.0 * math.hypot(lo.stderr, hi.stderr):
            flagged.append([lo.ebno_db, hi.ebno_db])
    return flagged


def calibration_check(
    ebno_list: tuple[float, ...] = (4.0, 6.0),
    *,
    seed: int = 0,
    target_errors: int = 4000,
    max_bits: int = 10**8,
    tolerance: float = 0.05,
) -> dict:
    """Uncoded BPSK against Q(sqrt(2 Eb/N0)); every other result is only as good as this."""
    report = run_ber(
        uncoded_decoder(),
        list(ebno_list),
        stop=StopRule(max_bits=max_bits, target_errors=target_errors),
        seed=seed,
        batch_size=1000,
        record_time=False,
    )
    rows = []
    passed = True
    for p in report.points:
        theory = uncoded_bpsk_ber(p.ebno_db)
        rel = abs(p.ber - theory) / theory
        ok = rel <= tolerance and p.bit_errors >= 100
        passed &= ok
        rows.append({"ebno_db": p.ebno_db, "ber": p.ber, "theory": theory, "rel_error": rel, "bit_errors": p.bit_errors, "ok": ok})
    return {"passed": bool(passed), "points": rows}


# --------------------------------------------------------------------------
# emission
# --------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def to_csv(report: BerReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows():
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(report: BerReport) -> str:
    payload = {
        "decoder": report.decoder,
        "n": report.n,
        "k": report.k,
        "config_hash": report.config_hash,
        "config": report.config,
        "metadata": report.metadata,
        "points": [{c: row[c] for c in CSV_COLUMNS if c not in ("decoder", "n", "k", "config_hash")} for row in report.rows()],
    }

    def round9(obj):
        if isinstance(obj, float):
            return float(f"{obj:.9g}")
        if isinstance(obj, dict):
            return {k: round9(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [round9(v) for v in obj]
        return obj

    return json.dumps(round9(payload), indent=2, sort_keys=True) + "\n"


def read_csv(text: str) -> BerReport:
    """Rebuild a report from ``to_csv`` output (config details are not carried by CSV)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
    rows = list(reader)
    if not rows:
        raise ValueError("CSV has no data rows")
    first = rows[0]
    points = [
        BerPoint(float(r["ebno_db"]), int(r["bits"]), int(r["bit_errors"]), int(r["block_errors"]), float(r["seconds"]))
        for r in rows
    ]
    return BerReport(first["decoder"], int(first["n"]), int(first["k"]), points, {}, first["config_hash"])


def emit(report: BerReport, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Serialise ``report`` as csv or json; write to ``path`` when given, return the text."""
    if fmt == "csv":
        text = to_csv(report)
    elif fmt == "json":
        text = to_json(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------
# timing
# --------------------------------------------------------------------------


@dataclass
class TimingCell:
    decoder: str
    n: int
    length: int
    batch_size: int
    repetitions: int
    median: float
    iqr: float


@dataclass
class TimingReport:
    cells: list[TimingCell]
    slopes: dict[str, float]
    flops: dict[str, list[int]] = field(default_factory=dict)


def loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)[0])


def time_call(fn: Callable[[], object], repetitions: int) -> tuple[float, float]:
    """Median and interquartile range of ``repetitions`` warm runs (one discarded warm-up)."""
    if repetitions < 5:
        raise ValueError("at least 5 repetitions are required")
    fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return float(med), float(q3 - q1)


def run_timing(
    decoders: list[str],
    sizes: list[int],
    *,
    batch_size: int = 16,
    repetitions: int = 5,
    dim: int = 32,
    heads: int = 4,
    blocks: int = 1,
    fixed_k: int | None = None,
    mask_division: int = 2,
    seed: int = 0,
) -> TimingReport:
    """Time decoding of fixed batches on (3, 6)-regular codes of each length.

    ``decoders`` entries: ``bp:ITERS``, ``standard`` or ``linear`` (freshly
    initialised models; weights do not affect timing). With ``fixed_k`` the
    linear model's mask division is chosen per size so the projection
    dimension stays at about ``fixed_k``. Runs are single-threaded and
    exclude code and model construction.
    """
    cells = []
    with threadpool_limits(limits=1):
        for spec in decoders:
            for n in sizes:
                code = Code.regular(n, 3, 6, seed=seed)
                rng = np.random.default_rng(seed)
                cw = code.encode(rng.integers(0, 2, size=(batch_size, code.k), dtype=np.uint8))
                llr = transmit(cw, 4.0, ChannelConfig(coderate=float(code.rate)), rng)
                if spec.startswith("bp:"):
                    dec = bp_decoder(code, int(spec.split(":")[1]), early_stop=False)
                elif spec in ("standard", "linear"):
                    length = code.n + code.m
                    division = mask_division if fixed_k is None else max(1, -(-length // fixed_k))
                    cfg = ModelConfig(code.n, code.m, dim=dim, heads=heads, blocks=blocks, attention=spec,
                                      mask_division=division, seed=seed)
                    dec = transformer_decoder(DecoderModel(cfg, code.pcm), code, name=spec)
                else:
                    raise ValueError(f"unknown timing decoder {spec!r}")
                med, iqr = time_call(lambda: dec.decode(llr), repetitions)
                cells.append(TimingCell(spec, code.n, code.n + code.m, batch_size, repetitions, med, iqr))
    slopes = {}
    for spec in decoders:
        mine = [c for c in cells if c.decoder == spec]
        if len(mine) >= 2:
            slopes[spec] = loglog_slope([c.length for c in mine], [c.median for c in mine])
    return TimingReport(cells, slopes)


def run_attention_timing(
    lengths: list[int],
    *,
    proj_dim: int = 64,
    batch_size: int = 4,
    heads: int = 4,
    head_dim: int = 8,
    repetitions: int = 7,
    seed: int = 0,
) -> TimingReport:
    """Time one attention layer (standard vs linear at fixed ``proj_dim``) over sequence lengths.

    Isolates the score computation from the per-position layers around it
    (embedding, feed-forward, output head), whose cost is the same for both
    variants. Single-threaded; analytic FLOP counts are attached per length.
    """
    cells = []
    flops: dict[str, list[int]] = {"standard": [], "linear": []}
    with threadpool_limits(limits=1), ad.no_grad():
        for N in lengths:
            rng = np.random.default_rng(np.random.SeedSequence([seed, N]))
            q, k, v = (ad.Tensor(rng.normal(size=(batch_size, heads, N, head_dim))) for _ in range(3))
            proj = ad.Tensor(rng.normal(size=(N, proj_dim)) / math.sqrt(N))
            full, low = np.ones((N, N)), np.ones((N, proj_dim))
            runs = {
                "standard": lambda: attention(q, k, v, full),
                "linear": lambda: linear_attention(q, k, v, proj, proj, low),
            }
            for kind, fn in runs.items():
                med, iqr = time_call(fn, repetitions)
                cells.append(TimingCell(kind, N, N, batch_size, repetitions, med, iqr))
            flops["standard"].append(attention_flops(batch_size, heads, N, head_dim))
            flops["linear"].append(linear_attention_flops(batch_size, heads, N, proj_dim, head_dim))
    slopes = {
        kind: loglog_slope(lengths, [c.median for c in cells if c.decoder == kind])
        for kind in ("standard", "linear")
        if len(lengths) >= 2
    }
    return TimingReport(cells, slopes, flops)


def timing_to_json(report: TimingReport) -> str:
    payload = {"cells": [asdict(c) for c in report.cells], "slopes": report.slopes}
    if report.flops:
        payload["flops"] = report.flops
    return json.dumps(payload, indent=2) + "\n"
