"""Command-line entry point: train, ber, timing, makecode, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .channel import ChannelConfig
from .codes import Code, load_alist, parse_protograph, save_alist

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add_code_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("code")
    g.add_argument("--code", choices=["regular", "lifted", "alist"], required=required)
    g.add_argument("--n", type=int, help="codeword length (regular)")
    g.add_argument("--v", type=int, default=3, help="column degree (regular)")
    g.add_argument("--c", type=int, default=6, help="row degree (regular)")
    g.add_argument("--code-seed", type=int, default=0, help="seed of the random regular construction")
    g.add_argument("--alist", help="alist file (alist codes)")
    g.add_argument("--protograph", help="shift-table file: 'base_m base_n Z' then rows of shifts (lifted codes)")


def _code_from_args(args) -> Code | None:
    if args.code is None:
        return None
    if args.code == "regular":
        if args.n is None:
            raise UsageError("--code regular needs --n")
        return Code.regular(args.n, args.v, args.c, seed=args.code_seed)
    if args.code == "lifted":
        if not args.protograph:
            raise UsageError("--code lifted needs --protograph")
        base, Z = parse_protograph(Path(args.protograph).read_text())
        return Code.lifted(base, Z)
    if not args.alist:
        raise UsageError("--code alist needs --alist")
    return Code.from_pcm(load_alist(Path(args.alist).read_text()), kind="imported", source=args.alist)


def _parse_range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LOW:HIGH in dB")
    return float(parts[0]), float(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecctlin", description="Transformer and BP decoders for binary linear block codes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a transformer decoder and write a checkpoint")
    _add_code_flags(p, required=True)
    p.add_argument("--attn", choices=["standard", "linear"], default="standard")
    p.add_argument("--mask-div", type=int, default=2)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--iters", type=int, default=1000, help="training iterations")
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--lr-floor", type=float, default=0.01)
    p.add_argument("--ebno", type=_parse_range, default=None, help="training range LOW:HIGH dB (default 8:15)")
    p.add_argument("--preset", choices=["default", "wide", "finetune"], default="default")
    p.add_argument("--no-clip", action="store_true", help="disable global-norm gradient clipping")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--log", help="append-only CSV training log")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("ber", help="Monte-Carlo BER/BLER sweep")
    _add_code_flags(p)
    p.add_argument("--decoder", required=True, help="uncoded | bp:ITERS[:noearly] | checkpoint path")
    p.add_argument("--ebno", default="0:1:6", help="start:step:stop dB or comma list")
    p.add_argument("--modulation", choices=["bpsk", "qpsk", "16qam"], default="bpsk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--block-length", type=int, default=1000, help="block length for uncoded runs")
    p.add_argument("--max-bits", type=float, default=1e6)
    p.add_argument("--target-errors", type=int, default=100)
    p.add_argument("--max-seconds", type=float, default=None)
    p.add_argument("--no-clock", action="store_true", help="write seconds=0 so output is byte-reproducible")
    p.add_argument("--calibrate", action="store_true", help="attach the uncoded calibration verdict (json)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")

    p = sub.add_parser("timing", help="decoder wall-clock scaling over block sizes")
    p.add_argument("--decoders", default="bp:1,standard,linear")
    p.add_argument("--sizes", default="64,128,256,512", help="codeword lengths n")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--fixed-k", type=int, default=None)
    p.add_argument("--attention-only", action="store_true",
                   help="time a single attention layer; --sizes are then sequence lengths N")
    p.add_argument("--mask-div", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("makecode", help="build a code and write it as alist")
    _add_code_flags(p, required=True)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite in float64")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .training import TrainConfig, train
    from .transformer import DecoderModel, ModelConfig

    code = _code_from_args(args)
    if args.resume:
        model, state, config = load_checkpoint(args.resume)
        if code.pcm != model.pcm:
            raise ValueError("--resume checkpoint was trained on a different code")
        config = config or TrainConfig()
    else:
        if args.ebno is None:
            preset = TrainConfig.preset(args.preset)
            low, high = preset.ebno_low, preset.ebno_high
        else:
            low, high = args.ebno
        config = TrainConfig(
            iterations=args.iters,
            batch_size=args.batch,
            lr=args.lr,
            lr_floor=args.lr_floor,
            ebno_low=low,
            ebno_high=high,
            seed=args.seed,
            clip_norm=None if args.no_clip else 1.0,
        )
        mcfg = ModelConfig(code.n, code.m, dim=args.dim, heads=args.heads, blocks=args.blocks,
                           attention=args.attn, mask_division=args.mask_div, seed=args.seed)
        model, state = DecoderModel(mcfg, code.pcm), None
    state = train(model, code, config, state, log_path=args.log)
    save_checkpoint(args.out, model, state, config)
    print(f"trained {model.config.attention} model ({model.num_parameters()} parameters) for "
          f"{state.step} steps; final loss {state.loss:.5f}; checkpoint {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_ber(args) -> int:
    code = _code_from_args(args)
    decoder = bench.make_decoder(args.decoder, code)
    report = bench.run_ber(
        decoder,
        bench.parse_ebno_range(args.ebno),
        channel=ChannelConfig(args.modulation),
        stop=bench.StopRule(int(args.max_bits), args.target_errors, args.max_seconds),
        seed=args.seed,
        batch_size=args.batch,
        block_length=args.block_length,
        record_time=not args.no_clock,
        calibrate=args.calibrate,
    )
    _write(bench.emit(report, args.format), args.out)
    return EXIT_OK


def _cmd_timing(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    if args.attention_only:
        report = bench.run_attention_timing(sizes, proj_dim=args.fixed_k or 64, batch_size=args.batch,
                                            heads=args.heads, head_dim=args.dim // args.heads,
                                            repetitions=args.reps, seed=args.seed)
        _write(bench.timing_to_json(report), args.out)
        return EXIT_OK
    report = bench.run_timing(
        [d for d in args.decoders.split(",") if d],
        sizes,
        batch_size=args.batch,
        repetitions=args.reps,
        dim=args.dim,
        heads=args.heads,
        blocks=args.blocks,
        fixed_k=args.fixed_k,
        mask_division=args.mask_div,
        seed=args.seed,
    )
    _write(bench.timing_to_json(report), args.out)
    return EXIT_OK


def _cmd_makecode(args) -> int:
    code = _code_from_args(args)
    _write(save_alist(code.pcm), args.out)
    print(f"{code.spec.kind} code n={code.n} k={code.k} m={code.m} rate={float(code.rate):.4f}", file=sys.stderr)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(args.seed)
    worst = 0.0
    for name, err in results.items():
        print(f"{name:24s} max rel err {err:.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst < TOLERANCE else EXIT_RUNTIME


COMMANDS = {
    "train": _cmd_train,
    "ber": _cmd_ber,
    "timing": _cmd_timing,
    "makecode": _cmd_makecode,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"ecctlin {args.command}: {exc}\n")
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        sys.stderr.write(f"ecctlin {args.command}: error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
