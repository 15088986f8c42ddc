"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure
(divergence, or a gradient check above its threshold).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfg
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Vocab, generate_corpus, write_corpus
from .ffn import VARIANT_NAMES
from .gradcheck import layer_gradcheck, model_gradcheck
from .tensor import precision
from .train import (
    ParameterMismatchError,
    compare_variants,
    eval_batches_for,
    heldout_log_perplexity,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONFIG_NAME = "config.txt"

log = logging.getLogger("glulab")


class UsageError(Exception):
    pass


def _parse_set(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise cfg.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _run_config(args, **flags) -> cfg.RunConfig:
    overrides = _parse_set(getattr(args, "set", None))
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return cfg.load(getattr(args, "config", None), overrides)


def _echo_config(run: cfg.RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(run.to_text())


# --- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    vocab = Vocab(args.vocab_size, args.num_sentinels)
    tokens = generate_corpus(args.seed, args.tokens, vocab)
    header = {"seed": args.seed, "tokens": args.tokens, "vocab_size": args.vocab_size, "num_sentinels": args.num_sentinels}
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_corpus(args.out, tokens, header)
    except OSError as exc:
        raise cfg.ConfigError(f"cannot write {args.out}: {exc.strerror}") from None
    print(f"wrote {args.tokens} tokens to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args, variant=args.variant, seed=args.seed, steps=args.steps, out=args.out)
    out = Path(run.out)
    _echo_config(run, out)
    report = train(
        run.model_config(),
        run.data_config(),
        run.schedule(),
        run.steps,
        run.seed,
        optimizer=run.optimizer,
        eval_interval=run.eval_interval or None,
        dtype=run.precision,
    )
    report.write_metrics(out / "metrics.csv")
    if report.diverged:
        print(f"diverged: {report.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    save_checkpoint(report.model, out / "checkpoint")
    print(
        f"variant={run.variant} seed={run.seed} steps={run.steps} "
        f"heldout_log_ppl {report.initial_log_ppl:.4f} -> {report.final_log_ppl:.4f} "
        f"({report.wall_clock:.1f}s)"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _run_config(args)
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise cfg.ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    with precision(run.precision):
        value = heldout_log_perplexity(model, eval_batches_for(model.config, run.data_config()))
    print(f"heldout_log_ppl = {value!r}")
    return EXIT_OK


def cmd_compare(args) -> int:
    run = _run_config(args, seeds=args.seeds, steps=args.steps, out=args.out, workers=args.workers)
    variants = list(VARIANT_NAMES) if args.variants == "all" else [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise cfg.ConfigError("--variants is empty")
    out = Path(run.out)
    _echo_config(run, out)
    table = compare_variants(
        run.model_config(variant=variants[0]),
        variants,
        run.data_config(),
        steps=run.steps,
        seeds=[run.seed + i for i in range(run.seeds)],
        warmup_steps=run.warmup_steps or None,
        optimizer=run.optimizer,
        workers=run.workers,
        out_dir=out,
    )
    text = table.to_text()
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(table.to_csv())
    print(text, end="")
    if any(r.result.failed for r in table.rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if not 0.0 < args.eps <= 1e-2:
        raise cfg.ConfigError(f"--eps must lie in (0, 1e-2], got {args.eps}")
    variants = list(VARIANT_NAMES) if args.variant == "all" else [args.variant]
    threshold = args.threshold
    if threshold is None:
        threshold = {"small": 1e-5, "layer": 1e-6}[args.dims]
        if args.linear:
            threshold = 1e-10
    failed = False
    with precision("float64"):
        for v in variants:
            if args.dims == "layer":
                report = layer_gradcheck(v, args.eps, linear=args.linear)
            else:
                report = model_gradcheck(v, args.eps, linear=args.linear, max_coords=args.max_coords or None)
            worst_name = max(report, key=report.get)
            worst = report[worst_name]
            ok = worst < threshold
            failed |= not ok
            print(f"{v:<9} max_rel_error={worst:.3e} ({worst_name}) {'ok' if ok else 'FAIL'} threshold={threshold:g}")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_defaults(args) -> int:
    print(cfg.RunConfig().to_text(), end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _variant(value: str) -> str:
    from .ffn import FfnVariant

    try:
        return FfnVariant.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file (see `glulab defaults`)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key; repeatable; wins over --config")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glulab", description="Gated-FFN transformer experiments on a synthetic span-corruption task.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic token corpus")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--tokens", type=int, default=200_000)
    p.add_argument("--vocab-size", type=int, default=64, help="total vocabulary incl. pad, eos and sentinels (default 64)")
    p.add_argument("--num-sentinels", type=int, default=16)
    p.add_argument("--out", required=True, help="output corpus file")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model; writes metrics.csv, checkpoint/ and config.txt")
    _add_config_flags(p)
    p.add_argument("--variant", type=_variant, help=f"one of: {', '.join(VARIANT_NAMES)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="heldout log-perplexity of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory written by `train`")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="parameter-matched multi-seed comparison of FFN variants")
    _add_config_flags(p)
    p.add_argument("--variants", default="all", help="'all' or a comma-separated list")
    p.add_argument("--seeds", type=int, default=4, help="runs per variant (default 4)")
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the autograd gradients")
    p.add_argument("--variant", default="all", type=lambda s: s if s == "all" else _variant(s))
    p.add_argument("--dims", choices=("small", "layer"), default="small", help="small: full tiny model; layer: one FFN layer")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--linear", action="store_true", help="replace FFN activations by the identity")
    p.add_argument("--threshold", type=float, help="default 1e-5 (small), 1e-6 (layer), 1e-10 (layer --linear)")
    p.add_argument("--max-coords", type=int, default=6, help="coordinates per tensor for --dims small (0 = all)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("defaults", help="print every config key with its default")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (cfg.ConfigError, ParameterMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
