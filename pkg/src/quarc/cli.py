"""Command-line front end.

Subcommands: ``gen-data`` (synthetic corpora), ``count-params`` (quaternion
versus real-mirror budget table), ``train``, ``eval`` and ``grad-check``.

Exit codes: 0 success, 1 usage or configuration problem, 2 bad data or a
broken file, 3 numeric failure (non-finite gradients, failed gradient check).
The ``QUARC_SEED`` environment variable supplies a default seed; the config
file and flags both override it.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .checkpoint import load_model
from .config import ModelConfig, config_lines, load_config
from .data import EmbeddingTable, read_dataset, split_samples, synth_generate
from .errors import ConfigError, NumericError, QuarcError
from .models import build_variant, ratio_report
from .train import evaluate, softmax_bce_loss, train_loop

GRAD_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this project reserves 2 for
    data problems, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _env_seed():
    raw = os.environ.get("QUARC_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"QUARC_SEED must be an integer, got {raw!r}") from None


def _base_config(**overrides) -> ModelConfig:
    cfg = ModelConfig(**overrides)
    env = _env_seed()
    if env is not None:
        cfg = replace(cfg, seed=env)
    return cfg


def _load_cfg(args, **tiny) -> ModelConfig:
    base = _base_config(**tiny)
    if args.config:
        return load_config(args.config, base=base)
    return base.validate()


def _load_table(cfg, data_dir) -> EmbeddingTable:
    from .errors import DataError

    path = cfg.embeddings or os.path.join(data_dir, "embeddings.txt")
    if not os.path.exists(path):
        raise DataError(f"no embedding table at {path}")
    return EmbeddingTable.load(path)


# -- subcommands ----------------------------------------------------------------


def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else (_env_seed() or 1)
    samples = synth_generate(args.task, args.n, seed, args.out, embed_dim=args.embed_dim)
    splits = split_samples(samples)
    print(
        f"wrote {len(samples)} samples to {args.out} "
        f"(train {len(splits['train'])}, val {len(splits['val'])}, "
        f"test {len(splits['test'])})"
    )
    return 0


def cmd_count_params(args):
    from .report import ratio_text_table, ratio_tsv, render_ratio_plot

    cfg = _load_cfg(args)
    rows = ratio_report(cfg)
    if args.format == "tsv":
        sys.stdout.write(ratio_tsv(rows))
    else:
        sys.stdout.write(ratio_text_table(rows))
    if args.plot:
        render_ratio_plot(args.plot, rows)
        print(f"wrote {args.plot}", file=sys.stderr)
    return 0


def cmd_train(args):
    from .report import render_training_plot, write_training_report

    cfg = _load_cfg(args)
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    for line in config_lines(cfg):
        print(f"# {line}")
    splits = split_samples(read_dataset(args.data))
    table = _load_table(cfg, args.data)
    model = build_variant(cfg)
    report = train_loop(
        model,
        table,
        cfg,
        splits["train"],
        splits["val"],
        splits["test"],
        threads=args.threads,
        checkpoint_path=args.out,
        log=print,
    )
    if args.report:
        write_training_report(args.report, report)
        print(f"wrote {args.report}")
        if args.plot:
            png = os.path.splitext(args.report)[0] + ".png"
            render_training_plot(
                png, report, title=f"variant {cfg.variant} ({cfg.algebra})"
            )
            print(f"wrote {png}")
    return 0


def cmd_eval(args):
    model, cfg = load_model(args.model)
    splits = split_samples(read_dataset(args.data))
    table = _load_table(cfg, args.data)
    metrics = evaluate(model, table, cfg, splits[args.split])
    print(f"split\t{args.split}")
    print(f"n\t{len(splits[args.split])}")
    for key in ("auc", "ap", "accuracy"):
        print(f"{key}\t{metrics[key]:.6f}")
    return 0


def _grad_check_inputs(cfg, rng):
    units = cfg.embed_units
    batch = 2
    inputs = {
        "tweet": rng.normal(size=(batch, cfg.max_len, 4 * units)),
        "imgtext": rng.normal(size=(batch, cfg.max_len, 4 * units)),
        "image": rng.uniform(0.0, 1.0, size=(batch, 8, 8, 4)),
        "features": rng.normal(size=(batch, 4 * cfg.feature_units)),
    }
    mask = np.ones((batch, cfg.max_len), dtype=bool)
    mask[1, cfg.max_len // 2 :] = False  # exercise the masked branch
    inputs["tweet_mask"] = mask
    inputs["imgtext_mask"] = mask.copy()
    return inputs, np.array([0, 1])


def cmd_grad_check(args):
    tiny = dict(
        embed_dim=8,
        max_len=8,
        conv_filters=4,
        common_dim=2,
        image_filters1=2,
        image_filters2=2,
        feature_dim=8,
        dropout=0.2,
    )
    cfg = _load_cfg(args, **tiny)
    if args.variant is not None:
        cfg = replace(cfg, variant=args.variant).validate()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()

    model = build_variant(cfg)
    inputs, labels = _grad_check_inputs(cfg, np.random.default_rng(cfg.seed))

    def run():
        probs, tape = model.forward(inputs, mode="train", step=0)
        return softmax_bce_loss(tape, probs, labels), tape

    print(f"variant {cfg.variant} ({cfg.algebra}), {len(model.params)} tensors")
    worst = 0.0
    failed = []
    block = None
    for p in model.params:
        if not p.trainable:
            continue
        prefix = p.name.split(".")[0]
        if prefix != block:
            block = prefix
            print(f"-- {block}")
        err = ad.finite_diff_check([p], run)
        worst = max(worst, err)
        status = "ok" if err <= GRAD_TOL else "FAIL"
        if status == "FAIL":
            failed.append(p.name)
        print(f"{status:4s}  {err:9.2e}  {p.name}")
    print(f"max relative error {worst:.2e} (tolerance {GRAD_TOL:.0e})")
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")
    return 0


# -- wiring ----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="quarc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--task", required=True, choices=("separable", "xor"))
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--embed-dim", type=int, default=100)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("count-params", help="parameter budget per variant")
    p.add_argument("--config", default=None)
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("train", help="train a variant and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, metavar="CKPT")
    p.add_argument("--report", default=None, metavar="TSV")
    p.add_argument("--plot", action="store_true", help="render a PNG next to the report")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference audit at toy size")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_grad_check)

    return parser


_EXIT_CODES = (
    (ConfigError, 1),
    (NumericError, 3),
    (QuarcError, 2),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QuarcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for kind, code in _EXIT_CODES:
            if isinstance(exc, kind):
                return code
        return 2


if __name__ == "__main__":
    sys.exit(main())
