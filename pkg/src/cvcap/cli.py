"""Command-line driver: ``cvcap {gen,train,eval,ablate,extract,visualize}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec
from .config import ConfigError, ExperimentConfig
from .data import Vocabulary, decode_tokens
from .decoder import beam_search
from .dataset import generate_dataset, load_dataset
from .metrics import format_report
from .netpbm import write_netpbm
from .rae import Variant, write_attention_pgm
from .tensor import CheckpointError, DimensionError, no_grad
from .training import (
    build_model,
    caption_entries,
    format_captions,
    format_table,
    load_checkpoint,
    read_checkpoint_config,
    run_ablation,
    save_checkpoint,
    score_captions,
    train_model,
)

log = logging.getLogger("cvcap")


class CliError(Exception):
    """A diagnostic for the user; printed without a traceback."""


def _config(args, dataset_dir=None):
    base = None
    if dataset_dir is not None and (Path(dataset_dir) / "config.cfg").exists():
        base = ExperimentConfig.load(Path(dataset_dir) / "config.cfg")
    cfg = ExperimentConfig.load(args.config, base) if args.config else (base or ExperimentConfig())
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        changes["variant"] = Variant.parse(args.variant)
    if getattr(args, "beam", None) is not None:
        changes["beam_size"] = args.beam
    return cfg.replace(**changes) if changes else cfg


def _check_dataset_compat(cfg, ds):
    h = ds.header
    if h is None:
        return
    if (h.height, h.width) != (cfg.height, cfg.width) or h.channels != cfg.channels:
        raise CliError(
            f"config frame size {cfg.height}x{cfg.width}x{cfg.channels} does not match the dataset "
            f"({h.height}x{h.width}x{h.channels})"
        )


def _vocab_path(ckpt):
    return Path(str(ckpt) + ".vocab")


# ---------------------------------------------------------------- commands


def cmd_gen(args):
    cfg = _config(args)
    out = generate_dataset(cfg, args.out)
    print(f"wrote {cfg.n_train + cfg.n_test} bitstreams to {out}")


def cmd_train(args):
    ds = load_dataset(args.data)
    cfg = _config(args, args.data)
    _check_dataset_compat(cfg, ds)
    resume = None
    if args.resume:
        saved_cfg, vocab_size = read_checkpoint_config(args.resume)
        for key in ("d_i", "d_r", "hidden_dim", "embed_dim", "rep_dim", "gate_dim", "variant"):
            if getattr(saved_cfg, key) != getattr(cfg, key):
                raise CliError(f"cannot resume: {key} is {getattr(saved_cfg, key)} in the checkpoint, "
                               f"{getattr(cfg, key)} in the config")
        if vocab_size != len(ds.vocab):
            raise CliError(f"cannot resume: checkpoint vocabulary {vocab_size}, dataset {len(ds.vocab)}")
        resume = Path(args.resume).read_bytes()
    result = train_model(cfg, ds, resume=resume)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, cfg, out)
    ds.vocab.save(_vocab_path(out))
    with open(str(out) + ".loss", "w", encoding="utf-8") as fh:
        fh.write(f"initial\t{result.initial_loss:.6f}\n")
        for i, v in enumerate(result.epoch_losses, 1):
            fh.write(f"epoch{i}\t{v:.6f}\n")
    print(f"checkpoint {out} (fingerprint {cfg.fingerprint()[:12]})")


def _load_for_eval(ckpt, ds):
    vpath = _vocab_path(ckpt)
    if vpath.exists():
        saved = Vocabulary.load(vpath)
        if saved.tokens != ds.vocab.tokens:
            raise CliError(f"vocabulary mismatch: checkpoint has {len(saved)} tokens, dataset has {len(ds.vocab)}"
                           " or they differ in order")
    return load_checkpoint(ckpt, ds)


def cmd_eval(args):
    ds = load_dataset(args.data)
    model, cfg = _load_for_eval(args.checkpoint, ds)
    beam = args.beam or cfg.beam_size
    entries = ds.train if args.split == "train" else ds.test
    caps = caption_entries(model, ds, entries, cfg, beam_size=beam, greedy=args.greedy)
    scores = score_captions(ds, entries, caps)
    report = format_report(scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report)
    (out / "captions.tsv").write_text(format_captions(ds, caps))
    sys.stdout.write(report)


def cmd_ablate(args):
    ds = load_dataset(args.data)
    cfg = _config(args, args.data)
    _check_dataset_compat(cfg, ds)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else cfg.ablation_seeds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(cfg, ds, seeds, partial_path=out / "partial.tsv")
    table = format_table(results)
    (out / "table.md").write_text(table)
    sys.stdout.write(table)


def _residual_gray(p_r):
    return p_r.mean(axis=-1)


def cmd_extract(args):
    cv = codec.read_bitstream(args.bitstream)
    n = args.n or len(cv.gops)
    stack = codec.sample_frame_stack(cv, n, args.residual_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(stack.p_i.shape[0]):
        write_netpbm(out / f"iframe_{k:03d}.ppm", stack.p_i[k])
        write_netpbm(out / f"residual_{k:03d}.pgm", _residual_gray(stack.p_r[k]))
    print(f"wrote {2 * stack.p_i.shape[0]} images to {out}")


def cmd_visualize(args):
    ckpt = Path(args.checkpoint)
    vpath = _vocab_path(ckpt)
    if not vpath.exists():
        raise CliError(f"missing vocabulary sidecar {vpath}")
    vocab = Vocabulary.load(vpath)
    cfg, _ = read_checkpoint_config(ckpt)
    if not cfg.variant.uses_attention:
        raise CliError("the I-frame-only variant has no attention map to visualise")
    cv = codec.read_bitstream(args.bitstream)
    h = cv.header
    if (h.height, h.width, h.channels) != (cfg.height, cfg.width, cfg.channels):
        raise CliError("bitstream frame size does not match the checkpoint config")

    model = build_model(cfg, len(vocab), h)
    model.load_state_bytes(ckpt.read_bytes())
    stack = codec.sample_frame_stack(cv, cfg.n_samples, cfg.residual_mode)
    with no_grad():
        fm = model.extract(stack.p_i[None], stack.p_r[None] if model.variant.uses_residuals else None)
        att = model.first_step_attention(fm)[0]
        hyp = beam_search(model, fm, args.beam or cfg.beam_size, cfg.max_len - 1)[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(stack.p_i.shape[0]):
        write_netpbm(out / f"iframe_{k:03d}.ppm", stack.p_i[k])
        write_netpbm(out / f"residual_{k:03d}.pgm", _residual_gray(stack.p_r[k]))
        write_attention_pgm(out / f"attention_{k:03d}.pgm", att[k], h.height, h.width)
    caption = decode_tokens(hyp.tokens, vocab)
    (out / "caption.txt").write_text(caption + "\n")
    if args.raw:
        np.save(out / "attention.npy", att)
    print(caption)


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="cvcap", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, variant=False, beam=False):
        sp.add_argument("--config", type=Path, help="key = value experiment config")
        if seed:
            sp.add_argument("--seed", type=int)
        if variant:
            sp.add_argument("--variant", help=", ".join(v.value for v in Variant))
        if beam:
            sp.add_argument("--beam", type=int)

    g = sub.add_parser("gen", help="render and encode the synthetic corpus")
    common(g)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one variant")
    common(t, variant=True)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--resume", type=Path)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="caption and score a split")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--beam", type=int)
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score all four variants over seeds")
    common(a, seed=False, beam=True)
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--seeds", help="comma-separated, default from config")
    a.add_argument("--out", type=Path, required=True)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("extract", help="dump sampled I-frames and residuals from a bitstream")
    x.add_argument("bitstream", type=Path)
    x.add_argument("--n", type=int, help="frames to sample (default: one per GOP)")
    x.add_argument("--residual-mode", default="first_pframe", choices=("first_pframe", "gop_accumulated"))
    x.add_argument("--out", type=Path, required=True)
    x.set_defaults(func=cmd_extract)

    vz = sub.add_parser("visualize", help="attention heatmaps for one bitstream")
    vz.add_argument("bitstream", type=Path)
    vz.add_argument("--checkpoint", type=Path, required=True)
    vz.add_argument("--beam", type=int)
    vz.add_argument("--raw", action="store_true", help="also save the attention array as .npy")
    vz.add_argument("--out", type=Path, required=True)
    vz.set_defaults(func=cmd_visualize)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, ConfigError, CheckpointError, DimensionError, codec.CodecError) as exc:
        print(f"cvcap {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"cvcap {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
