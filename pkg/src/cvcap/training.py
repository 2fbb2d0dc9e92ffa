"""Training, evaluation, ablation and saliency measurement."""

from __future__ import annotations

import logging
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import decode_tokens, object_boxes, pad_batch, tokenize, union_box
from .decoder import beam_search, greedy_decode, teacher_forced_loss
from .features import FeatureMaps
from .metrics import METRIC_NAMES, EvalPair, evaluate
from .model import Captioner
from .rae import VARIANT_LABELS, Variant
from .tensor import Adam, CheckpointError, Tensor, no_grad

log = logging.getLogger("cvcap")


@dataclass
class TrainResult:
    model: Captioner
    initial_loss: float
    epoch_losses: list = field(default_factory=list)


def _features(model, ds, entries, cfg):
    p_i, p_r = ds.arrays(entries, cfg.n_samples, cfg.residual_mode)
    return model.extract(p_i, p_r if model.variant.uses_residuals else None)


def _precompute(model, ds, entries, cfg, chunk=32):
    """Frozen extractors: compute every video's features once."""
    parts_i, parts_r = [], []
    with no_grad():
        for s in range(0, len(entries), chunk):
            fm = _features(model, ds, entries[s : s + chunk], cfg)
            parts_i.append(fm.v_i.data)
            if fm.a_r is not None:
                parts_r.append(fm.a_r.data)
    return FeatureMaps(Tensor(np.concatenate(parts_i)), Tensor(np.concatenate(parts_r)) if parts_r else None)


def build_model(cfg, vocab_size, header=None):
    if header is None:
        return Captioner(cfg, vocab_size)
    return Captioner(cfg, vocab_size, header.channels, (header.height, header.width))


def train_model(cfg, ds, resume=None, on_epoch=None):
    model = build_model(cfg, len(ds.vocab), ds.header)
    if resume is not None:
        model.load_state_bytes(resume)
    entries = ds.train
    records = [ds.records(e, cfg.max_len) for e in entries]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    opt = Adam(model.parameters(), lr=cfg.lr)
    cached = _precompute(model, ds, entries, cfg) if cfg.frozen else None
    initial = None
    result = TrainResult(model, float("nan"))
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(entries))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            caps = pad_batch([records[i][rng.integers(len(records[i]))] for i in idx])
            if cached is not None:
                fm = cached.take(idx)
            else:
                fm = _features(model, ds, [entries[i] for i in idx], cfg)
            loss = teacher_forced_loss(model, fm, caps, training=True, rng=rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            if initial is None:
                initial = loss.item()
        result.epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, result.epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, result.epoch_losses[-1])
    result.initial_loss = float("nan") if initial is None else initial
    return result


# ---------------------------------------------------------------- evaluation


def _threads():
    try:
        return max(1, int(os.environ.get("RAE_THREADS", "1")))
    except ValueError:
        return 1


def caption_entries(model, ds, entries, cfg, beam_size=None, greedy=False):
    """[(video_id, token ids, log_prob)] in entry order."""
    beam_size = beam_size or cfg.beam_size
    max_len = cfg.max_len - 1

    def one(entry):
        with no_grad():
            fm = _features(model, ds, [entry], cfg)
            hyp = greedy_decode(model, fm, max_len) if greedy else beam_search(model, fm, beam_size, max_len)[0]
        return entry.video_id, hyp.tokens, hyp.log_prob

    workers = _threads()
    if workers == 1:
        return [one(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, entries))


def score_captions(ds, entries, captions):
    pairs = []
    for entry, (_, toks, _) in zip(entries, captions):
        refs = [tokenize(c) for c in entry.captions]
        pairs.append(EvalPair(tokenize(decode_tokens(toks, ds.vocab)), refs))
    return evaluate(pairs)


def format_captions(ds, captions):
    return "".join(f"{vid}\t{decode_tokens(toks, ds.vocab)}\t{lp:.6f}\n" for vid, toks, lp in captions)


def evaluate_model(model, ds, cfg, entries=None, beam_size=None, greedy=False):
    entries = ds.test if entries is None else entries
    caps = caption_entries(model, ds, entries, cfg, beam_size, greedy)
    return score_captions(ds, entries, caps), caps


# ---------------------------------------------------------------- ablation

TABLE_COLUMNS = ("BLEU@1", "BLEU@2", "BLEU@3", "BLEU@4", "METEOR", "CIDEr", "ROUGE-L")
ABLATION_ORDER = (Variant.IFRAME_ONLY, Variant.NO_GATE_NO_RESIDUALS, Variant.NO_GATE, Variant.FULL)


def run_ablation(cfg, ds, seeds=None, partial_path=None, on_model=None):
    """Train and score every variant for every seed.

    Returns {variant: [scores per seed]}; each finished cell is appended to
    ``partial_path`` so a failure leaves the completed cells on disk.
    ``on_model(cell_cfg, model)`` sees every trained model.
    """
    seeds = tuple(seeds or cfg.ablation_seeds)
    results = {v: [] for v in ABLATION_ORDER}
    if partial_path is not None:
        Path(partial_path).write_text("variant\tseed\t" + "\t".join(METRIC_NAMES) + "\n")
    for seed in seeds:
        for variant in ABLATION_ORDER:
            cell = cfg.replace(seed=seed, variant=variant)
            log.info("ablation cell variant=%s seed=%d", variant.value, seed)
            model = train_model(cell, ds).model
            scores, _ = evaluate_model(model, ds, cell)
            results[variant].append(scores)
            if on_model is not None:
                on_model(cell, model)
            if partial_path is not None:
                with open(partial_path, "a", encoding="utf-8") as fh:
                    vals = "\t".join(f"{100 * scores[m]:.4f}" for m in METRIC_NAMES)
                    fh.write(f"{variant.value}\t{seed}\t{vals}\n")
    return results


def mean_score(results, variant, metric):
    return float(np.mean([s[metric] for s in results[variant]]))


def format_table(results):
    """Markdown table in the row/column layout of the variant comparison.

    Cells are mean +- stddev over seeds, as percentages; METEOR is not
    computed and shown as '-'.
    """
    head = "| Model | " + " | ".join(TABLE_COLUMNS) + " |"
    sep = "|---" * (len(TABLE_COLUMNS) + 1) + "|"
    rows = [head, sep]
    for variant in ABLATION_ORDER:
        cells = []
        for col in TABLE_COLUMNS:
            vals = [100 * s[col] for s in results.get(variant, []) if col in s]
            if not vals:
                cells.append("-")
            else:
                sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
                cells.append(f"{np.mean(vals):.1f} ± {sd:.1f}")
        rows.append(f"| {VARIANT_LABELS[variant]} | " + " | ".join(cells) + " |")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- saliency


def frame_boxes(entry, cfg, gop_indices):
    """Union object box (pixels) over the frames of each sampled GOP."""
    boxes = object_boxes(entry.spec, cfg.frames, (cfg.height, cfg.width))
    out = []
    for g in gop_indices:
        lo, hi = g * cfg.gop_size, min((g + 1) * cfg.gop_size, cfg.frames)
        out.append(union_box(boxes[lo:hi]))
    return out


def argmax_hits(att, boxes, frame_shape):
    """Per frame: does the attention argmax cell centre fall inside the box?"""
    n, gh, gw = att.shape
    ch, cw = frame_shape[0] / gh, frame_shape[1] / gw
    hits = []
    for k in range(n):
        r, c = np.unravel_index(int(np.argmax(att[k])), (gh, gw))
        cy, cx = (r + 0.5) * ch, (c + 0.5) * cw
        y0, x0, y1, x1 = boxes[k]
        hits.append(bool(y0 <= cy < y1 and x0 <= cx < x1))
    return hits


def saliency_hit_rate(model, ds, cfg, entries):
    hits = []
    with no_grad():
        for e in entries:
            stack = ds.frame_stack(e, cfg.n_samples, cfg.residual_mode)
            fm = _features(model, ds, [e], cfg)
            att = model.first_step_attention(fm)[0]
            hits += argmax_hits(att, frame_boxes(e, cfg, stack.gop_indices), (cfg.height, cfg.width))
    return float(np.mean(hits)), hits


def residual_locality(cv, boxes_per_frame):
    """Share of |residual| mass inside the per-GOP union object box."""
    inside = total = 0.0
    frame = 0
    for gop in cv.gops:
        span = boxes_per_frame[frame : frame + len(gop)]
        y0, x0, y1, x1 = union_box(span)
        for pf in gop.pframes:
            mag = np.abs(pf.residual_q).astype(np.float64)
            total += mag.sum()
            inside += mag[y0:y1, x0:x1].sum()
        frame += len(gop)
    return 1.0 if total == 0 else inside / total


# ---------------------------------------------------------------- checkpoint files


def save_checkpoint(model, cfg, path):
    path = Path(path)
    path.write_bytes(model.state_bytes())
    Path(str(path) + ".cfg").write_text(f"# fingerprint {cfg.fingerprint()}\n# vocab_size {model.vocab_size}\n" + cfg.to_text())


def read_checkpoint_config(path):
    text = Path(str(path) + ".cfg").read_text()
    vocab_size = None
    for line in text.splitlines():
        if line.startswith("# vocab_size"):
            vocab_size = int(line.split()[-1])
    return ExperimentConfig.from_text(text), vocab_size


def load_checkpoint(path, ds):
    cfg, vocab_size = read_checkpoint_config(path)
    if vocab_size is not None and vocab_size != len(ds.vocab):
        raise CheckpointError(f"checkpoint vocabulary has {vocab_size} tokens, dataset has {len(ds.vocab)}")
    model = build_model(cfg, len(ds.vocab), ds.header)
    model.load_state_bytes(Path(path).read_bytes())
    return model, cfg
