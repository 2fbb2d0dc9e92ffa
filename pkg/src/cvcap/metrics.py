"""Corpus-level caption metrics: BLEU@1-4, ROUGE-L and CIDEr(-D).

The definitions follow the COCO caption evaluation toolkit: corpus BLEU
with closest reference length and no smoothing, ROUGE-L with beta = 1.2,
and the clipped, length-penalised tf-idf cosine that the toolkit reports
as CIDEr.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

SPECIAL_TOKENS = frozenset({"<BOS>", "<EOS>", "<PAD>", "<UNK>"})


@dataclass
class EvalPair:
    candidate: tuple
    references: tuple

    def __post_init__(self):
        self.candidate = tuple(t for t in _toks(self.candidate) if t not in SPECIAL_TOKENS)
        self.references = tuple(tuple(t for t in _toks(r) if t not in SPECIAL_TOKENS) for r in self.references)
        if not self.references:
            raise ValueError("an evaluation pair needs at least one reference")


def _toks(seq):
    return seq.split() if isinstance(seq, str) else list(seq)


def ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU


def bleu_stats(pairs, max_n=4):
    """Clipped matches and guesses per order, plus (cand_len, ref_len)."""
    correct = [0] * max_n
    guess = [0] * max_n
    c_len = r_len = 0
    for p in pairs:
        cand = p.candidate
        c_len += len(cand)
        ref_lens = [len(r) for r in p.references]
        # closest reference length, shorter one on ties
        r_len += min(ref_lens, key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_n + 1):
            cand_counts = ngrams(cand, n)
            max_ref = Counter()
            for r in p.references:
                for g, c in ngrams(r, n).items():
                    max_ref[g] = max(max_ref[g], c)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in cand_counts.items())
            guess[n - 1] += max(len(cand) - n + 1, 0)
    return correct, guess, c_len, r_len


def brevity_penalty(c_len, r_len):
    if c_len == 0:
        return 0.0
    if c_len >= r_len:
        return 1.0
    return math.exp(1.0 - r_len / c_len)


def bleu(pairs, n=4):
    if n not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {n}")
    correct, guess, c_len, r_len = bleu_stats(pairs, n)
    log_sum = 0.0
    for k in range(n):
        if correct[k] == 0 or guess[k] == 0:
            return 0.0
        log_sum += math.log(correct[k] / guess[k])
    return brevity_penalty(c_len, r_len) * math.exp(log_sum / n)


# ---------------------------------------------------------------- ROUGE-L


def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(candidate, references, beta=1.2):
    """Toolkit form: best precision and best recall over references, then F."""
    if not candidate:
        return 0.0
    precs, recs = [], []
    for r in references:
        lcs = lcs_length(candidate, r)
        precs.append(lcs / len(candidate))
        recs.append(lcs / len(r) if r else 0.0)
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(pairs, beta=1.2):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("ROUGE-L needs at least one pair")
    return sum(rouge_l_sentence(p.candidate, p.references, beta) for p in pairs) / len(pairs)


# ---------------------------------------------------------------- CIDEr


@dataclass
class CorpusStats:
    document_frequency: Counter
    log_num_docs: float


def corpus_stats(pairs, max_n=4):
    """Document frequency of every n-gram over the per-video reference sets."""
    df = Counter()
    pairs = list(pairs)
    for p in pairs:
        seen = set()
        for r in p.references:
            for n in range(1, max_n + 1):
                seen.update(ngrams(r, n))
        df.update(seen)
    return CorpusStats(df, math.log(float(len(pairs))) if pairs else 0.0)


def _tfidf(tokens, stats, max_n):
    vecs, norms = [], []
    for n in range(1, max_n + 1):
        vec = {g: tf * (stats.log_num_docs - math.log(max(1.0, stats.document_frequency[g])))
               for g, tf in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_sentence(candidate, references, stats, max_n=4, sigma=6.0):
    c_vec, c_norm = _tfidf(candidate, stats, max_n)
    total = [0.0] * max_n
    for ref in references:
        r_vec, r_norm = _tfidf(ref, stats, max_n)
        delta = float(len(candidate) - len(ref))
        penalty = math.exp(-(delta**2) / (2 * sigma**2))
        for k in range(max_n):
            val = sum(min(v, r_vec[k].get(g, 0.0)) * r_vec[k].get(g, 0.0) for g, v in c_vec[k].items())
            if c_norm[k] != 0 and r_norm[k] != 0:
                val /= c_norm[k] * r_norm[k]
            total[k] += val * penalty
    return 10.0 * (sum(total) / max_n) / len(references)


def cider(pairs, stats=None, max_n=4, sigma=6.0):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("CIDEr needs at least one pair")
    stats = stats if stats is not None else corpus_stats(pairs, max_n)
    return sum(cider_sentence(p.candidate, p.references, stats, max_n, sigma) for p in pairs) / len(pairs)


# ---------------------------------------------------------------- report

METRIC_NAMES = ("BLEU@1", "BLEU@2", "BLEU@3", "BLEU@4", "CIDEr", "ROUGE-L")


def evaluate(pairs):
    """All metrics as fractions (CIDEr on its x10 scale), in table column order."""
    pairs = list(pairs)
    scores = {f"BLEU@{n}": bleu(pairs, n) for n in range(1, 5)}
    scores["CIDEr"] = cider(pairs)
    scores["ROUGE-L"] = rouge_l(pairs)
    return scores


def format_report(scores):
    return "".join(f"{name}\t{100.0 * scores[name]:.1f}\n" for name in METRIC_NAMES if name in scores)


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if line.strip():
            name, val = line.split("\t")
            out[name] = float(val) / 100.0
    return out
