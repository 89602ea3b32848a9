"""Automatic response-quality metrics: BLEU-n, embedding Average/Extrema/
Greedy, distinct-n and ground-truth vocabulary coverage (recall).

Sentences are sequences of hashable tokens (words or ids).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu_n(hypotheses, references, n):
    """Corpus BLEU with uniform weights over orders 1..n, scaled by 100.

    Clipped n-gram precisions are pooled over the corpus; brevity penalty
    exp(1 - r/c) applies when the total hypothesis length c is below the total
    reference length r. No smoothing: any zero precision gives 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if not hypotheses:
        raise ValueError("empty corpus")
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be in 1..4")
    matched = [0] * n
    total = [0] * n
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        c += len(hyp)
        r += len(ref)
        for k in range(1, n + 1):
            h = Counter(_ngrams(hyp, k))
            rc = Counter(_ngrams(ref, k))
            matched[k - 1] += sum(min(cnt, rc[g]) for g, cnt in h.items())
            total[k - 1] += sum(h.values())
    if c == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


class EmbeddingTable:
    """Word vectors of a fixed dimension; unknown words are skipped."""

    def __init__(self, vectors, dim):
        self.vectors = {w: np.asarray(v, dtype=float) for w, v in vectors.items()}
        self.dim = int(dim)
        for w, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise ValueError(f"vector for {w!r} has shape {v.shape}, expected ({self.dim},)")

    @classmethod
    def load(cls, path):
        """Text format: header ``count dim`` then ``word v1 ... vd`` per line."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ValueError(f"{path}: empty embedding file")
        count, dim = (int(x) for x in lines[0].split())
        vectors = {}
        for lineno, line in enumerate(lines[1:], 2):
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected a word and {dim} values")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        if len(vectors) != count:
            raise ValueError(f"{path}: header announces {count} vectors, found {len(vectors)}")
        return cls(vectors, dim)

    def lookup(self, tokens):
        rows = [self.vectors[t] for t in tokens if t in self.vectors]
        return np.array(rows).reshape(len(rows), self.dim)

    def __contains__(self, word):
        return word in self.vectors


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _extrema(mat):
    mx, mn = mat.max(axis=0), mat.min(axis=0)
    return np.where(mx >= -mn, mx, mn)


def _greedy(a, b):
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-300)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-300)
    return float((an @ bn.T).max(axis=1).mean())


def embedding_metrics(hypothesis, reference, table):
    """(average, extrema, greedy) for one pair, or None when a side has no known word."""
    h, r = table.lookup(hypothesis), table.lookup(reference)
    if len(h) == 0 or len(r) == 0:
        return None
    average = _cos(h.mean(axis=0), r.mean(axis=0))
    extrema = _cos(_extrema(h), _extrema(r))
    greedy = 0.5 * (_greedy(h, r) + _greedy(r, h))
    return average, extrema, greedy


def corpus_embedding_metrics(hypotheses, references, table):
    """Mean of the three embedding metrics over pairs; returns (avg, ext, greedy, n_used, n_skipped)."""
    scores, skipped = [], 0
    for hyp, ref in zip(hypotheses, references):
        s = embedding_metrics(hyp, ref, table)
        if s is None:
            skipped += 1
        else:
            scores.append(s)
    if not scores:
        return 0.0, 0.0, 0.0, 0, skipped
    avg, ext, gre = np.mean(scores, axis=0)
    return float(avg), float(ext), float(gre), len(scores), skipped


def distinct_n(responses, n):
    """Distinct n-grams over total n-grams across all responses."""
    if not responses:
        raise ValueError("no responses")
    grams = [g for resp in responses for g in _ngrams(list(resp), n)]
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def recall_coverage(vocabularies, responses):
    """Mean fraction of distinct ground-truth words contained in the dynamic vocabulary."""
    if len(vocabularies) != len(responses):
        raise ValueError("vocabularies and responses differ in length")
    if not responses:
        raise ValueError("no instances")
    fractions = []
    for vocab, resp in zip(vocabularies, responses):
        words = set(resp)
        if not words:
            raise ValueError("ground-truth response is empty")
        vocab = set(vocab)
        fractions.append(len(words & vocab) / len(words))
    return float(np.mean(fractions))


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    average: float
    extrema: float
    greedy: float
    distinct1: float
    distinct2: float
    recall: float | None
    n_pairs: int
    n_embedding_pairs: int
    n_embedding_skipped: int

    def to_text(self):
        lines = [f"{k}={_fmt(v)}" for k, v in asdict(self).items()]
        return "\n".join(lines) + "\n"

    def pretty(self):
        rec = "n/a" if self.recall is None else f"{self.recall:.4f}"
        return (
            f"pairs evaluated      {self.n_pairs}\n"
            f"BLEU-1/2/3           {self.bleu1:.2f} / {self.bleu2:.2f} / {self.bleu3:.2f}\n"
            f"Average/Extrema/Greedy {self.average:.4f} / {self.extrema:.4f} / {self.greedy:.4f}"
            f"  ({self.n_embedding_pairs} pairs, {self.n_embedding_skipped} skipped)\n"
            f"distinct-1/2         {self.distinct1:.4f} / {self.distinct2:.4f}\n"
            f"recall               {rec}\n"
        )

    @classmethod
    def from_text(cls, text):
        values = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        kwargs = {}
        for k, v in values.items():
            if v == "None":
                kwargs[k] = None
            elif k.startswith("n_"):
                kwargs[k] = int(v)
            else:
                kwargs[k] = float(v)
        return cls(**kwargs)


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def evaluate(hypotheses, references, table=None, vocabularies=None):
    """Compute the full report. ``vocabularies`` enables the recall measure."""
    avg = ext = gre = 0.0
    used = skipped = 0
    if table is not None:
        avg, ext, gre, used, skipped = corpus_embedding_metrics(hypotheses, references, table)
    recall = None if vocabularies is None else recall_coverage(vocabularies, references)
    return MetricReport(
        bleu1=bleu_n(hypotheses, references, 1),
        bleu2=bleu_n(hypotheses, references, 2),
        bleu3=bleu_n(hypotheses, references, 3),
        average=avg,
        extrema=ext,
        greedy=gre,
        distinct1=distinct_n(hypotheses, 1),
        distinct2=distinct_n(hypotheses, 2),
        recall=recall,
        n_pairs=len(hypotheses),
        n_embedding_pairs=used,
        n_embedding_skipped=skipped,
    )
