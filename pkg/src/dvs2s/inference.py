"""Response generation: top-K dynamic vocabulary + beam search restricted to it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dvs2s import kernels, model
from dvs2s.corpus import BOS, EOS


@dataclass
class BeamHypothesis:
    tokens: tuple
    log_prob: float
    state: np.ndarray
    finished: bool

    def sort_key(self):
        return (-self.log_prob, len(self.tokens), self.tokens)


class MacCounter:
    """Exact multiply-accumulate counts, grouped by network component."""

    def __init__(self):
        self.counts = {"gru": 0, "attention": 0, "projection": 0, "construction": 0}

    def add(self, part, n):
        self.counts[part] += int(n)

    def __getitem__(self, part):
        return self.counts[part]


@dataclass
class PreparedDecoder:
    """Per-message decoding context: memory, attention keys and the projection
    rows of the dynamic vocabulary gathered once."""

    memory: np.ndarray
    keys: np.ndarray
    final: np.ndarray
    selected: np.ndarray
    proj_W: np.ndarray
    proj_b: np.ndarray
    eos_pos: int


def prepare(enc, dyn, params):
    m = enc.memory.shape[1]
    keys = enc.memory @ params["att_W"][:, :m].T
    sel = np.asarray(dyn.selected)
    if sel.size == params["proj_W"].shape[0]:
        W, b = params["proj_W"], params["proj_b"]  # full vocabulary: no gather
    else:
        W, b = params["proj_W"][sel], params["proj_b"][sel]
    eos = np.searchsorted(sel, EOS)
    if eos >= sel.size or sel[eos] != EOS:
        raise ValueError("dynamic vocabulary must contain EOS")
    return PreparedDecoder(enc.memory, keys, enc.final, sel, W, b, int(eos))


def _step(params, prep, prev_ids, states, counter=None):
    """Batched decoder step over hypotheses. Returns (log-probs over selected, new states)."""
    emb = params["emb"][prev_ids]
    dec = (params["dec_Wz"], params["dec_Uz"], params["dec_Wr"], params["dec_Ur"], params["dec_Wh"], params["dec_Uh"])
    h_new, _ = model._gru_forward(emb, states, dec)
    m = states.shape[1]
    q = h_new @ params["att_W"][:, m:].T
    u = np.tanh(prep.keys[None, :, :] + q[:, None, :])
    e = u @ params["att_v"]
    e -= e.max(axis=1, keepdims=True)
    alpha = np.exp(e)
    alpha /= alpha.sum(axis=1, keepdims=True)
    c = alpha @ prep.memory
    z = np.concatenate([emb, states, c], axis=1)
    scores = z @ prep.proj_W.T + prep.proj_b
    if counter is not None:
        k, p = emb.shape
        t = prep.memory.shape[0]
        a = q.shape[1]
        counter.add("gru", k * 3 * m * (p + m))
        counter.add("attention", k * (m * a + t * a + t * m))
        counter.add("projection", k * z.shape[1] * prep.selected.size)
    return kernels.log_softmax_rows(scores), h_new


def beam_search(enc, dyn, params, beam, max_len, min_len=0, counter=None):
    """Beam search restricted to ``dyn``.

    Hypotheses that emit EOS move to a finished pool and leave the beam, which
    shrinks accordingly. Scores are un-normalised total log-probabilities.
    EOS is disallowed before position ``min_len``. Returns up to ``beam``
    finished hypotheses ranked by (log-prob desc, length asc, tokens asc),
    followed by unfinished ones if fewer than ``beam`` finished.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    prep = prepare(enc, dyn, params)
    sel = prep.selected
    active = [BeamHypothesis((), 0.0, np.asarray(prep.final), False)]
    finished = []
    for pos in range(max_len):
        width = beam - len(finished)
        if width <= 0 or not active:
            break
        prev = np.array([h.tokens[-1] if h.tokens else BOS for h in active])
        states = np.stack([h.state for h in active])
        logp, h_new = _step(params, prep, prev, states, counter)
        if pos < min_len:
            logp[:, prep.eos_pos] = -np.inf
        totals = logp + np.array([h.log_prob for h in active], dtype=logp.dtype)[:, None]
        picks = kernels.topk_flat(totals, width)
        n_cols = sel.size
        nxt = []
        for flat in picks:
            row, col = divmod(int(flat), n_cols)
            parent = active[row]
            tok = int(sel[col])
            hyp = BeamHypothesis(parent.tokens + (tok,), float(totals[row, col]), h_new[row], tok == EOS)
            (finished if hyp.finished else nxt).append(hyp)
        nxt.sort(key=BeamHypothesis.sort_key)
        active = nxt
    finished.sort(key=BeamHypothesis.sort_key)
    if len(finished) < beam:
        active.sort(key=BeamHypothesis.sort_key)
        finished += active[: beam - len(finished)]
    return finished


def dynamic_vocab(enc, params, vocab, K, counter=None):
    beta = model.predict_beta(enc, params, vocab)
    if counter is not None:
        counter.add("construction", params["pred_W"].size)
    return model.top_k_vocab(beta, K, vocab), beta


def generate_ids(message_ids, params, vocab, K, beam=20, max_len=50):
    """Token ids of the top-1 response (EOS stripped)."""
    if len(message_ids) == 0:
        raise ValueError("cannot respond to an empty message")
    enc = model.encode(message_ids, params)
    dyn, _ = dynamic_vocab(enc, params, vocab, K)
    best = beam_search(enc, dyn, params, beam, max_len)[0]
    toks = list(best.tokens)
    if toks and toks[-1] == EOS:
        toks.pop()
    return toks


def generate(message_tokens, params, vocab, K, beam=20, max_len=50):
    """Generate a response (list of words) for a tokenised message."""
    if len(message_tokens) == 0:
        raise ValueError("cannot respond to an empty message")
    ids = generate_ids(vocab.encode(message_tokens), params, vocab, K, beam, max_len)
    return [vocab.words[i] for i in ids]


def top_content_words(message_tokens, params, vocab, n=10):
    """The ``n`` content words of largest predicted inclusion probability."""
    enc = model.encode(vocab.encode(message_tokens), params)
    beta = model.predict_beta(enc, params, vocab)
    dyn = model.top_k_vocab(beta, min(n, vocab.n_content), vocab)
    chosen = [int(i) for i in dyn.selected if not vocab.function_mask[i]]
    chosen.sort(key=lambda i: (-beta.beta[i], i))
    return [(vocab.words[i], float(beta.beta[i])) for i in chosen]
