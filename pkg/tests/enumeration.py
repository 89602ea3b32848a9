"""Exhaustive-enumeration oracles over all content selections of a tiny vocabulary."""
import itertools
import math

import numpy as np

from dvs2s import model, training
from dvs2s.corpus import batch_from_pairs
from dvs2s.numeric import sigmoid


def content_beta(params, pair):
    batch = batch_from_pairs([pair])
    enc = model.encode_batch(params, batch.messages, batch.message_lengths)
    return sigmoid(model.predictor_logits(params, enc.final))[0]


def all_bits(n):
    return [np.array(b, dtype=bool) for b in itertools.product([0, 1], repeat=n)]


def augmented_mask(vocab, pair, bits):
    mask = vocab.function_mask.copy()
    mask[vocab.content_ids] = bits
    mask[list(pair.response)] = True
    return mask


def selection_prob(beta, bits):
    return float(np.prod(np.where(bits, beta, 1.0 - beta)))


def lower_bound_and_marginal(params, pair, vocab):
    """(L, log p(Y|X)) with every selection augmented by the response tokens."""
    beta = content_beta(params, pair)
    L, marginal = 0.0, 0.0
    for bits in all_bits(vocab.n_content):
        w = selection_prob(beta, bits)
        lp, _ = training.log_prob_and_grad(params, pair, augmented_mask(vocab, pair, bits))
        L += w * lp
        marginal += w * math.exp(lp)
    return L, math.log(marginal)


def exact_gradient(params, pair, vocab, reward="total", baseline=0.0):
    """sum_T p(T) [d log p(Y|T) + (R(T) - baseline) d log p(T)].

    With ``reward="total"`` and any baseline this is the exact gradient of L.
    """
    beta = content_beta(params, pair)
    n_tok = len(pair.response)
    out = model.zeros_like_params(params)
    for bits in all_bits(vocab.n_content):
        w = selection_prob(beta, bits)
        lp, g_path = training.log_prob_and_grad(params, pair, augmented_mask(vocab, pair, bits))
        _, g_score = training.vocab_log_prob_and_grad(params, pair, vocab, bits, bound=0.0)
        r = lp if reward == "total" else lp / n_tok
        for k in out:
            out[k] += w * (g_path[k] + (r - baseline) * g_score[k])
    return out


def expected_estimator(params, pair, vocab, baseline=0.0, normalize_reward=False):
    """Enumeration expectation of the single-sample Monte-Carlo estimator."""
    beta = content_beta(params, pair)
    out = model.zeros_like_params(params)
    for bits in all_bits(vocab.n_content):
        w = selection_prob(beta, bits)
        g, _ = training.mc_gradient(pair, params, vocab, 1, None, baseline, normalize_reward, 0.0,
                                    content_bits=bits[None, :])
        for k in out:
            out[k] += w * g[k]
    return out


def max_abs_diff(a, b):
    return max(float(np.max(np.abs(a[k] - b[k]))) for k in a)


def all_log_probs(params, pair, vocab):
    """log p(Y | T, X) for every content selection T (augmented), in ``all_bits`` order.

    Decoder states do not depend on T, so one forward pass serves every mask.
    """
    batch = batch_from_pairs([pair])
    fwd = model.forward(params, batch.messages, batch.message_lengths, batch.responses)
    bits = np.array(all_bits(vocab.n_content))
    masks = np.stack([augmented_mask(vocab, pair, b) for b in bits])[None]
    step = np.ones((1, batch.responses.shape[1]))
    logp, _ = model.masked_token_log_probs(fwd.dec.logits, batch.responses, masks, step)
    return bits, logp[0].sum(axis=1)
