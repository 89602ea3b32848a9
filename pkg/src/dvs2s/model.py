"""The dynamic-vocabulary encoder-decoder.

Network (row-vector convention, ``x @ W.T``):

* encoder: bidirectional GRU without biases, each direction of width m/2, so
  memory rows ``h_i = [fwd_i; bwd_i]`` have width m;
* decoder: GRU of width m started from the last memory row, with additive
  attention ``e_j = v . tanh(W_att [h_j; h_dec])``;
* projection: ``s(w) = W_w . [emb(y_prev); h_prev; c] + b_w`` evaluated only
  for words of the dynamic vocabulary, where ``h_prev`` is the decoder state
  *before* the current GRU update;
* word predictor: ``beta_c = sigmoid(W_pred h_final + b_pred)`` for content
  words, and exactly 1 for function words.

The batched forward pass (:func:`forward`) keeps what :func:`backward` needs;
the single-example helpers below are thin wrappers used by inference and tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dvs2s.corpus import BOS, EOS
from dvs2s.numeric import init_params, masked_softmax, sigmoid

GRU_NAMES = ("Wz", "Uz", "Wr", "Ur", "Wh", "Uh")
BIAS_NAMES = frozenset({"proj_b", "pred_b"})
BETA_CLIP = 1e-7


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    n_content: int
    emb: int = 620
    hidden: int = 1024
    attn: int | None = None

    def __post_init__(self):
        if self.hidden % 2:
            raise ValueError("hidden size must be even (two encoder directions of hidden/2)")

    @property
    def attn_size(self):
        return self.hidden if self.attn is None else self.attn

    @property
    def proj_in(self):
        return self.emb + 2 * self.hidden


def param_shapes(dims):
    p, m, a, half = dims.emb, dims.hidden, dims.attn_size, dims.hidden // 2
    shapes = {"emb": (dims.vocab_size, p)}
    for prefix, width in (("enc_fwd", half), ("enc_bwd", half), ("dec", m)):
        for n in GRU_NAMES:
            shapes[f"{prefix}_{n}"] = (width, p) if n[0] == "W" else (width, width)
    shapes["att_W"] = (a, 2 * m)
    shapes["att_v"] = (a,)
    shapes["proj_W"] = (dims.vocab_size, dims.proj_in)
    shapes["proj_b"] = (dims.vocab_size,)
    shapes["pred_W"] = (dims.n_content, m)
    shapes["pred_b"] = (dims.n_content,)
    return shapes


def dims_from_params(params):
    v, p = params["emb"].shape
    a, two_m = params["att_W"].shape
    m = two_m // 2
    return ModelDims(v, params["pred_W"].shape[0], p, m, None if a == m else a)


def new_params(dims, seed, scheme="uniform", dtype=np.float64):
    return init_params(param_shapes(dims), seed, scheme=scheme, biases=BIAS_NAMES, dtype=dtype)


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


def _gru_weights(params, prefix):
    return tuple(params[f"{prefix}_{n}"] for n in GRU_NAMES)


def gru_cell(x, h_prev, weights):
    """One bias-free GRU step. ``weights`` = (Wz, Uz, Wr, Ur, Wh, Uh)."""
    h, _ = _gru_forward(np.asarray(x, dtype=float), np.asarray(h_prev, dtype=float), weights)
    return h


def _gru_forward(x, h, w):
    Wz, Uz, Wr, Ur, Wh, Uh = w
    if x.shape[-1] != Wz.shape[1] or h.shape[-1] != Uz.shape[1]:
        raise ValueError(f"GRU shape mismatch: x {x.shape}, h {h.shape}, W {Wz.shape}, U {Uz.shape}")
    z = sigmoid(x @ Wz.T + h @ Uz.T)
    r = sigmoid(x @ Wr.T + h @ Ur.T)
    rh = r * h
    ht = np.tanh(x @ Wh.T + rh @ Uh.T)
    h_new = z * ht + (1.0 - z) * h
    return h_new, (x, h, z, r, rh, ht)


def _gru_backward(dh_new, cache, w, gw):
    """Backprop one GRU step (rows = batch). Accumulates into ``gw``; returns (dx, dh_prev)."""
    x, h, z, r, rh, ht = cache
    Wz, Uz, Wr, Ur, Wh, Uh = w
    gWz, gUz, gWr, gUr, gWh, gUh = gw
    dz = dh_new * (ht - h)
    dht = dh_new * z
    dh = dh_new * (1.0 - z)
    da_h = dht * (1.0 - ht * ht)
    gWh += da_h.T @ x
    gUh += da_h.T @ rh
    drh = da_h @ Uh
    dx = da_h @ Wh
    dr = drh * h
    dh += drh * r
    da_r = dr * r * (1.0 - r)
    gWr += da_r.T @ x
    gUr += da_r.T @ h
    dx += da_r @ Wr
    dh += da_r @ Ur
    da_z = dz * z * (1.0 - z)
    gWz += da_z.T @ x
    gUz += da_z.T @ h
    dx += da_z @ Wz
    dh += da_z @ Uz
    return dx, dh


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------


def _reverse_index(lengths, width):
    """Per-row permutation reversing the first ``len`` positions (an involution)."""
    t = np.arange(width)[None, :]
    ln = np.asarray(lengths)[:, None]
    return np.where(t < ln, ln - 1 - t, t)


def _run_gru(params, prefix, xs, mask):
    w = _gru_weights(params, prefix)
    B, T, _ = xs.shape
    h = np.zeros((B, w[1].shape[0]), dtype=xs.dtype)
    outs = np.zeros((B, T, h.shape[1]), dtype=xs.dtype)
    caches = []
    for t in range(T):
        h_new, cache = _gru_forward(xs[:, t], h, w)
        mk = mask[:, t, None]
        h = mk * h_new + (1.0 - mk) * h
        outs[:, t] = h
        caches.append(cache)
    return outs, caches


def _run_gru_backward(params, grads, prefix, douts, caches, mask):
    w = _gru_weights(params, prefix)
    gw = tuple(grads[f"{prefix}_{n}"] for n in GRU_NAMES)
    B, T, H = douts.shape
    dxs = np.zeros((B, T, w[0].shape[1]))
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dtot = carry + douts[:, t]
        mk = mask[:, t, None]
        dx, dh = _gru_backward(mk * dtot, caches[t], w, gw)
        dxs[:, t] = dx
        carry = dh + (1.0 - mk) * dtot
    return dxs


@dataclass
class EncoderCache:
    messages: np.ndarray
    lengths: np.ndarray
    mask: np.ndarray
    rev: np.ndarray
    fwd_caches: list
    bwd_caches: list
    memory: np.ndarray  # (B, T, m), zero on padding
    final: np.ndarray  # (B, m)
    keys: np.ndarray  # memory @ W_att[:, :m].T, (B, T, a)


def encode_batch(params, messages, lengths):
    messages = np.asarray(messages)
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("empty message")
    B, T = messages.shape
    emb = params["emb"]
    xs = emb[messages]
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(xs.dtype)
    rev = _reverse_index(lengths, T)
    rows = np.arange(B)[:, None]
    fwd, fwd_caches = _run_gru(params, "enc_fwd", xs, mask)
    bwd_rev, bwd_caches = _run_gru(params, "enc_bwd", xs[rows, rev], mask)
    bwd = bwd_rev[rows, rev]
    memory = np.concatenate([fwd, bwd], axis=2) * mask[:, :, None]
    final = memory[np.arange(B), lengths - 1]
    m = memory.shape[2]
    keys = memory @ params["att_W"][:, :m].T
    return EncoderCache(messages, lengths, mask, rev, fwd_caches, bwd_caches, memory, final, keys)


def _attend(params, h_dec, enc_memory, enc_keys, enc_mask):
    """Batched attention. Returns context, weights and the backward cache."""
    m = enc_memory.shape[2]
    q = h_dec @ params["att_W"][:, m:].T  # (B, a)
    u = np.tanh(enc_keys + q[:, None, :])  # (B, T, a)
    e = u @ params["att_v"]  # (B, T)
    e = np.where(enc_mask > 0, e, -np.inf)
    e = e - e.max(axis=1, keepdims=True)
    alpha = np.exp(e)
    alpha /= alpha.sum(axis=1, keepdims=True)
    c = np.einsum("bt,btm->bm", alpha, enc_memory)
    return c, alpha, (h_dec, u, alpha)


def _attend_backward(params, grads, dc, cache, enc_memory, d_memory, d_keys):
    h_dec, u, alpha = cache
    m = enc_memory.shape[2]
    dalpha = np.einsum("btm,bm->bt", enc_memory, dc)
    d_memory += alpha[:, :, None] * dc[:, None, :]
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    grads["att_v"] += np.einsum("bta,bt->a", u, de)
    dpre = de[:, :, None] * params["att_v"][None, None, :] * (1.0 - u * u)
    d_keys += dpre
    dq = dpre.sum(axis=1)
    grads["att_W"][:, m:] += dq.T @ h_dec
    return dq @ params["att_W"][:, m:]


@dataclass
class DecoderCache:
    inputs: np.ndarray  # (B, L) previous-token ids (BOS first)
    gru_caches: list
    att_caches: list
    z: np.ndarray  # (B, L, p + 2m) projection inputs
    logits: np.ndarray  # (B, L, |V|)


def decode_batch(params, enc, responses):
    """Teacher-forced decoder over full-vocabulary logits."""
    responses = np.asarray(responses)
    B, L = responses.shape
    inputs = np.empty_like(responses)
    inputs[:, 0] = BOS
    inputs[:, 1:] = responses[:, :-1]
    w = _gru_weights(params, "dec")
    emb = params["emb"]
    h = enc.final
    p, m = emb.shape[1], h.shape[1]
    z = np.empty((B, L, p + 2 * m), dtype=h.dtype)
    gru_caches, att_caches = [], []
    for step in range(L):
        e = emb[inputs[:, step]]
        h_new, gc = _gru_forward(e, h, w)
        c, _, ac = _attend(params, h_new, enc.memory, enc.keys, enc.mask)
        z[:, step, :p] = e
        z[:, step, p : p + m] = h
        z[:, step, p + m :] = c
        gru_caches.append(gc)
        att_caches.append(ac)
        h = h_new
    logits = z @ params["proj_W"].T + params["proj_b"]
    return DecoderCache(inputs, gru_caches, att_caches, z, logits)


@dataclass
class Forward:
    enc: EncoderCache
    dec: DecoderCache


def forward(params, messages, message_lengths, responses):
    enc = encode_batch(params, messages, message_lengths)
    return Forward(enc, decode_batch(params, enc, responses))


def backward(params, fwd, d_logits, d_final=None, d_pred_logits=None):
    """Reverse pass.

    Args:
        d_logits: (B, L, |V|) gradient w.r.t. the projection scores.
        d_final: optional extra (B, m) gradient on the encoder's last state.
        d_pred_logits: optional (B, |V_c|) gradient w.r.t. predictor logits;
            it reaches ``pred_W``, ``pred_b`` and, through the last state, the
            encoder.
    Returns:
        gradient dict with the same keys as ``params``.
    """
    grads = zeros_like_params(params)
    enc, dec = fwd.enc, fwd.dec
    emb = params["emb"]
    p = emb.shape[1]
    B, L, _ = d_logits.shape
    m = enc.final.shape[1]

    d2 = d_logits.reshape(B * L, -1)
    grads["proj_W"] += d2.T @ dec.z.reshape(B * L, -1)
    grads["proj_b"] += d2.sum(axis=0)
    dz = d_logits @ params["proj_W"]  # (B, L, p + 2m)

    w = _gru_weights(params, "dec")
    gw = tuple(grads[f"dec_{n}"] for n in GRU_NAMES)
    d_memory = np.zeros_like(enc.memory)
    d_keys = np.zeros_like(enc.keys)
    carry = np.zeros((B, m))
    for step in range(L - 1, -1, -1):
        dh_new = carry + _attend_backward(
            params, grads, dz[:, step, p + m :], dec.att_caches[step], enc.memory, d_memory, d_keys
        )
        dx, dh_prev = _gru_backward(dh_new, dec.gru_caches[step], w, gw)
        np.add.at(grads["emb"], dec.inputs[:, step], dx + dz[:, step, :p])
        carry = dh_prev + dz[:, step, p : p + m]

    d_fin = carry
    if d_final is not None:
        d_fin = d_fin + d_final
    if d_pred_logits is not None:
        d_fin = d_fin + predictor_backward(params, grads, enc, d_pred_logits)
    encoder_backward(params, grads, enc, d_fin, d_memory, d_keys)
    return grads


def predictor_backward(params, grads, enc, d_pred_logits):
    """Accumulate predictor gradients; returns the gradient on the last encoder state."""
    grads["pred_W"] += d_pred_logits.T @ enc.final
    grads["pred_b"] += d_pred_logits.sum(axis=0)
    return d_pred_logits @ params["pred_W"]


def encoder_backward(params, grads, enc, d_final, d_memory=None, d_keys=None):
    """Backprop into the encoder from its last state, memory rows and attention keys."""
    B = enc.final.shape[0]
    m = enc.final.shape[1]
    d_memory = np.zeros_like(enc.memory) if d_memory is None else d_memory
    if d_keys is not None:
        grads["att_W"][:, :m] += np.einsum("bta,btm->am", d_keys, enc.memory)
        d_memory += d_keys @ params["att_W"][:, :m]
    d_memory[np.arange(B), enc.lengths - 1] += d_final
    d_memory *= enc.mask[:, :, None]

    half = m // 2
    rows = np.arange(B)[:, None]
    dx_f = _run_gru_backward(params, grads, "enc_fwd", d_memory[:, :, :half], enc.fwd_caches, enc.mask)
    d_bwd_rev = d_memory[:, :, half:][rows, enc.rev]
    dx_b_rev = _run_gru_backward(params, grads, "enc_bwd", d_bwd_rev, enc.bwd_caches, enc.mask)
    dx = (dx_f + dx_b_rev[rows, enc.rev]) * enc.mask[:, :, None]
    np.add.at(grads["emb"], enc.messages, dx)
    return grads


def masked_token_log_probs(logits, responses, masks, step_mask):
    """Per-token log-probabilities under several vocabularies per example.

    Args:
        logits: (B, L, |V|); responses: (B, L); masks: (B, S, |V|) bool;
        step_mask: (B, L) 1.0 on real tokens.
    Returns:
        (logp, probs): logp (B, S, L) zero on padding, probs (B, S, L, |V|)
        the restricted distributions (zero outside the vocabulary).
    """
    sel = masks[:, :, None, :]
    lg = np.where(sel, logits[:, None, :, :], -np.inf)
    mx = lg.max(axis=3, keepdims=True)
    ex = np.exp(lg - mx)
    tot = ex.sum(axis=3, keepdims=True)
    probs = ex / tot
    lse = (mx + np.log(tot))[..., 0]  # (B, S, L)
    gold = np.take_along_axis(logits, responses[:, :, None], axis=2)[..., 0]  # (B, L)
    gold_in = np.take_along_axis(masks, np.broadcast_to(responses[:, None, :], lse.shape), axis=2)
    if np.any(~gold_in & (step_mask[:, None, :] > 0)):
        b, s, l = np.argwhere(~gold_in & (step_mask[:, None, :] > 0))[0]
        raise ValueError(f"response token {int(responses[b, l])} (example {b}, position {l}) is outside the dynamic vocabulary")
    logp = (gold[:, None, :] - lse) * step_mask[:, None, :]
    return logp, probs


def predictor_logits(params, final):
    return final @ params["pred_W"].T + params["pred_b"]


# ---------------------------------------------------------------------------
# Single-example API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Encoding:
    memory: np.ndarray  # (t, m)
    final: np.ndarray  # (m,)


@dataclass(frozen=True)
class BernoulliParams:
    beta: np.ndarray  # (|V|,)


@dataclass(frozen=True)
class DynamicVocab:
    selected: np.ndarray  # sorted word ids
    mask: np.ndarray  # bool over |V|

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool).copy()
        if not mask.any():
            raise ValueError("dynamic vocabulary is empty")
        mask.setflags(write=False)
        sel = np.flatnonzero(mask)
        sel.setflags(write=False)
        return cls(sel, mask)

    @classmethod
    def full(cls, size):
        return cls.from_mask(np.ones(size, dtype=bool))

    def __len__(self):
        return int(self.selected.size)


def encode(message, params):
    message = np.asarray(message, dtype=np.int64)
    if message.size == 0:
        raise ValueError("cannot encode an empty message")
    enc = encode_batch(params, message[None, :], np.array([message.size]))
    return Encoding(enc.memory[0], enc.final[0])


def attention(h_dec, memory, params):
    """Context vector and attention weights for one decoder state."""
    memory = np.asarray(memory, dtype=float)
    m = memory.shape[1]
    keys = memory @ params["att_W"][:, :m].T
    c, alpha, _ = _attend(params, np.asarray(h_dec, dtype=float)[None, :], memory[None], keys[None], np.ones((1, memory.shape[0])))
    return c[0], alpha[0]


def decode_step(y_prev, h_prev, memory, dyn, params):
    """One decoder step restricted to ``dyn``.

    Returns the distribution over ``dyn.selected`` (in that order) and the
    updated decoder state.
    """
    if len(dyn) == 0:
        raise ValueError("dynamic vocabulary is empty")
    e = params["emb"][y_prev]
    h_new = gru_cell(e, h_prev, _gru_weights(params, "dec"))
    c, _ = attention(h_new, memory, params)
    z = np.concatenate([e, h_prev, c])
    sel = dyn.selected
    scores = params["proj_W"][sel] @ z + params["proj_b"][sel]
    dist = masked_softmax(scores, np.ones(sel.size, dtype=bool))
    return dist, h_new


def sequence_log_prob(response, enc, dyn, params):
    """log p(response | dyn, message) by teacher forcing, one step at a time."""
    pos = {int(w): i for i, w in enumerate(dyn.selected)}
    h = enc.final
    prev = BOS
    total = 0.0
    for tok in response:
        tok = int(tok)
        if tok not in pos:
            raise ValueError(f"response token {tok} is outside the dynamic vocabulary")
        dist, h = decode_step(prev, h, enc.memory, dyn, params)
        total += float(np.log(dist[pos[tok]]))
        prev = tok
    return total


def predict_beta(enc, params, vocab):
    beta = np.ones(len(vocab))
    beta[vocab.content_ids] = sigmoid(params["pred_W"] @ enc.final + params["pred_b"])
    return BernoulliParams(beta)


def sample_vocab(beta, rng, vocab):
    """Independent Bernoulli draw per content word; function words always kept."""
    mask = np.array(vocab.function_mask, dtype=bool)
    cid = vocab.content_ids
    mask[cid] = rng.random(cid.size) < beta.beta[cid]
    mask[EOS] = True
    return DynamicVocab.from_mask(mask)


def top_k_vocab(beta, K, vocab):
    """Function words plus the ``K`` content words of largest beta (ties: lower id)."""
    cid = vocab.content_ids
    if not 0 <= K <= cid.size:
        raise ValueError(f"K={K} outside [0, {cid.size}]")
    mask = np.array(vocab.function_mask, dtype=bool)
    if K:
        b = beta.beta[cid]
        order = np.lexsort((cid, -b))[:K]
        mask[cid[order]] = True
    mask[EOS] = True
    return DynamicVocab.from_mask(mask)


def clip_beta(b, bound=BETA_CLIP):
    return np.clip(b, bound, 1.0 - bound)


def vocab_log_prob(dyn, beta, vocab, bound=BETA_CLIP):
    """log p(T | X) summed over content words (function words contribute 0)."""
    cid = vocab.content_ids
    b = clip_beta(beta.beta[cid], bound)
    t = dyn.mask[cid]
    return float(np.sum(np.where(t, np.log(b), np.log1p(-b))))
