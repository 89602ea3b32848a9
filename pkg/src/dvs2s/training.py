"""Training: S2S pretraining, predictor pretraining and joint Monte-Carlo
optimisation of the lower bound with a moving-average baseline.

Gradients returned by the estimator functions are gradients of the
objective being *maximised* (log-likelihood / lower bound); the update code
negates them before handing them to AdaDelta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dvs2s import model
from dvs2s.corpus import batch_from_pairs, make_batches, target_indicator
from dvs2s.numeric import OptimizerState, adadelta_step, clip_by_global_norm, sigmoid

log = logging.getLogger(__name__)

PREDICTOR_KEYS = ("pred_W", "pred_b")


class TrainingError(RuntimeError):
    pass


def _step_mask(lengths, width):
    return (np.arange(width)[None, :] < np.asarray(lengths)[:, None]).astype(float)


def _generator_keys(params):
    return [k for k in params if k not in PREDICTOR_KEYS]


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise TrainingError(f"non-finite {what}: {value!r}" if np.ndim(value) == 0 else f"non-finite {what}")


# ---------------------------------------------------------------------------
# Objectives and gradients
# ---------------------------------------------------------------------------


def response_masks(batch, vocab, content_bits):
    """Vocabulary masks (B, S, |V|): function words, sampled content words and
    every token of the example's own response (ground-truth augmentation)."""
    B, S, _ = content_bits.shape
    masks = np.broadcast_to(vocab.function_mask, (B, S, len(vocab))).copy()
    masks[:, :, vocab.content_ids] |= content_bits
    rows = np.repeat(np.arange(B), batch.responses.shape[1])
    masks[rows, :, batch.responses.ravel()] = True
    return masks


def s2s_loss_and_grad(params, batch):
    """Full-vocabulary cross-entropy. Returns (mean sequence NLL, grads of that NLL)."""
    fwd = model.forward(params, batch.messages, batch.message_lengths, batch.responses)
    B, L = batch.responses.shape
    step = _step_mask(batch.response_lengths, L)
    logits = fwd.dec.logits
    mx = logits.max(axis=2, keepdims=True)
    ex = np.exp(logits - mx)
    tot = ex.sum(axis=2, keepdims=True)
    probs = ex / tot
    gold = np.take_along_axis(logits, batch.responses[:, :, None], axis=2)[..., 0]
    logp = (gold - (mx + np.log(tot))[..., 0]) * step
    loss = -float(logp.sum()) / B
    d = -probs
    np.put_along_axis(d, batch.responses[:, :, None], np.take_along_axis(d, batch.responses[:, :, None], axis=2) + 1.0, axis=2)
    d_logits = -(d * step[:, :, None]) / B
    grads = model.backward(params, fwd, d_logits)
    return loss, grads


def log_prob_and_grad(params, pair, mask):
    """log p(Y | T, X) for one pair and a fixed vocabulary mask, with its gradient."""
    batch = batch_from_pairs([pair])
    fwd = model.forward(params, batch.messages, batch.message_lengths, batch.responses)
    masks = np.asarray(mask, dtype=bool)[None, None, :]
    step = _step_mask(batch.response_lengths, batch.responses.shape[1])
    logp, probs = model.masked_token_log_probs(fwd.dec.logits, batch.responses, masks, step)
    d_logits = -probs[:, 0]
    np.put_along_axis(d_logits, batch.responses[:, :, None], np.take_along_axis(d_logits, batch.responses[:, :, None], axis=2) + 1.0, axis=2)
    d_logits *= step[:, :, None]
    return float(logp.sum()), model.backward(params, fwd, d_logits)


def vocab_log_prob_and_grad(params, pair, vocab, content_bits, bound=model.BETA_CLIP):
    """log p(T | X) for one pair and content selection bits, with its gradient."""
    batch = batch_from_pairs([pair])
    enc = model.encode_batch(params, batch.messages, batch.message_lengths)
    beta = sigmoid(model.predictor_logits(params, enc.final))[0]
    t = np.asarray(content_bits, dtype=bool)
    b = model.clip_beta(beta, bound)
    value = float(np.sum(np.where(t, np.log(b), np.log1p(-b))))
    live = (beta > bound) & (beta < 1.0 - bound)
    dpl = ((t - beta) * live)[None, :]
    grads = model.zeros_like_params(params)
    d_final = model.predictor_backward(params, grads, enc, dpl)
    model.encoder_backward(params, grads, enc, d_final)
    return value, grads


def _sample_bits(beta, samples, rng):
    return rng.random((beta.shape[0], samples, beta.shape[1])) < beta[:, None, :]


@dataclass
class EstimatorDiagnostics:
    seq_log_prob: np.ndarray  # (B, S) log p(Y | T~_s, X)
    reward: np.ndarray  # (B, S) reward used by the score-function term
    normalized: np.ndarray  # (B, S) per-token log-likelihood
    vocab_sizes: np.ndarray  # (B, S) |T~_s| after augmentation
    content_bits: np.ndarray  # (B, S, |V_c|) raw samples


def mc_gradient_batch(params, batch, vocab, samples, rng, baseline=0.0, normalize_reward=True,
                      bound=model.BETA_CLIP, content_bits=None):
    """Monte-Carlo estimate of the lower-bound gradient, averaged over the batch.

    For each example, ``samples`` vocabularies are drawn from the predicted
    Bernoulli distribution (or taken from ``content_bits``) and augmented with
    the response tokens. The estimate per example is

        1/S sum_s [ d log p(Y | T_s, X) + (R_s - baseline) d log p(T_s | X) ]

    with ``R_s`` the per-token (``normalize_reward``) or total log-likelihood.
    The decoder states do not depend on the vocabulary, so all samples share
    one forward and one backward pass.
    """
    fwd = model.forward(params, batch.messages, batch.message_lengths, batch.responses)
    pl = model.predictor_logits(params, fwd.enc.final)
    beta = sigmoid(pl)
    if content_bits is None:
        content_bits = _sample_bits(beta, samples, rng)
    content_bits = np.asarray(content_bits, dtype=bool)
    B, S, _ = content_bits.shape
    L = batch.responses.shape[1]
    step = _step_mask(batch.response_lengths, L)
    masks = response_masks(batch, vocab, content_bits)
    logp, probs = model.masked_token_log_probs(fwd.dec.logits, batch.responses, masks, step)
    seq = logp.sum(axis=2)
    _check_finite(seq, "response log-likelihood")
    lengths = batch.response_lengths.astype(float)[:, None]
    normalized = seq / lengths
    reward = normalized if normalize_reward else seq

    d_logits = -probs.sum(axis=1)
    np.put_along_axis(d_logits, batch.responses[:, :, None], np.take_along_axis(d_logits, batch.responses[:, :, None], axis=2) + S, axis=2)
    d_logits *= step[:, :, None] / (B * S)

    live = (beta > bound) & (beta < 1.0 - bound)
    coef = (reward - baseline) / (B * S)
    dpl = np.einsum("bs,bsc->bc", coef, content_bits - beta[:, None, :]) * live

    grads = model.backward(params, fwd, d_logits, d_pred_logits=dpl)
    diag = EstimatorDiagnostics(seq, reward, normalized, masks.sum(axis=2), content_bits)
    return grads, diag


def mc_gradient(pair, params, vocab, samples, rng, baseline=0.0, normalize_reward=True,
                bound=model.BETA_CLIP, content_bits=None):
    """Single-example form of :func:`mc_gradient_batch`."""
    bits = None if content_bits is None else np.asarray(content_bits, dtype=bool).reshape(1, -1, vocab.n_content)
    return mc_gradient_batch(params, batch_from_pairs([pair]), vocab, samples, rng, baseline,
                             normalize_reward, bound, bits)


def update_baseline(baseline, values, decay=0.9):
    """Moving average ``decay * b + (1 - decay) * mean(values)``."""
    values = np.asarray(values, dtype=float)
    return decay * baseline + (1.0 - decay) * float(values.mean())


def _topk_masks(beta, vocab, K):
    B = beta.shape[0]
    masks = np.broadcast_to(vocab.function_mask, (B, len(vocab))).copy()
    cid = vocab.content_ids
    if K:
        for b in range(B):
            order = np.lexsort((cid, -beta[b]))[:K]
            masks[b, cid[order]] = True
    return masks


def validation_loss(pairs, params, vocab, K, batch_size=256):
    """Mean per-token NLL under top-K vocabularies augmented with the gold tokens."""
    total, tokens = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        batch = batch_from_pairs(pairs[start : start + batch_size])
        fwd = model.forward(params, batch.messages, batch.message_lengths, batch.responses)
        beta = sigmoid(model.predictor_logits(params, fwd.enc.final))
        masks = _topk_masks(beta, vocab, K)
        rows = np.repeat(np.arange(len(batch)), batch.responses.shape[1])
        masks[rows, batch.responses.ravel()] = True
        step = _step_mask(batch.response_lengths, batch.responses.shape[1])
        logp, _ = model.masked_token_log_probs(fwd.dec.logits, batch.responses, masks[:, None, :], step)
        total -= float(logp.sum())
        tokens += int(batch.response_lengths.sum())
    return total / tokens


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    params: dict
    optimizer: OptimizerState
    baseline: float = 0.0
    lr_scale: float = 1.0
    epoch: int = 0
    prev_loss: float = float("inf")
    best_loss: float = float("inf")
    increases: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params, config):
        return cls(params, OptimizerState.zeros_like(params, config.rho, config.eps), lr_scale=config.lr)

    def scalars(self):
        return {
            "baseline": self.baseline,
            "lr_scale": self.lr_scale,
            "epoch": self.epoch,
            "best_loss": self.best_loss,
            "history": list(self.history),
        }


def _emit(sink, epoch, batch_no, loss, baseline, lr_scale):
    line = f"{epoch} {batch_no} {loss:.6f} {baseline:.6f} {lr_scale:.6g}"
    if sink is not None:
        sink(line)
    log.debug(line)


def _descend(params, opt, loss_grads, keys, lr_scale, clip):
    """Clip and apply AdaDelta to the gradients of a loss being minimised."""
    sub, _ = clip_by_global_norm({k: loss_grads[k] for k in keys}, clip)
    return adadelta_step(params, sub, opt, lr_scale, keys=keys)


def pretrain_s2s(pairs, config, params, sink=None):
    """Static-vocabulary S2S training of every non-predictor parameter.

    Returns ``(params, losses)`` where ``losses`` holds the per-batch mean
    sequence NLL. Predictor weights are reset to zero.
    """
    params = dict(params)
    params["pred_W"] = np.zeros_like(params["pred_W"])
    params["pred_b"] = np.zeros_like(params["pred_b"])
    keys = _generator_keys(params)
    opt = OptimizerState.zeros_like(params, config.rho, config.eps)
    losses = []
    for epoch in range(config.pretrain_epochs):
        for i, batch in enumerate(make_batches(pairs, config.batch_size, config.seed + epoch)):
            loss, grads = s2s_loss_and_grad(params, batch)
            if not np.isfinite(loss):
                raise TrainingError(f"S2S pretraining diverged at epoch {epoch} batch {i}: loss={loss}")
            losses.append(loss)
            params, opt = _descend(params, opt, grads, keys, config.lr, config.grad_clip)
            _emit(sink, epoch, i, loss, 0.0, config.lr)
    return params, losses


def pretrain_predictor(pairs, params, vocab, config, sink=None):
    """Fit {pred_W, pred_b} by binary cross-entropy against the target
    indicators with the encoder frozen. Returns a new params dict."""
    finals = []
    for start in range(0, len(pairs), 256):
        chunk = batch_from_pairs(pairs[start : start + 256])
        finals.append(model.encode_batch(params, chunk.messages, chunk.message_lengths).final)
    finals = np.concatenate(finals) if finals else np.zeros((0, params["pred_W"].shape[1]))
    cid = vocab.content_ids
    targets = np.stack([target_indicator(p.response, vocab)[cid] for p in pairs]).astype(float)
    params = dict(params)
    keys = list(PREDICTOR_KEYS)
    opt = OptimizerState.zeros_like({k: params[k] for k in keys}, config.rho, config.eps)
    for epoch in range(config.predictor_epochs):
        order = np.random.default_rng(config.seed + epoch).permutation(len(pairs))
        for i, start in enumerate(range(0, len(pairs), config.batch_size)):
            idx = order[start : start + config.batch_size]
            h, t = finals[idx], targets[idx]
            beta = sigmoid(h @ params["pred_W"].T + params["pred_b"])
            b = model.clip_beta(beta, config.beta_clip)
            loss = -float(np.sum(t * np.log(b) + (1 - t) * np.log1p(-b))) / len(idx)
            d = (beta - t) / len(idx)
            grads = {"pred_W": d.T @ h, "pred_b": d.sum(axis=0)}
            grads, _ = clip_by_global_norm(grads, config.grad_clip)
            sub, opt = adadelta_step({k: params[k] for k in keys}, grads, opt, config.lr)
            params.update(sub)
            _emit(sink, epoch, i, loss, 0.0, config.lr)
    return params


def schedule_step(state, val_loss):
    """Apply the validation-driven schedule. Returns True when training should stop.

    The learning scale halves whenever the validation loss rises; two
    successive rises stop training.
    """
    if val_loss > state.prev_loss:
        state.lr_scale /= 2.0
        state.increases += 1
    else:
        state.increases = 0
    state.prev_loss = val_loss
    return state.increases >= 2


def train_joint(train_pairs, valid_pairs, state, vocab, config, sink=None, validate=None):
    """Joint optimisation of generator and word predictor.

    Returns the state holding the parameters with the lowest validation loss
    seen, the starting (pretrained) parameters included.
    """
    validate = validate or (lambda params: validation_loss(valid_pairs, params, vocab, config.topk_content))
    rng = np.random.default_rng(config.seed)
    v0 = validate(state.params)
    _check_finite(v0, "validation loss")
    state.prev_loss = state.best_loss = v0
    state.history.append(v0)
    best = state.params
    for _ in range(config.max_epochs):
        for i, batch in enumerate(make_batches(train_pairs, config.batch_size, config.seed + 1000 + state.epoch)):
            grads, diag = mc_gradient_batch(
                state.params, batch, vocab, config.samples, rng, state.baseline,
                config.normalize_reward, config.beta_clip,
            )
            for g in grads.values():
                _check_finite(g, "gradient")
            state.params, state.optimizer = _descend(
                state.params, state.optimizer, {k: -g for k, g in grads.items()}, sorted(grads),
                state.lr_scale, config.grad_clip,
            )
            state.baseline = update_baseline(state.baseline, diag.reward, config.baseline_decay)
            loss = -float(diag.seq_log_prob.sum()) / float(diag.seq_log_prob.shape[1] * batch.response_lengths.sum())
            _emit(sink, state.epoch, i, loss, state.baseline, state.lr_scale)
        state.epoch += 1
        v = validate(state.params)
        if not np.isfinite(v):
            raise TrainingError(f"validation loss is not finite after epoch {state.epoch}")
        state.history.append(v)
        if v < state.best_loss:
            state.best_loss, best = v, state.params
        if schedule_step(state, v):
            break
    state.params = best
    return state
