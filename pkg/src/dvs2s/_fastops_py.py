"""Pure numpy implementations of the decoding kernels (reference + fallback)."""
import numpy as np


def log_softmax_rows(scores):
    scores = np.asarray(scores)
    mx = scores.max(axis=1, keepdims=True)
    shifted = scores - mx
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def topk_flat(scores, k):
    """Flat indices of the ``k`` best finite entries, value desc then index asc."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    flat = np.asarray(scores).ravel()
    idx = np.flatnonzero(np.isfinite(flat))
    vals = flat[idx].astype(np.float64)
    if k < idx.size:
        kth = np.partition(vals, idx.size - k)[idx.size - k]
        keep = vals >= kth
        idx, vals = idx[keep], vals[keep]
    order = np.lexsort((idx, -vals))[:k]
    return idx[order].astype(np.int64)
