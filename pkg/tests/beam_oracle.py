"""Random tiny decoding problems small enough for exhaustive search."""
import itertools

import numpy as np

from dvs2s import model
from dvs2s.corpus import EOS, Vocabulary


def oracle_case(seed):
    """Random tiny model decoding over the three-word vocabulary {EOS, 4, 6}."""
    vocab = Vocabulary.synthetic(6, 4)
    dims = model.ModelDims(len(vocab), vocab.n_content, emb=5, hidden=6)
    p = model.new_params(dims, seed)
    rng = np.random.default_rng(seed)
    for k in p:
        p[k] = p[k] + rng.uniform(-1, 1, p[k].shape)
    p["proj_b"][EOS] -= rng.uniform(0, 2)
    msg = list(rng.integers(4, 10, size=3))
    mask = np.zeros(len(vocab), bool)
    mask[[EOS, 4, 6]] = True
    return p, model.encode(msg, p), model.DynamicVocab.from_mask(mask)


def exhaustive_best(enc, dyn, params, max_len):
    """Argmax over EOS-terminated sequences of length <= max_len, same tie rule as the beam."""
    sel = [int(i) for i in dyn.selected]
    cands = []
    for L in range(1, max_len + 1):
        for seq in itertools.product(sel, repeat=L):
            if seq[-1] != EOS or EOS in seq[:-1]:
                continue
            cands.append((-model.sequence_log_prob(list(seq), enc, dyn, params), L, seq))
    return min(cands)
