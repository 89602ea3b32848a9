import numpy as np
import pytest

from dvs2s import model
from dvs2s.corpus import EOS, DialogPair, Vocabulary


def tiny_model(n_function=6, n_content=6, emb=4, hidden=6, seed=0, scale=1.0):
    """Small vocabulary and randomly perturbed params (biases non-zero)."""
    vocab = Vocabulary.synthetic(n_function, n_content)
    dims = model.ModelDims(len(vocab), n_content, emb=emb, hidden=hidden)
    params = model.new_params(dims, seed)
    rng = np.random.default_rng(seed + 101)
    params = {k: v + scale * rng.uniform(-1, 1, size=v.shape) for k, v in params.items()}
    return vocab, params


def random_pair(vocab, rng, max_msg=4, max_resp=4):
    n = len(vocab)
    msg = tuple(int(x) for x in rng.integers(4, n, size=rng.integers(1, max_msg + 1)))
    resp = tuple(int(x) for x in rng.integers(4, n, size=rng.integers(1, max_resp))) + (EOS,)
    return DialogPair(msg, resp)


@pytest.fixture
def tiny():
    return tiny_model()


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from dvs2s import synthetic

    out = tmp_path_factory.mktemp("toy")
    return synthetic.write_corpus(out, n_pairs=300, n_topics=3, words_per_topic=10, seed=0)
