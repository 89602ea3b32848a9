"""Checkpoint files, run configuration and the bundled synthetic corpus."""
import struct

import numpy as np
import pytest
from conftest import tiny_model

from dvs2s import checkpoint, synthetic
from dvs2s.config import ConfigError, TrainConfig, coerce, read_config_file
from dvs2s.corpus import build_vocabulary, load_corpus, read_lexicon
from dvs2s.numeric import OptimizerState


def test_checkpoint_round_trip_bit_exact(tmp_path):
    _, params = tiny_model()
    params["emb32"] = params["emb"].astype(np.float32)
    opt = OptimizerState.zeros_like(params)
    opt.sq_grad["emb"] += 0.25
    cfg = TrainConfig(emb=4, hidden=6).to_dict()
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, params, config=cfg, vocab_digest="abc", state={"stage": "train", "baseline": -1.5},
                    optimizer=opt)
    ck = checkpoint.load(path)
    assert path.read_bytes()[:6] == b"DVS2S1"
    assert ck["config"] == cfg and ck["vocab_digest"] == "abc" and ck["state"]["baseline"] == -1.5
    for k, v in params.items():
        assert ck["params"][k].dtype == v.dtype and np.array_equal(ck["params"][k], v)
    assert np.array_equal(ck["optimizer"].sq_grad["emb"], opt.sq_grad["emb"])
    assert checkpoint.dumps(ck["params"], config=cfg, vocab_digest="abc", state=ck["state"],
                            optimizer=ck["optimizer"]) == path.read_bytes()


def test_checkpoint_corruption_detected():
    _, params = tiny_model()
    blob = checkpoint.dumps(params)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.loads(b"XXXXXX" + blob[6:])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.loads(blob[:-8])
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.loads(blob + b"\0")
    bad_head = blob[:6] + struct.pack("<I", 3) + b"{x}"
    with pytest.raises(checkpoint.CheckpointError, match="header"):
        checkpoint.loads(bad_head)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.dumps({"ids": np.arange(3)})


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.emb, cfg.hidden, cfg.samples, cfg.batch_size, cfg.lr) == (620, 1024, 5, 64, 1.0)
    assert (cfg.topk_content, cfg.beam, cfg.baseline_decay, cfg.max_vocab) == (1000, 20, 0.9, 30000)


def test_config_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nemb = 32\nnormalize-reward=no\nlr=0.5  # inline\n", encoding="utf-8")
    cfg = TrainConfig().replace(**read_config_file(path))
    assert cfg.emb == 32 and cfg.normalize_reward is False and cfg.lr == 0.5
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    path.write_text("bogus=1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="bogus"):
        read_config_file(path)
    path.write_text("emb\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        coerce({"emb": "many"})
    with pytest.raises(ConfigError):
        coerce({"normalize_reward": "maybe"})
    with pytest.raises(ConfigError):
        TrainConfig(samples=0)


def test_synthetic_pairs_are_topical():
    pairs, topics = synthetic.make_pairs(200, n_topics=4, words_per_topic=11, seed=1)
    assert len(pairs) == 200
    for (msg, resp), t in zip(pairs, topics):
        own = set(synthetic.topic_words(t, 11))
        others = {w for u in range(4) if u != t for w in synthetic.topic_words(u, 11)}
        assert msg[-1] == synthetic.TOPICS[t]
        assert (set(msg) | set(resp)) & others == set()
        assert set(resp) & own
    again, _ = synthetic.make_pairs(200, n_topics=4, words_per_topic=11, seed=1)
    assert again == pairs
    with pytest.raises(ValueError):
        synthetic.make_pairs(10, n_topics=0)
    with pytest.raises(ValueError):
        synthetic.make_pairs(10, words_per_topic=3, group_size=5)


def test_synthetic_messages_and_responses_share_a_group():
    pairs, topics = synthetic.make_pairs(100, n_topics=2, words_per_topic=21, seed=0, group_size=5)
    for (msg, resp), t in zip(pairs, topics):
        name = synthetic.TOPICS[t]
        m = {int(w[len(name):]) // 5 for w in msg if w.startswith(name) and w != name}
        r = {int(w[len(name):]) // 5 for w in resp if w.startswith(name) and w != name}
        assert len(m | r) == 1


def test_write_corpus(toy_corpus):
    paths = toy_corpus
    lex = read_lexicon(paths["lexicon"])
    assert len(lex) == 30
    vocab = build_vocabulary(paths["train"], content_lexicon=paths["lexicon"])
    assert set(vocab.words[i] for i in vocab.content_ids) <= lex
    train = load_corpus(paths["train"], vocab)
    valid = load_corpus(paths["valid"], vocab)
    test = load_corpus(paths["test"], vocab)
    assert (len(train), len(valid), len(test)) == (240, 30, 30)
    topics = paths["test_topics"].read_text(encoding="utf-8").split()
    assert len(topics) == 30
    header = paths["embeddings"].read_text(encoding="utf-8").splitlines()[0].split()
    assert int(header[1]) == 16
