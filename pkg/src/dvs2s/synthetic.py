"""Toy topical dialogue corpus.

Every pair belongs to one topic. A topic's numbered words are split into
small groups; the message mentions words of one group and ends with the
topic name, and the response uses words of the same group, wrapped in shared
function-word templates. The set of plausible response content words is
therefore a deterministic function of the message topic (and, more finely,
of the group), and the topic name is itself one of the topic's content words.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

TOPICS = ("music", "sport", "food", "travel", "movie", "game", "pet", "weather", "book", "work",
          "car", "art", "garden", "phone", "school", "health")

# Messages end with the topic name: the word predictor reads only the
# encoder's last state, which then sees the cue directly.
MESSAGE_TEMPLATES = (
    "what do you think about {a} and {b} in {t}",
    "i really like {a} , how about you ? i mean {t}",
    "have you ever tried {a} with {b} in {t}",
    "tell me something about {a} in {t}",
    "is {a} better than {b} in {t}",
    "my friend says {a} is the best in {t}",
)

RESPONSE_TEMPLATES = (
    "i think {a} is better than {b} .",
    "yes , {a} and {b} are my favorite",
    "no , i prefer {a}",
    "{a} is great but {b} is too",
    "you should try {a} with {b}",
    "i do not like {a} at all",
    "{a} is the best {t} ever",
)


def topic_words(topic, words_per_topic=40):
    """Content words of ``topic``: its name followed by numbered words."""
    name = TOPICS[topic]
    return [name] + [f"{name}{i:02d}" for i in range(words_per_topic - 1)]


def _groups(words, group_size):
    numbered = words[1:]
    return [numbered[i : i + group_size] for i in range(0, len(numbered), group_size)]


def _fill(template, name, group, rng):
    a, b = rng.choice(group, size=2, replace=False)
    return template.format(a=a, b=b, t=name).split()


def make_pairs(n_pairs=5000, n_topics=10, words_per_topic=40, seed=0, group_size=5):
    """Returns (pairs, topics): tokenised (message, response) pairs and each pair's topic."""
    if not 1 <= n_topics <= len(TOPICS):
        raise ValueError(f"n_topics must lie in [1, {len(TOPICS)}]")
    if group_size < 2 or words_per_topic - 1 < group_size:
        raise ValueError("need group_size >= 2 and at least one full group per topic")
    rng = np.random.default_rng(seed)
    groups = []
    for t in range(n_topics):
        g = _groups(topic_words(t, words_per_topic), group_size)
        groups.append([x for x in g if len(x) >= 2])
    pairs, topics = [], []
    for _ in range(n_pairs):
        t = int(rng.integers(n_topics))
        group = groups[t][rng.integers(len(groups[t]))]
        name = TOPICS[t]
        msg = _fill(MESSAGE_TEMPLATES[rng.integers(len(MESSAGE_TEMPLATES))], name, group, rng)
        resp = _fill(RESPONSE_TEMPLATES[rng.integers(len(RESPONSE_TEMPLATES))], name, group, rng)
        pairs.append((msg, resp))
        topics.append(t)
    return pairs, topics


def make_embeddings(n_topics=10, words_per_topic=40, dim=16, seed=0):
    """Word vectors clustered by topic; function words get small random vectors."""
    rng = np.random.default_rng(seed + 7)
    vectors = {}
    for t in range(n_topics):
        centre = rng.standard_normal(dim)
        for w in topic_words(t, words_per_topic):
            vectors[w] = centre + 0.3 * rng.standard_normal(dim)
    filler = {w for tpl in MESSAGE_TEMPLATES + RESPONSE_TEMPLATES for w in tpl.split() if "{" not in w}
    for w in sorted(filler):
        vectors[w] = 0.1 * rng.standard_normal(dim)
    return vectors


def _write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for msg, resp in pairs:
            fh.write(" ".join(msg) + "\t" + " ".join(resp) + "\n")


def write_corpus(out_dir, n_pairs=5000, n_topics=10, words_per_topic=40, seed=0, valid_frac=0.1, test_frac=0.1,
                 group_size=5):
    """Write train/valid/test splits, a content lexicon, topic labels and embeddings.

    Returns a dict of the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs, topics = make_pairs(n_pairs, n_topics, words_per_topic, seed, group_size)
    n_valid = int(round(valid_frac * n_pairs))
    n_test = int(round(test_frac * n_pairs))
    n_train = n_pairs - n_valid - n_test
    if n_train <= 0:
        raise ValueError("no pairs left for training")
    splits = {
        "train": (0, n_train),
        "valid": (n_train, n_train + n_valid),
        "test": (n_train + n_valid, n_pairs),
    }
    paths = {}
    for name, (a, b) in splits.items():
        paths[name] = out / f"{name}.txt"
        _write_pairs(paths[name], pairs[a:b])
    paths["test_topics"] = out / "test_topics.txt"
    paths["test_topics"].write_text("".join(f"{t}\n" for t in topics[n_train + n_valid :]), encoding="utf-8")
    paths["lexicon"] = out / "lexicon.txt"
    lex = [w for t in range(n_topics) for w in topic_words(t, words_per_topic)]
    paths["lexicon"].write_text("".join(f"{w}\n" for w in lex), encoding="utf-8")
    vectors = make_embeddings(n_topics, words_per_topic, seed=seed)
    dim = len(next(iter(vectors.values())))
    paths["embeddings"] = out / "embeddings.txt"
    with open(paths["embeddings"], "w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {dim}\n")
        for w, v in vectors.items():
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
    return paths
