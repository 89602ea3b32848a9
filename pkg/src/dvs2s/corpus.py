"""Corpus ingestion, vocabulary construction and batching.

Corpus files hold one message/response pair per line, ``message TAB
response``, with tokens already separated by single spaces.
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")

FUNCTION = "F"
CONTENT = "C"

# Fallback function-word list used when no content lexicon is supplied.
STOPWORDS = frozenset(
    """
    a an the and or but if so as of at by for from in into on onto to with
    without about over under than then too very just also not no yes
    i me my mine we us our you your he him his she her it its they them their
    this that these those there here what which who whom whose when where why how
    is am are was were be been being do does did have has had will would shall
    should can could may might must
    all any some each every both either neither one other such own same
    up down out off again once more most much many few less least
    ok oh ah hmm haha well yeah
    . , ! ? ; : ' " ... ~
    """.split()
)


class CorpusError(ValueError):
    """Malformed corpus, vocabulary or lexicon input."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered word table with counts and function/content classes.

    The first four entries are always the special tokens PAD, BOS, EOS and
    UNK, classed as function words.
    """

    words: tuple[str, ...]
    counts: tuple[int, ...]
    classes: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)
    function_mask: np.ndarray = field(init=False, repr=False, compare=False)
    content_ids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.words) == len(self.counts) == len(self.classes)):
            raise CorpusError("vocabulary columns differ in length")
        if tuple(self.words[:4]) != SPECIAL_TOKENS:
            raise CorpusError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if any(c not in (FUNCTION, CONTENT) for c in self.classes):
            raise CorpusError("word class must be F or C")
        if any(c != FUNCTION for c in self.classes[:4]):
            raise CorpusError("special tokens must be function words")
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise CorpusError("duplicate word in vocabulary")
        fmask = np.array([c == FUNCTION for c in self.classes], dtype=bool)
        fmask.setflags(write=False)
        content = np.flatnonzero(~fmask)
        content.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "function_mask", fmask)
        object.__setattr__(self, "content_ids", content)

    @classmethod
    def from_entries(cls, entries):
        """Build from ``(word, count, class)`` triples that exclude the specials."""
        words = list(SPECIAL_TOKENS)
        counts = [0, 0, 0, 0]
        classes = [FUNCTION] * 4
        for word, count, cls_ in entries:
            words.append(word)
            counts.append(int(count))
            classes.append(cls_)
        return cls(tuple(words), tuple(counts), tuple(classes))

    @classmethod
    def synthetic(cls, n_function, n_content):
        """Placeholder vocabulary with ``n_function`` function entries (specials included)."""
        if n_function < 4:
            raise ValueError("n_function counts the four specials and must be >= 4")
        entries = [(f"f{i}", 0, FUNCTION) for i in range(n_function - 4)]
        entries += [(f"c{i}", 0, CONTENT) for i in range(n_content)]
        return cls.from_entries(entries)

    def __len__(self):
        return len(self.words)

    @property
    def n_content(self):
        return int(self.content_ids.size)

    @property
    def n_function(self):
        return len(self.words) - self.n_content

    def lookup(self, word):
        return self.index.get(word, UNK)

    def encode(self, tokens):
        return [self.lookup(t) for t in tokens]

    def decode(self, ids, strip_eos=True):
        out = []
        for i in ids:
            if strip_eos and i == EOS:
                break
            out.append(self.words[i])
        return out

    def to_text(self):
        return "".join(f"{w}\t{c}\t{k}\n" for w, c, k in zip(self.words, self.counts, self.classes))

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        words, counts, classes = [], [], []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 'word TAB count TAB F|C'")
            try:
                count = int(parts[1])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad count {parts[1]!r}") from None
            words.append(parts[0])
            counts.append(count)
            classes.append(parts[2])
        return cls(tuple(words), tuple(counts), tuple(classes))


@dataclass(frozen=True)
class DialogPair:
    message: tuple[int, ...]
    response: tuple[int, ...]  # ends with EOS


@dataclass(frozen=True)
class Batch:
    messages: np.ndarray
    message_lengths: np.ndarray
    responses: np.ndarray
    response_lengths: np.ndarray

    def __len__(self):
        return int(self.messages.shape[0])


def _read_pairs(path):
    """Yield ``(lineno, message_tokens, response_tokens)`` from a corpus file."""
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if "\t" not in line:
            raise CorpusError(f"{path}:{lineno}: missing TAB between message and response")
        msg, resp = line.split("\t", 1)
        msg_toks, resp_toks = msg.split(), resp.split()
        if not msg_toks or not resp_toks:
            raise CorpusError(f"{path}:{lineno}: empty message or response")
        yield lineno, msg_toks, resp_toks


def read_text_pairs(path):
    """Raw token pairs, without vocabulary mapping."""
    return [(m, r) for _, m, r in _read_pairs(path)]


def load_corpus(path, vocab):
    """Map a corpus file to :class:`DialogPair` objects; unknown words become UNK."""
    pairs = []
    for _, msg, resp in _read_pairs(path):
        pairs.append(DialogPair(tuple(vocab.encode(msg)), tuple(vocab.encode(resp)) + (EOS,)))
    return pairs


def read_lexicon(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read content lexicon {path}: {exc}") from exc
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def build_vocabulary(corpus_path, max_size=30000, function_min_count=10, content_lexicon=None):
    """Frequency-ranked response-side vocabulary with the function/content split.

    A kept word is a function word when it occurs more than
    ``function_min_count`` times and is not a content word. Content words are
    those listed in ``content_lexicon`` when given, otherwise every word
    outside the built-in stopword list.
    """
    if max_size < 4:
        raise ValueError("max_size must be >= 4")
    lexicon = read_lexicon(content_lexicon) if content_lexicon is not None else None
    counts = Counter()
    path = Path(corpus_path)
    if path.stat().st_size:
        for _, _, resp in _read_pairs(path):
            counts.update(t for t in resp if t not in SPECIAL_TOKENS)
    # Counter keeps first-insertion order and sorted() is stable -> ties by first occurrence
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])[: max_size - 4]
    entries = []
    for word, count in ranked:
        is_content = word in lexicon if lexicon is not None else word not in STOPWORDS
        cls_ = FUNCTION if count > function_min_count and not is_content else CONTENT
        entries.append((word, count, cls_))
    return Vocabulary.from_entries(entries)


def target_indicator(response, vocab):
    """Bit vector over the vocabulary: function words plus the words of ``response``."""
    bits = np.array(vocab.function_mask, dtype=np.uint8)
    bits[np.asarray(response, dtype=np.int64)] = 1
    return bits


def pad_sequences(seqs, pad=PAD):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def batch_from_pairs(pairs):
    msgs, mlen = pad_sequences([p.message for p in pairs])
    resps, rlen = pad_sequences([p.response for p in pairs])
    return Batch(msgs, mlen, resps, rlen)


def make_batches(pairs, batch_size, seed):
    """Shuffle deterministically under ``seed`` and cut into padded batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [
        batch_from_pairs([pairs[i] for i in order[start : start + batch_size]])
        for start in range(0, len(pairs), batch_size)
    ]
