import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dvs2s import metrics
from dvs2s.metrics import EmbeddingTable, MetricReport, bleu_n, distinct_n, embedding_metrics, recall_coverage

sentences = st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=6), min_size=1, max_size=5)


def test_bleu_hand_values():
    assert bleu_n([["a", "b"]], [["a", "c"]], 1) == pytest.approx(50.0, abs=1e-9)
    assert bleu_n([["a", "b", "c"]] * 2, [["a", "b", "c"]] * 2, 3) == pytest.approx(100.0, abs=1e-9)
    assert bleu_n([["x", "y"]], [["a", "b"]], 1) == 0.0
    # brevity penalty: c=2, r=4 -> exp(1 - 2) with unigram precision 1
    assert bleu_n([["a", "b"]], [["a", "b", "c", "d"]], 1) == pytest.approx(100 * math.exp(-1), abs=1e-9)
    # clipping: "a a a" vs "a" -> 1/3
    assert bleu_n([["a", "a", "a"]], [["a", "x", "y"]], 1) == pytest.approx(100 / 3, abs=1e-9)
    # bigram geometric mean: p1 = 3/4, p2 = 1/3
    assert bleu_n([["a", "b", "c", "d"]], [["a", "b", "x", "c"]], 2) == pytest.approx(100 * math.sqrt(0.75 / 3), abs=1e-9)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu_n([], [], 1)
    with pytest.raises(ValueError):
        bleu_n([["a"]], [], 1)
    with pytest.raises(ValueError):
        bleu_n([["a"]], [["a"]], 0)


@given(sentences, st.data())
def test_bleu_range_and_permutation_invariance(hyps, data):
    refs = data.draw(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=6),
                              min_size=len(hyps), max_size=len(hyps)))
    perm = data.draw(st.permutations(range(len(hyps))))
    for n in (1, 2, 3):
        b = bleu_n(hyps, refs, n)
        assert 0.0 <= b <= 100.0 + 1e-9
        assert bleu_n([hyps[i] for i in perm], [refs[i] for i in perm], n) == pytest.approx(b, abs=1e-9)


def _table():
    return EmbeddingTable({"a": [1.0, 0.0], "b": [0.0, -2.0], "c": [1.0, 1.0], "d": [-1.0, 0.0]}, 2)


def test_embedding_metrics_hand_values():
    avg, ext, gre = embedding_metrics(["a", "b"], ["a", "c"], _table())
    assert avg == pytest.approx(0.0, abs=1e-12)
    assert ext == pytest.approx(-1 / math.sqrt(10), abs=1e-12)
    assert gre == pytest.approx(0.5 * (0.5 + 0.5 * (1 + 1 / math.sqrt(2))), abs=1e-12)


def test_embedding_metrics_trivial_cases():
    t = _table()
    np.testing.assert_allclose(embedding_metrics(["a", "c"], ["a", "c"], t), (1.0, 1.0, 1.0), atol=1e-12)
    t2 = EmbeddingTable({"x": [1.0, 0.0], "y": [0.0, 1.0]}, 2)
    np.testing.assert_allclose(embedding_metrics(["x"], ["y"], t2), (0.0, 0.0, 0.0), atol=1e-12)
    assert embedding_metrics(["zzz"], ["a"], t) is None


def test_extrema_positive_wins_ties():
    t = _table()
    # dim 0 over {a, d}: max 1, min -1 -> +1
    assert metrics._extrema(t.lookup(["a", "d"])).tolist() == [1.0, 0.0]


@given(st.floats(0.01, 100))
def test_embedding_metrics_scale_invariance(scale):
    t = _table()
    scaled = EmbeddingTable({w: scale * v for w, v in t.vectors.items()}, 2)
    np.testing.assert_allclose(embedding_metrics(["a", "b"], ["c", "d"], scaled),
                               embedding_metrics(["a", "b"], ["c", "d"], t), atol=1e-12)


def test_corpus_embedding_metrics_counts_skips():
    avg, ext, gre, used, skipped = metrics.corpus_embedding_metrics([["a"], ["q"]], [["a"], ["a"]], _table())
    assert (used, skipped) == (1, 1) and avg == pytest.approx(1.0)


def test_embedding_table_load(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar 0.5 0 -1\n", encoding="utf-8")
    t = EmbeddingTable.load(path)
    assert "foo" in t and t.dim == 3
    np.testing.assert_array_equal(t.vectors["bar"], [0.5, 0.0, -1.0])
    path.write_text("3 3\nfoo 1 2 3\n", encoding="utf-8")
    with pytest.raises(ValueError):
        EmbeddingTable.load(path)
    path.write_text("1 3\nfoo 1 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match=":2:"):
        EmbeddingTable.load(path)


def test_distinct_hand_values():
    assert distinct_n([["a", "a", "a"]], 1) == pytest.approx(1 / 3, abs=1e-12)
    assert distinct_n([["a", "b", "c"]], 1) == 1.0
    assert distinct_n([["a", "b"], ["a", "b"]], 2) == pytest.approx(0.5, abs=1e-12)
    assert distinct_n([["a"]], 2) == 0.0
    with pytest.raises(ValueError):
        distinct_n([], 1)


def test_recall_hand_values():
    assert recall_coverage([{"a", "b", "c", "d"}], [["a", "b", "c"]]) == 1.0
    assert recall_coverage([{"a", "b"}], [["a", "b", "c"]]) == pytest.approx(2 / 3, abs=1e-12)
    assert recall_coverage([{"a"}, {"a"}], [["a"], ["a", "b"]]) == pytest.approx(0.75, abs=1e-12)
    assert recall_coverage([{"a"}], [["a", "a", "b"]]) == pytest.approx(0.5)  # distinct words
    with pytest.raises(ValueError):
        recall_coverage([{"a"}], [[]])


@given(sentences, st.sets(st.sampled_from("abcde")), st.sets(st.sampled_from("abcde")))
def test_recall_monotone_in_vocabulary(resps, small, extra):
    big = small | extra
    lo = recall_coverage([small] * len(resps), resps)
    hi = recall_coverage([big] * len(resps), resps)
    assert 0.0 <= lo <= hi <= 1.0


def test_report_round_trip_and_evaluate():
    hyps = [["a", "b"], ["c", "a"]]
    refs = [["a", "c"], ["c", "a"]]
    rep = metrics.evaluate(hyps, refs, table=_table(), vocabularies=[{"a", "c"}, {"c"}])
    assert rep.recall == pytest.approx(0.75)
    assert rep.n_pairs == 2 and rep.n_embedding_pairs == 2
    assert MetricReport.from_text(rep.to_text()) == rep
    assert "BLEU-1/2/3" in rep.pretty()
    bare = metrics.evaluate(hyps, refs)
    assert bare.recall is None and MetricReport.from_text(bare.to_text()) == bare
    assert "n/a" in bare.pretty()
