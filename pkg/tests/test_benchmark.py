import numpy as np
import pytest

from dvs2s import benchmark, inference
from dvs2s.benchmark import BenchConfig, BenchmarkError, projection_flops


def test_projection_flops_reference_dims():
    s, d, r = projection_flops(620, 1024, 30000, 1701, 15)
    assert (s, d) == (739_800_000, 72_666_660)
    assert r == pytest.approx(0.0982, abs=5e-5)


def test_projection_flops_identities():
    s, d, _ = projection_flops(8, 6, 100, 100, 1)
    assert d - s == 6 * 100
    ratios = [projection_flops(8, 6, 100, 100, L)[2] for L in (1, 10, 1000, 10**6)]
    assert ratios == sorted(ratios, reverse=True) and ratios[-1] == pytest.approx(1.0, abs=1e-6)
    s, d, _ = projection_flops(8, 6, 100, 30, 5, width=20, construction_rows=90)
    assert (s, d) == (5 * 20 * 100, 5 * 20 * 30 + 6 * 90)
    with pytest.raises(ValueError):
        projection_flops(0, 6, 100, 30, 5)


def test_bench_config_validation():
    cfg = BenchConfig(p=8, m=6, vocab_size=50, n_function=10, topk=5)
    assert cfg.n_content == 40 and cfg.dyn_size == 15
    for bad in (dict(m=5), dict(topk=41), dict(n_function=3), dict(beam=0)):
        with pytest.raises(ValueError):
            BenchConfig(**{**dict(p=8, m=6, vocab_size=50, n_function=10, topk=5), **bad})


def _small(**kw):
    base = dict(p=8, m=6, vocab_size=60, n_function=12, topk=10, beam=3, len_r=5, len_m=4, dtype="float64")
    base.update(kw)
    return BenchConfig(**base)


@pytest.mark.parametrize("topk", [0, 10, 48])
def test_instrumented_macs_match_closed_form(topk):
    cfg = _small(topk=topk)
    params, vocab = benchmark.build_model(cfg, 0)
    msg = benchmark._random_message(cfg, 0)
    s, d = benchmark.count_macs(msg, params, vocab, cfg)
    cs, cd, _ = projection_flops(cfg.p, cfg.m, cfg.vocab_size, cfg.dyn_size, cfg.len_r,
                                 width=cfg.p + 2 * cfg.m, construction_rows=cfg.n_content)
    assert (s, d) == (cs, cd)


def test_full_dynamic_vocabulary_decodes_identically():
    cfg = _small(topk=48)
    params, vocab = benchmark.build_model(cfg, 1)
    msg = benchmark._random_message(cfg, 1)
    a = benchmark.decode_static(msg, params, cfg)
    b = benchmark.decode_dynamic(msg, params, vocab, cfg)
    assert [h.tokens for h in a] == [h.tokens for h in b]
    assert all(len(h.tokens) == cfg.len_r for h in a)


def test_run_decode_benchmark_report():
    cfg = _small()
    rep = benchmark.run_decode_benchmark(cfg, seed=0, repetitions=5, backend="python")
    assert rep.backend == "python"
    assert rep.static_mean > 0 and rep.dynamic_mean > 0
    assert rep.ratio == pytest.approx(rep.dynamic_mean / rep.static_mean)
    text = rep.to_text()
    assert "ratio=" in text and f"static_macs={rep.static_macs}" in text
    assert "ms/word" in rep.pretty()
    with pytest.raises(ValueError):
        benchmark.run_decode_benchmark(cfg, repetitions=4)


def test_compare_backends_and_kernel_timings():
    out = benchmark.compare_backends(_small(), repetitions=5)
    assert set(out) == set(benchmark.kernels.available_backends())
    times = benchmark.kernel_timings(rows=4, cols=500, k=4, repetitions=3)
    assert all(t > 0 for t in times.values())


def test_insufficient_memory_is_reported():
    cfg = BenchConfig(p=4096, m=65536, vocab_size=3_000_000, n_function=701, topk=1000)
    with pytest.raises(BenchmarkError, match="reduce"):
        benchmark.build_model(cfg, 0)


def test_equal_work_ratio_bound():
    cfg = BenchConfig(p=64, m=128, vocab_size=4000, n_function=100, topk=3900, beam=5, len_r=8, len_m=8)
    rep = benchmark.run_decode_benchmark(cfg, repetitions=15)
    assert 0.95 <= rep.ratio <= 1.15


def test_ratio_decreases_with_k():
    cfg = BenchConfig(p=64, m=128, vocab_size=8000, n_function=100, topk=0, beam=5, len_r=8, len_m=8)
    params, vocab = benchmark.build_model(cfg, 0)
    ratios = []
    for k in (7900, 6000, 4000, 2000, 500):
        c = BenchConfig(**{**cfg.__dict__, "topk": k})
        ratios.append(benchmark.run_decode_benchmark(c, repetitions=7, params=params, vocab=vocab).ratio)
    inversions = sum(b > a for a, b in zip(ratios, ratios[1:]))
    assert inversions <= 1, ratios


def test_mac_counter_accumulates():
    c = inference.MacCounter()
    c.add("gru", 3)
    c.add("gru", np.int64(4))
    assert c["gru"] == 7 and c["projection"] == 0
