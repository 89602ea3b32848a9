"""Decode-time benchmark: static full-vocabulary decoding against dynamic
top-K decoding on random-weight models, plus exact multiply-accumulate counts.
"""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from dvs2s import inference, kernels, model
from dvs2s.corpus import Vocabulary


class BenchmarkError(RuntimeError):
    pass


def projection_flops(p, m, V, T, len_r, len_m=None, width=None, construction_rows=None):
    """Closed-form MAC counts of the output layer, static vs dynamic.

    static = len_r * width * V; dynamic = len_r * width * T + m * construction_rows.
    ``width`` defaults to m + p and ``construction_rows`` to V; the decoder
    implemented here has width p + 2m and a predictor over the content words
    only, which is what the instrumented counter measures. ``len_m`` does not
    enter the output-layer terms and is accepted for symmetry.

    Returns (static, dynamic, dynamic / static).
    """
    for name, v in (("p", p), ("m", m), ("V", V), ("T", T), ("len_r", len_r)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    width = m + p if width is None else width
    rows = V if construction_rows is None else construction_rows
    static = len_r * width * V
    dynamic = len_r * width * T + m * rows
    return static, dynamic, dynamic / static


@dataclass
class BenchConfig:
    p: int = 620
    m: int = 1024
    vocab_size: int = 30000
    n_function: int = 701
    topk: int = 1000
    beam: int = 20
    len_r: int = 15
    len_m: int = 15
    dtype: str = "float32"

    def __post_init__(self):
        if min(self.p, self.m, self.vocab_size, self.beam, self.len_r, self.len_m) < 1:
            raise ValueError("benchmark dimensions must be positive")
        if self.m % 2:
            raise ValueError("m must be even")
        if not 4 <= self.n_function < self.vocab_size:
            raise ValueError("n_function must lie in [4, vocab_size)")
        if not 0 <= self.topk <= self.vocab_size - self.n_function:
            raise ValueError("topk exceeds the number of content words")

    @property
    def n_content(self):
        return self.vocab_size - self.n_function

    @property
    def dyn_size(self):
        return self.n_function + self.topk


@dataclass
class TimingReport:
    p: int
    m: int
    vocab_size: int
    dyn_size: int
    len_r: int
    beam: int
    repetitions: int
    backend: str
    static_mean: float  # seconds per generated word
    static_std: float
    dynamic_mean: float
    dynamic_std: float
    ratio: float
    static_macs: int  # output layer + construction, instrumented
    dynamic_macs: int

    def to_text(self):
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in asdict(self).items())

    def pretty(self):
        return (
            f"p={self.p} m={self.m} |V|={self.vocab_size} |T|={self.dyn_size} "
            f"len_r={self.len_r} beam={self.beam} reps={self.repetitions} backend={self.backend}\n"
            f"static   {self.static_mean * 1e3:9.3f} ms/word (sd {self.static_std * 1e3:.3f})\n"
            f"dynamic  {self.dynamic_mean * 1e3:9.3f} ms/word (sd {self.dynamic_std * 1e3:.3f})\n"
            f"ratio    {self.ratio:.4f}\n"
            f"MACs     static {self.static_macs:,}  dynamic {self.dynamic_macs:,}\n"
        )


def _param_bytes(cfg):
    dims = model.ModelDims(cfg.vocab_size, cfg.n_content, emb=cfg.p, hidden=cfg.m)
    n = sum(int(np.prod(s)) for s in model.param_shapes(dims).values())
    # float64 draws are cast down, so the largest tensor briefly exists twice
    return n * np.dtype(cfg.dtype).itemsize + cfg.vocab_size * dims.proj_in * 8


def _physical_memory():
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return None


def build_model(cfg, seed):
    """Random-weight parameters and a placeholder vocabulary for ``cfg``."""
    need = _param_bytes(cfg)
    have = _physical_memory()
    hint = "reduce --dims or --vocab-size"
    if have is not None and need > 0.8 * have:
        raise BenchmarkError(f"model needs about {need / 2**30:.1f} GiB, machine has {have / 2**30:.1f} GiB; {hint}")
    vocab = Vocabulary.synthetic(cfg.n_function, cfg.n_content)
    dims = model.ModelDims(cfg.vocab_size, cfg.n_content, emb=cfg.p, hidden=cfg.m)
    try:
        params = model.new_params(dims, seed, dtype=np.dtype(cfg.dtype))
    except MemoryError as err:
        raise BenchmarkError(f"out of memory building the model; {hint}") from err
    return params, vocab


def _random_message(cfg, seed):
    rng = np.random.default_rng(seed + 1)
    return rng.integers(4, cfg.vocab_size, size=cfg.len_m)


def decode_static(message, params, cfg, counter=None):
    enc = model.encode(message, params)
    dyn = model.DynamicVocab.full(cfg.vocab_size)
    return inference.beam_search(enc, dyn, params, cfg.beam, cfg.len_r, min_len=cfg.len_r, counter=counter)


def decode_dynamic(message, params, vocab, cfg, counter=None):
    enc = model.encode(message, params)
    dyn, _ = inference.dynamic_vocab(enc, params, vocab, cfg.topk, counter)
    return inference.beam_search(enc, dyn, params, cfg.beam, cfg.len_r, min_len=cfg.len_r, counter=counter)


def count_macs(message, params, vocab, cfg):
    """Instrumented MAC counts (projection + construction) of one greedy decode per mode.

    EOS is banned until ``len_r`` so both modes run exactly ``len_r`` steps.
    """
    greedy = BenchConfig(**{**asdict(cfg), "beam": 1})
    cs, cd = inference.MacCounter(), inference.MacCounter()
    decode_static(message, params, greedy, cs)
    decode_dynamic(message, params, vocab, greedy, cd)
    return cs["projection"] + cs["construction"], cd["projection"] + cd["construction"]


def _trimmed(times):
    times = sorted(times)
    drop = int(0.1 * len(times))
    kept = times[: len(times) - drop]
    return float(np.mean(kept)), float(np.std(kept))


def run_decode_benchmark(cfg, seed=0, repetitions=5, backend=None, params=None, vocab=None):
    """Time both decoding modes; per-word times exclude the slowest 10% of runs.

    One untimed warm-up of each mode precedes the measurement, and the two
    modes are interleaved so that drift affects both alike. Encoding is timed
    in both modes; the dynamic mode also pays for the predictor and top-K.
    """
    if repetitions < 5:
        raise ValueError("repetitions must be >= 5")
    if params is None or vocab is None:
        params, vocab = build_model(cfg, seed)
    message = _random_message(cfg, seed)
    previous = kernels.get_backend()
    if backend is not None:
        kernels.set_backend(backend)
    try:
        decode_static(message, params, cfg)
        decode_dynamic(message, params, vocab, cfg)
        static_t, dynamic_t = [], []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            decode_static(message, params, cfg)
            t1 = time.perf_counter()
            decode_dynamic(message, params, vocab, cfg)
            t2 = time.perf_counter()
            static_t.append((t1 - t0) / cfg.len_r)
            dynamic_t.append((t2 - t1) / cfg.len_r)
        used = kernels.get_backend()
    finally:
        kernels.set_backend(previous)
    s_mean, s_std = _trimmed(static_t)
    d_mean, d_std = _trimmed(dynamic_t)
    s_macs, d_macs = count_macs(message, params, vocab, cfg)
    return TimingReport(
        p=cfg.p,
        m=cfg.m,
        vocab_size=cfg.vocab_size,
        dyn_size=cfg.dyn_size,
        len_r=cfg.len_r,
        beam=cfg.beam,
        repetitions=repetitions,
        backend=used,
        static_mean=s_mean,
        static_std=s_std,
        dynamic_mean=d_mean,
        dynamic_std=d_std,
        ratio=d_mean / s_mean,
        static_macs=s_macs,
        dynamic_macs=d_macs,
    )


def compare_backends(cfg, seed=0, repetitions=5):
    """One TimingReport per available kernel backend, sharing a single model."""
    params, vocab = build_model(cfg, seed)
    return {
        name: run_decode_benchmark(cfg, seed, repetitions, backend=name, params=params, vocab=vocab)
        for name in kernels.available_backends()
    }


def kernel_timings(rows=20, cols=30000, k=20, repetitions=50, seed=0):
    """Mean seconds per beam top-k call for each backend on float32 scores."""
    scores = np.random.default_rng(seed).standard_normal((rows, cols)).astype(np.float32)
    previous = kernels.get_backend()
    out = {}
    try:
        for name in kernels.available_backends():
            kernels.set_backend(name)
            kernels.topk_flat(scores, k)
            t0 = time.perf_counter()
            for _ in range(repetitions):
                kernels.topk_flat(scores, k)
            out[name] = (time.perf_counter() - t0) / repetitions
    finally:
        kernels.set_backend(previous)
    return out
