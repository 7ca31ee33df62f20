"""Timing harness for the two selection backends."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .simhash import ProjectionMatrix, exact_topk, fingerprint, hamming_topk

MIN_TRIALS = 30
SLOPE_LIMIT = 1.2
MIN_SCALE_RANGE = 16


@dataclass(frozen=True)
class BenchRow:
    backend: str
    pool: int
    k: int
    m_bits: int
    dim: int
    batch: int
    threads: int
    median_s: float
    min_s: float
    max_s: float

    @property
    def throughput(self) -> float:
        """Queries per second at the median step time."""
        return self.batch / self.median_s


@dataclass
class BenchReport:
    rows: list[BenchRow]
    slope: float | None = None
    slope_ok: bool | None = None
    largest_ok: bool | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.slope_ok is not False and self.largest_ok is not False

    def table(self) -> str:
        head = ("backend", "pool", "k", "m_bits", "dim", "B", "threads", "median_ms", "min_ms", "max_ms",
                "queries/s")
        body = [(r.backend, str(r.pool), str(r.k), str(r.m_bits), str(r.dim), str(r.batch), str(r.threads),
                 f"{r.median_s * 1e3:.4f}", f"{r.min_s * 1e3:.4f}", f"{r.max_s * 1e3:.4f}",
                 f"{r.throughput:.1f}") for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in [head, *body]]
        if self.slope is not None:
            lines.append(f"hamming log-log slope: {self.slope:.3f} (limit {SLOPE_LIMIT}) "
                         f"{'PASS' if self.slope_ok else 'FAIL'}")
        if self.largest_ok is not None:
            lines.append(f"hamming <= exact at largest pool: {'PASS' if self.largest_ok else 'FAIL'}")
        lines.extend(self.notes)
        return "\n".join(lines)

    def delimited(self, sep: str = ",") -> str:
        head = ["backend", "pool", "k", "m_bits", "dim", "batch", "threads", "median_s", "min_s", "max_s",
                "throughput"]
        out = [sep.join(head)]
        for r in self.rows:
            out.append(sep.join(map(str, [r.backend, r.pool, r.k, r.m_bits, r.dim, r.batch, r.threads,
                                          repr(r.median_s), repr(r.min_s), repr(r.max_s),
                                          repr(r.throughput)])))
        return "\n".join(out) + "\n"


def _time(fn, trials: int, warmup: int) -> tuple[float, float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples)), min(samples), max(samples)


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def run_bench(pool_sizes, k: int = 10, m_bits: int = 64, dim: int = 64, batch: int = 1,
              trials: int = MIN_TRIALS, warmup: int = 3, threads: int = 1, seed: int = 0,
              backends=("simhash", "exact")) -> BenchReport:
    """Time one selection step per backend at each pool size.

    A step fingerprints ``batch`` query vectors and ranks a pool whose
    fingerprints were computed beforehand, as in training where table
    fingerprints are cached. The exact step ranks by inner product instead.
    """
    pool_sizes = sorted(set(int(n) for n in pool_sizes))
    if not pool_sizes:
        raise ValueError("pool-size grid is empty")
    if trials < 1 or warmup < 0 or batch < 1 or threads < 1:
        raise ValueError("trials, batch and threads must be positive and warmup non-negative")
    if any(k > n for n in pool_sizes):
        raise ValueError(f"k={k} exceeds the smallest pool size")
    rng = np.random.default_rng(seed)
    proj = ProjectionMatrix(dim, m_bits, rng)
    rows = []
    pool_exec = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for n in pool_sizes:
            emb = rng.normal(size=(n, dim))
            words = fingerprint(emb, proj)
            queries = rng.normal(size=(batch, dim))

            def run_queries(one, qs=queries):
                if pool_exec is None:
                    for q in qs:
                        one(q)
                else:
                    list(pool_exec.map(one, qs))

            steps = {
                "simhash": lambda: run_queries(lambda q, w=words: hamming_topk(fingerprint(q, proj), w, k)),
                "exact": lambda: run_queries(lambda q, e=emb: exact_topk(q, e, k)),
            }
            for backend in backends:
                med, lo, hi = _time(steps[backend], trials, warmup)
                rows.append(BenchRow(backend, n, k, m_bits, dim, batch, threads, med, lo, hi))
    finally:
        if pool_exec is not None:
            pool_exec.shutdown()
    return _verdicts(BenchReport(rows), pool_sizes, trials)


def _verdicts(report: BenchReport, pool_sizes: list[int], trials: int) -> BenchReport:
    if trials < MIN_TRIALS:
        report.notes.append(f"note: {trials} trials per point, below the {MIN_TRIALS} used for verdicts")
    ham = {r.pool: r.median_s for r in report.rows if r.backend == "simhash"}
    exact = {r.pool: r.median_s for r in report.rows if r.backend == "exact"}
    if len(pool_sizes) < 2 or pool_sizes[-1] / pool_sizes[0] < MIN_SCALE_RANGE or trials < MIN_TRIALS:
        return report
    if ham:
        report.slope = loglog_slope(list(ham), list(ham.values()))
        report.slope_ok = math.isfinite(report.slope) and report.slope <= SLOPE_LIMIT
    top = pool_sizes[-1]
    if top in ham and top in exact:
        report.largest_ok = ham[top] <= exact[top]
    return report
