"""Random-hyperplane fingerprints and hamming top-k selection.

Fingerprints are packed LSB-first into little-endian ``uint64`` words: bit ``m``
lives in word ``m // 64`` at position ``m % 64``. Widths that are not a whole
number of words are zero-padded, which leaves hamming distances unchanged.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import WORD_BITS

MAGIC = b"RARFP1\0\0"
_HEADER = struct.Struct("<8sII")


class ProjectionMatrix:
    """Immutable ``d2 x m_bits`` standard-normal projection."""

    def __init__(self, d2: int, m_bits: int, rng: np.random.Generator):
        if d2 <= 0 or m_bits <= 0:
            raise ValueError("need d2 > 0 and m_bits > 0")
        P = rng.standard_normal((d2, m_bits))
        P.setflags(write=False)
        self._P = P

    @property
    def P(self) -> np.ndarray:
        return self._P

    @property
    def d2(self) -> int:
        return self._P.shape[0]

    @property
    def m_bits(self) -> int:
        return self._P.shape[1]


def n_words(m_bits: int) -> int:
    return -(-m_bits // WORD_BITS)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean ``(..., m_bits)`` array into ``(..., ceil(m_bits / 64))`` uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    m = bits.shape[-1]
    pad = n_words(m) * WORD_BITS - m
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), dtype=bool)], axis=-1)
    as_bytes = np.ascontiguousarray(np.packbits(bits, axis=-1, bitorder="little"))
    return as_bytes.view("<u8").reshape(bits.shape[:-1] + (n_words(m),)).astype(np.uint64)


def unpack_bits(words: np.ndarray, m_bits: int | None = None) -> np.ndarray:
    words = np.ascontiguousarray(words, dtype="<u8")
    bits = np.unpackbits(words.view(np.uint8), axis=-1, bitorder="little").astype(bool)
    return bits if m_bits is None else bits[..., :m_bits]


def fingerprint(e: np.ndarray, proj: ProjectionMatrix, variant: str = "standard") -> np.ndarray:
    """Fingerprint one embedding (1-D) or a batch of rows (2-D) into packed words.

    ``standard`` sets bit m when the projection sum(e[n] * P[n, m]) is positive;
    ``literal`` sets it when sum(sgn(e[n] * P[n, m])) is positive. Zero maps to 0.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != proj.d2:
        raise ValueError(f"embedding width {e.shape[-1]} != projection width {proj.d2}")
    if not np.all(np.isfinite(e)):
        raise ValueError("embedding must be finite")
    # Bits are invariant to positive rescaling, so normalizing first changes nothing
    # except guarding the projection against overflow on huge inputs.
    norms = np.linalg.norm(e, axis=-1, keepdims=True)
    e = e / np.where(norms > 0, norms, 1.0)
    if variant == "standard":
        bits = e @ proj.P > 0
    elif variant == "literal":
        bits = np.sign(e[..., :, None] * proj.P).sum(axis=-2) > 0
    else:
        raise ValueError(f"unknown hash variant {variant!r}")
    return pack_bits(bits)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"fingerprint width mismatch: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_distances(query: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Distances from packed ``query`` (W,) to every row of packed ``pool`` (n, W)."""
    query = np.asarray(query, dtype=np.uint64)
    pool = np.asarray(pool, dtype=np.uint64)
    if pool.ndim != 2 or pool.shape[1] != query.shape[-1]:
        raise ValueError("fingerprint width mismatch between query and pool")
    if pool.shape[1] == 1:
        return np.bitwise_count(pool[:, 0] ^ query[0]).astype(np.int64)
    return np.bitwise_count(pool ^ query).sum(axis=1, dtype=np.int64)


def _check_k(n: int, k: int) -> None:
    if n == 0:
        raise ValueError("pool is empty")
    if not 0 < k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")


def hamming_topk(query: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest fingerprints, by distance then original index."""
    pool = np.asarray(pool, dtype=np.uint64)
    if pool.ndim == 1:
        pool = pool[:, None]
    n = pool.shape[0]
    _check_k(n, k)
    # distance < 2**31 and n < 2**32 keep the composite key unique and in int64 range
    key = hamming_distances(query, pool) << 32
    key |= np.arange(n, dtype=np.int64)
    if k < n:
        cand = np.argpartition(key, k - 1)[:k]
        return cand[np.argsort(key[cand])]
    return np.argsort(key)


def topk_desc(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    _check_k(n, k)
    if k < n:
        part = np.argpartition(-scores, k - 1)[:k]
        kth = scores[part].min()
        above = np.flatnonzero(scores > kth)
        tied = np.flatnonzero(scores == kth)[: k - len(above)]
        cand = np.concatenate([above, tied])
    else:
        cand = np.arange(n)
    return cand[np.lexsort((cand, -scores[cand]))]


def exact_topk(query: np.ndarray, pool_matrix: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest inner products with ``query``."""
    pool_matrix = np.asarray(pool_matrix, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if pool_matrix.ndim != 2 or pool_matrix.shape[1] != query.shape[0]:
        raise ValueError("query and pool dimensions disagree")
    return topk_desc(pool_matrix @ query, k)


class FingerprintCache:
    """Fingerprints of a whole table, recomputed only when the table version changes."""

    def __init__(self, proj: ProjectionMatrix, variant: str = "standard"):
        self.proj = proj
        self.variant = variant
        self._version = None
        self._words = None

    def get(self, values: np.ndarray, version) -> np.ndarray:
        if self._words is None or version != self._version:
            self._words = fingerprint(values, self.proj, self.variant)
            self._version = version
        return self._words


def save_fingerprints(path: str | Path, words: np.ndarray, m_bits: int) -> None:
    words = np.asarray(words, dtype=np.uint64)
    if words.ndim != 2 or m_bits <= 0 or words.shape[1] != n_words(m_bits):
        raise ValueError("word array does not match m_bits")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, words.shape[0], m_bits))
        fh.write(words.astype("<u8").tobytes())


def load_fingerprints(path: str | Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated fingerprint file")
    magic, count, m_bits = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a fingerprint pool file")
    if m_bits == 0:
        raise ValueError("bad m_bits 0 in header")
    width = n_words(m_bits)
    body = data[_HEADER.size:]
    if len(body) != count * width * 8:
        raise ValueError("fingerprint file length disagrees with header")
    words = np.frombuffer(body, dtype="<u8").reshape(count, width).astype(np.uint64)
    return words, m_bits
