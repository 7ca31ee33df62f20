"""Shared types: run configuration, seeded RNG, embedding tables, exposure log."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

WORD_BITS = 64

ABLATIONS = ("full", "user", "select", "aux_wght", "wght", "raw")
HASH_VARIANTS = ("standard", "literal")
BACKENDS = ("simhash", "exact")
HEADS = ("logistic", "mlp")
EXPOSURE_MODES = ("entrywise", "aggregate")
OPTIMIZERS = ("adam", "sgd")


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass
class Config:
    d1: int = 16
    d2: int | None = None
    m_bits: int = 64
    k_l: int = 5
    k_r: int = 10
    l: int = 20
    r: int = 50
    alpha: float = 0.5
    mlp_hidden: tuple[int, ...] = (16,)
    lr: float = 2e-3
    epochs: int = 3
    batch_size: int = 256
    seed: int = 0
    ablation: str = "full"
    hash_variant: str = "standard"
    backend: str = "simhash"
    head: str = "mlp"
    head_hidden: tuple[int, ...] = (64, 32)
    exposure_mode: str = "entrywise"
    share_towers: bool = False
    init_scale: float = 0.1
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.d2 is None:
            self.d2 = self.d1
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        self.head_hidden = tuple(int(h) for h in self.head_hidden)
        self.validate()

    def validate(self) -> None:
        if self.d1 <= 0 or self.d2 <= 0:
            raise ConfigError("d1 and d2 must be positive")
        if self.d2 != self.d1:
            raise ConfigError("d2 must equal d1: fingerprints hash the stored embeddings")
        if self.m_bits <= 0 or self.m_bits % WORD_BITS:
            raise ConfigError(f"m_bits must be a positive multiple of {WORD_BITS}")
        if not 0 < self.k_l <= self.l:
            raise ConfigError("need 0 < k_l <= l")
        if not 0 < self.k_r <= self.r:
            raise ConfigError("need 0 < k_r <= r")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if any(h <= 0 for h in self.mlp_hidden + self.head_hidden):
            raise ConfigError("hidden widths must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        for name, allowed in (
            ("ablation", ABLATIONS),
            ("hash_variant", HASH_VARIANTS),
            ("backend", BACKENDS),
            ("head", HEADS),
            ("exposure_mode", EXPOSURE_MODES),
            ("optimizer", OPTIMIZERS),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def replace(self, **changes) -> "Config":
        if "d1" in changes and "d2" not in changes and self.d2 == self.d1:
            changes["d2"] = changes["d1"]  # d2 follows d1 unless set explicitly
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, values: dict) -> "Config":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "Config":
        return cls.from_dict({**parse_kv_file(path), **overrides})


_INT_KEYS = {"d1", "d2", "m_bits", "k_l", "k_r", "l", "r", "epochs", "batch_size", "seed"}
_FLOAT_KEYS = {"alpha", "lr", "init_scale"}
_TUPLE_KEYS = {"mlp_hidden", "head_hidden"}
_BOOL_KEYS = {"share_towers"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return None if key == "d2" and raw in ("", "None") else int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _TUPLE_KEYS:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Read a flat ``key=value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass
class EmbeddingTable:
    kind: str
    values: np.ndarray
    trainable: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("user", "item"):
            raise ValueError(f"kind must be 'user' or 'item', got {self.kind!r}")
        if self.values.ndim != 2:
            raise ValueError("embedding values must be a 2-D matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding values must be finite")

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def lookup(self, ids) -> np.ndarray:
        """Rows for ``ids`` as a copy, so callers cannot alias-mutate the table."""
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            raise IndexError(f"{self.kind} id out of range [0, {self.count})")
        return self.values[ids]


def init_embedding(count: int, dim: int, scale: float, rng: np.random.Generator,
                   kind: str = "user") -> EmbeddingTable:
    if count <= 0 or dim <= 0:
        raise ValueError("count and dim must be positive")
    if not scale > 0:
        raise ValueError("scale must be positive")
    values = rng.uniform(-scale, scale, size=(count, dim))
    return EmbeddingTable(kind, values)


@dataclass
class ExposureLog:
    """Exact set of (user, item) exposure pairs, stored as sorted encoded keys."""

    n_items: int
    keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        self.keys = np.unique(np.asarray(self.keys, dtype=np.int64))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]] | np.ndarray, n_items: int) -> "ExposureLog":
        arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
        if arr.size == 0:
            return cls(n_items)
        arr = arr.reshape(-1, 2)
        if arr.min() < 0 or arr[:, 1].max() >= n_items:
            raise ValueError("exposure pair out of range")
        return cls(n_items, arr[:, 0] * n_items + arr[:, 1])

    def pairs(self) -> np.ndarray:
        return np.stack([self.keys // self.n_items, self.keys % self.n_items], axis=1)

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, pair) -> bool:
        user, item = pair
        return bool(self.contains(np.asarray(user), np.asarray(item)))

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorised membership test; ``users`` and ``items`` broadcast together."""
        query = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        if len(self.keys) == 0:
            return np.zeros(query.shape, dtype=bool)
        pos = np.searchsorted(self.keys, query)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == query

    def __eq__(self, other) -> bool:
        return (isinstance(other, ExposureLog) and self.n_items == other.n_items
                and np.array_equal(self.keys, other.keys))
