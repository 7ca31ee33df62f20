"""Synthetic cascade data, two-tower set construction, and text-file ingestion.

On-disk layout of a dataset directory (UTF-8, LF, no quoting)::

    dataset.txt       n_users=<int> / n_items=<int>
    interactions.csv  user_id,item_id,click,split
    recall.csv        user_id,item_ids      (pipe-separated ranked list)
    lookalike.csv     user_id,user_ids      (pipe-separated ranked list)
    exposure.csv      user_id,item_id
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ExposureLog, parse_kv_file, seed_rng
from .model import Batch

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_users: int = 2000
    n_items: int = 5000
    latent_dim: int = 8
    affinity: float = 4.0
    click_bias: float = -3.0
    exposure_depth: int = 50
    interaction_frac: float = 0.3
    r: int = 50
    l: int = 20
    noise_scale: float = 2.0
    popularity: float = 0.5
    n_clusters: int = 0
    cluster_spread: float = 0.5
    noise_pools: bool = False
    shuffle_pools: bool = True
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 2 or self.n_items < 2 or self.latent_dim < 1:
            raise DataError("need n_users >= 2, n_items >= 2, latent_dim >= 1")
        if not 0 < self.r <= self.n_items:
            raise DataError(f"recall pool size r={self.r} must lie in [1, n_items={self.n_items}]")
        if not 0 < self.l <= self.n_users:
            raise DataError(f"look-alike pool size l={self.l} must lie in [1, n_users={self.n_users}]")
        if not 0 < self.exposure_depth <= self.r:
            raise DataError(f"exposure_depth={self.exposure_depth} must lie in [1, r={self.r}]")
        if not 0 < self.interaction_frac <= 1:
            raise DataError("interaction_frac must lie in (0, 1]")
        if self.noise_scale < 0:
            raise DataError("noise_scale must be non-negative")
        if self.val_frac < 0 or self.test_frac < 0 or self.val_frac + self.test_frac >= 1:
            raise DataError("split fractions must be non-negative and leave a training split")


@dataclass
class Dataset:
    n_users: int
    n_items: int
    interactions: np.ndarray          # (n, 3) int64: user, item, click
    split: np.ndarray                 # (n,) int8 index into SPLITS
    exposure: ExposureLog
    recall_sets: np.ndarray | None = None     # (n_users, r) item ids
    lookalike_sets: np.ndarray | None = None  # (n_users, l) user ids

    def __post_init__(self) -> None:
        self.interactions = np.asarray(self.interactions, dtype=np.int64).reshape(-1, 3)
        self.split = np.asarray(self.split, dtype=np.int8)
        self.validate()

    def validate(self) -> None:
        it = self.interactions
        if len(self.split) != len(it):
            raise DataError("one split tag per interaction required")
        if len(it):
            if it[:, 0].min() < 0 or it[:, 0].max() >= self.n_users:
                raise DataError("interaction references an unknown user id")
            if it[:, 1].min() < 0 or it[:, 1].max() >= self.n_items:
                raise DataError("interaction references an unknown item id")
            if not np.isin(it[:, 2], (0, 1)).all():
                raise DataError("click labels must be 0 or 1")
        if len(self.split) and (self.split.min() < 0 or self.split.max() >= len(SPLITS)):
            raise DataError("bad split tag")
        for name, sets, bound in (("recall", self.recall_sets, self.n_items),
                                  ("lookalike", self.lookalike_sets, self.n_users)):
            if sets is None:
                continue
            if sets.ndim != 2 or sets.shape[0] != self.n_users:
                raise DataError(f"{name} sets need one row per user")
            if sets.size and (sets.min() < 0 or sets.max() >= bound):
                raise DataError(f"{name} set references an unknown id")
            srt = np.sort(sets, axis=1)
            if (srt[:, 1:] == srt[:, :-1]).any():
                raise DataError(f"{name} set contains duplicates")

    @property
    def has_sets(self) -> bool:
        return self.recall_sets is not None and self.lookalike_sets is not None

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(split))

    def batch(self, idx: np.ndarray, with_pools: bool = True) -> Batch:
        rows = self.interactions[idx]
        users, items = rows[:, 0], rows[:, 1]
        la = rc = None
        if with_pools and self.has_sets:
            la, rc = self.lookalike_sets[users], self.recall_sets[users]
        return Batch(users, items, rows[:, 2].astype(np.float64), la, rc)

    def split_batch(self, split: str, with_pools: bool = True) -> Batch:
        return self.batch(self.indices(split), with_pools)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))

        return (self.n_users == other.n_users and self.n_items == other.n_items
                and np.array_equal(self.interactions, other.interactions)
                and np.array_equal(self.split, other.split) and self.exposure == other.exposure
                and same(self.recall_sets, other.recall_sets)
                and same(self.lookalike_sets, other.lookalike_sets))


def _rowwise_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k column indices per row, descending, ties by ascending column."""
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k] if k < scores.shape[1] else \
        np.tile(np.arange(scores.shape[1]), (scores.shape[0], 1))
    vals = np.take_along_axis(scores, part, axis=1)
    # exact tie rule: resolve boundary ties the slow way only where they occur
    kth = vals.min(axis=1)
    for row in np.flatnonzero((scores == kth[:, None]).sum(axis=1) > (vals == kth[:, None]).sum(axis=1)):
        above = np.flatnonzero(scores[row] > kth[row])
        tied = np.flatnonzero(scores[row] == kth[row])[: k - len(above)]
        part[row] = np.concatenate([above, tied])
        vals[row] = scores[row, part[row]]
    order = np.lexsort((part, -vals), axis=-1)
    return np.take_along_axis(part, order, axis=1)


def generate(spec: SyntheticSpec) -> Dataset:
    """Sample a cascade: latent preferences, a noisy recall stage, exposures and clicks.

    Each user's recall list is the top-r items under the latent score plus Gaussian
    noise; the first ``exposure_depth`` of them are exposed. A random
    ``interaction_frac`` share of exposures become observed interactions with click
    probability sigmoid(score + click_bias).
    Look-alike lists are the top-l users by latent cosine similarity.
    """
    spec.validate()
    rng = seed_rng(spec.seed)
    Uz, Iz = _draw_latents(rng, spec)
    scale = spec.affinity

    recall = np.empty((spec.n_users, spec.r), dtype=np.int64)
    true_scores = np.empty((spec.n_users, spec.exposure_depth))
    chunk = 256
    for s in range(0, spec.n_users, chunk):
        true = scale * (Uz[s:s + chunk] @ Iz.T)
        noisy = true + spec.noise_scale * rng.normal(size=true.shape) if spec.noise_scale else true
        recall[s:s + chunk] = _rowwise_topk(noisy, spec.r)
        exposed = recall[s:s + chunk, :spec.exposure_depth]
        true_scores[s:s + chunk] = np.take_along_axis(true, exposed, axis=1)

    users = np.repeat(np.arange(spec.n_users), spec.exposure_depth)
    items = recall[:, :spec.exposure_depth].reshape(-1)
    exposure = ExposureLog.from_pairs(np.stack([users, items], axis=1), spec.n_items)
    logits = true_scores.reshape(-1) + spec.click_bias
    if spec.interaction_frac < 1:
        # only part of the exposures are logged as interactions; the rest stay in the exposure log
        keep = np.sort(rng.permutation(len(users))[:max(1, round(spec.interaction_frac * len(users)))])
        users, items, logits = users[keep], items[keep], logits[keep]
    p_click = 1.0 / (1.0 + np.exp(-logits))
    clicks = (rng.random(len(users)) < p_click).astype(np.int64)
    u = rng.random(len(users))
    split = np.zeros(len(users), dtype=np.int8)
    split[u < spec.val_frac + spec.test_frac] = 1
    split[u < spec.test_frac] = 2

    Un = Uz / np.linalg.norm(Uz, axis=1, keepdims=True)
    lookalike = _rowwise_topk(Un @ Un.T, spec.l)

    if spec.noise_pools:
        recall = np.stack([rng.choice(spec.n_items, spec.r, replace=False) for _ in range(spec.n_users)])
        lookalike = np.stack([rng.choice(spec.n_users, spec.l, replace=False) for _ in range(spec.n_users)])
    elif spec.shuffle_pools:
        # pools arrive as unordered sets: truncating them gives an arbitrary subset
        recall = rng.permuted(recall, axis=1)
        lookalike = rng.permuted(lookalike, axis=1)

    return Dataset(spec.n_users, spec.n_items, np.stack([users, items, clicks], axis=1), split,
                   exposure, recall, lookalike)


def latent_factors(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """The ground-truth user / item latents that :func:`generate` draws first."""
    return _draw_latents(seed_rng(spec.seed), spec)


def _draw_latents(rng: np.random.Generator, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.n_clusters:
        centres = rng.normal(size=(spec.n_clusters, spec.latent_dim))
        centres /= np.linalg.norm(centres, axis=1, keepdims=True)
        jitter = spec.cluster_spread / np.sqrt(spec.latent_dim)
        Uz = centres[rng.integers(spec.n_clusters, size=spec.n_users)]
        Uz = Uz + jitter * rng.normal(size=Uz.shape)
        Iz = centres[rng.integers(spec.n_clusters, size=spec.n_items)]
        Iz = Iz + jitter * rng.normal(size=Iz.shape)
    else:
        Uz = rng.normal(size=(spec.n_users, spec.latent_dim))
        Iz = rng.normal(size=(spec.n_items, spec.latent_dim))
    Uz /= np.linalg.norm(Uz, axis=1, keepdims=True)
    Iz /= np.linalg.norm(Iz, axis=1, keepdims=True)
    if spec.popularity:
        # shared offset: user activity and item popularity become smooth in latent space
        direction = rng.normal(size=spec.latent_dim)
        direction *= spec.popularity / np.linalg.norm(direction)
        Uz += direction
        Iz += direction
    return Uz, Iz


def build_sets_twotower(interactions: np.ndarray, n_users: int, n_items: int, r: int, l: int,
                        dim: int = 16, epochs: int = 200, seed: int = 0,
                        lr: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Recall and look-alike lists from a dot-product two-tower model fit to clicks.

    ``interactions`` should be the training split only, as ``(n, 3)`` rows of
    (user, item, click). Full-batch Adam on binary cross-entropy.
    """
    interactions = np.asarray(interactions, dtype=np.int64).reshape(-1, 3)
    if len(interactions) == 0:
        raise DataError("no interactions to fit")
    if n_users < 2 or n_items < 2:
        raise DataError("two-tower sets need at least two users and two items")
    if not (0 < r <= n_items and 0 < l <= n_users):
        raise DataError("set sizes out of range")
    rng = seed_rng(seed)
    params = {
        "U": rng.normal(0.0, 0.1, size=(n_users, dim)),
        "I": rng.normal(0.0, 0.1, size=(n_items, dim)),
        "b": np.zeros(1),
    }
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    users, items = interactions[:, 0], interactions[:, 1]
    y = interactions[:, 2].astype(np.float64)
    n = len(y)
    for step in range(1, epochs + 1):
        eu, ei = params["U"][users], params["I"][items]
        logit = (eu * ei).sum(axis=1) + params["b"][0]
        g = (1.0 / (1.0 + np.exp(-logit)) - y) / n
        grads = {"U": np.zeros_like(params["U"]), "I": np.zeros_like(params["I"]), "b": np.array([g.sum()])}
        np.add.at(grads["U"], users, g[:, None] * ei)
        np.add.at(grads["I"], items, g[:, None] * eu)
        for k in params:
            m[k] = 0.9 * m[k] + 0.1 * grads[k]
            v[k] = 0.999 * v[k] + 0.001 * grads[k] ** 2
            params[k] -= lr * (m[k] / (1 - 0.9 ** step)) / (np.sqrt(v[k] / (1 - 0.999 ** step)) + 1e-8)
    U, I = params["U"], params["I"]
    recall = _rowwise_topk(U @ I.T, r)
    Un = U / np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-12)
    lookalike = _rowwise_topk(Un @ Un.T, l)
    return recall, lookalike


# files

def _check_header(path: Path, line: str, expected: str) -> None:
    if line.strip() != expected:
        raise DataError(f"{path}:1: expected header {expected!r}, got {line.strip()!r}")


def _parse_int(path: Path, lineno: int, text: str, what: str) -> int:
    text = text.strip()
    if not text.isdigit():
        raise DataError(f"{path}:{lineno}: {what} must be a non-negative integer, got {text!r}")
    return int(text)


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").split("\n")


def _read_interactions(path: Path, n_users: int, n_items: int) -> tuple[np.ndarray, np.ndarray]:
    lines = _read_lines(path)
    _check_header(path, lines[0], "user_id,item_id,click,split")
    rows, split = [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        u = _parse_int(path, lineno, fields[0], "user_id")
        i = _parse_int(path, lineno, fields[1], "item_id")
        c = _parse_int(path, lineno, fields[2], "click")
        if c not in (0, 1):
            raise DataError(f"{path}:{lineno}: click must be 0 or 1, got {c}")
        if u >= n_users:
            raise DataError(f"{path}:{lineno}: unknown user id {u}")
        if i >= n_items:
            raise DataError(f"{path}:{lineno}: unknown item id {i}")
        tag = fields[3].strip()
        if tag not in SPLITS:
            raise DataError(f"{path}:{lineno}: split must be one of {SPLITS}, got {tag!r}")
        rows.append((u, i, c))
        split.append(SPLITS.index(tag))
    return np.array(rows, dtype=np.int64).reshape(-1, 3), np.array(split, dtype=np.int8)


def _read_sets(path: Path, header: str, n_users: int, bound: int, what: str) -> np.ndarray:
    lines = _read_lines(path)
    _check_header(path, lines[0], header)
    rows: dict[int, list[int]] = {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        u = _parse_int(path, lineno, fields[0], "user_id")
        if u >= n_users:
            raise DataError(f"{path}:{lineno}: unknown user id {u}")
        if u in rows:
            raise DataError(f"{path}:{lineno}: duplicate row for user {u}")
        ids = [_parse_int(path, lineno, x, what) for x in fields[1].split("|")]
        if any(x >= bound for x in ids):
            raise DataError(f"{path}:{lineno}: unknown {what} in list")
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}:{lineno}: duplicate ids in list")
        if rows and len(ids) != len(next(iter(rows.values()))):
            raise DataError(f"{path}:{lineno}: all lists must have the same length")
        rows[u] = ids
    missing = set(range(n_users)) - set(rows)
    if missing:
        raise DataError(f"{path}: no list for user(s) {sorted(missing)[:5]}")
    return np.array([rows[u] for u in range(n_users)], dtype=np.int64)


def _read_exposure(path: Path, n_users: int, n_items: int) -> ExposureLog:
    lines = _read_lines(path)
    _check_header(path, lines[0], "user_id,item_id")
    pairs = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        u = _parse_int(path, lineno, fields[0], "user_id")
        i = _parse_int(path, lineno, fields[1], "item_id")
        if u >= n_users or i >= n_items:
            raise DataError(f"{path}:{lineno}: unknown id in exposure pair ({u}, {i})")
        pairs.append((u, i))
    return ExposureLog.from_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2), n_items)


def load(path: str | Path) -> Dataset:
    """Read a dataset directory; set files and the exposure file are optional."""
    root = Path(path)
    meta_path = root / "dataset.txt"
    if not meta_path.exists():
        raise DataError(f"{meta_path} not found")
    meta = parse_kv_file(meta_path)
    try:
        n_users, n_items = int(meta["n_users"]), int(meta["n_items"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{meta_path}: need integer n_users and n_items") from exc
    interactions, split = _read_interactions(root / "interactions.csv", n_users, n_items)
    exposure_path = root / "exposure.csv"
    exposure = _read_exposure(exposure_path, n_users, n_items) if exposure_path.exists() else \
        ExposureLog(n_items)
    recall = lookalike = None
    if (root / "recall.csv").exists():
        recall = _read_sets(root / "recall.csv", "user_id,item_ids", n_users, n_items, "item_id")
    if (root / "lookalike.csv").exists():
        lookalike = _read_sets(root / "lookalike.csv", "user_id,user_ids", n_users, n_users, "user_id")
    return Dataset(n_users, n_items, interactions, split, exposure, recall, lookalike)


def _write(path: Path, header: str, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def save(ds: Dataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "dataset.txt").write_text(f"n_users={ds.n_users}\nn_items={ds.n_items}\n", encoding="utf-8")
    _write(root / "interactions.csv", "user_id,item_id,click,split",
           (f"{u},{i},{c},{SPLITS[s]}" for (u, i, c), s in zip(ds.interactions.tolist(), ds.split.tolist())))
    _write(root / "exposure.csv", "user_id,item_id", (f"{u},{i}" for u, i in ds.exposure.pairs().tolist()))
    for name, header, sets in (("recall.csv", "user_id,item_ids", ds.recall_sets),
                               ("lookalike.csv", "user_id,user_ids", ds.lookalike_sets)):
        if sets is None:
            continue
        _write(root / name, header, (f"{u}," + "|".join(map(str, row)) for u, row in enumerate(sets.tolist())))
