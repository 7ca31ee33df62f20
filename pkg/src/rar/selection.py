"""Cross-stage selection of look-alike users and recall items."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Config
from .simhash import ProjectionMatrix, fingerprint, hamming_distances, hamming_topk, topk_desc


@dataclass
class Pool:
    ids: np.ndarray
    emb: np.ndarray

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.emb = np.asarray(self.emb, dtype=np.float64)
        if self.ids.ndim != 1 or len(self.ids) == 0:
            raise ValueError("pool must be a non-empty id list")
        if self.emb.shape[0] != len(self.ids):
            raise ValueError("pool embeddings must have one row per id")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("pool ids must be distinct")


@dataclass
class CandidateBundle:
    lookalike_ids: np.ndarray
    recall_ids: np.ndarray
    selected_user_ids: np.ndarray
    selected_item_ids: np.ndarray
    E_L_sel: np.ndarray
    E_R_sel: np.ndarray
    scores_users: np.ndarray
    scores_items: np.ndarray


def _pick(query: np.ndarray, pool: Pool, k: int, backend: str, proj: ProjectionMatrix | None,
          variant: str) -> tuple[np.ndarray, np.ndarray]:
    if backend == "exact":
        scores = pool.emb @ query
        return topk_desc(scores, k), scores
    if backend == "simhash":
        if proj is None:
            raise ValueError("simhash backend needs a projection matrix")
        q = fingerprint(query, proj, variant)
        words = fingerprint(pool.emb, proj, variant)
        scores = -hamming_distances(q, words)
        return hamming_topk(q, words, k), scores.astype(np.float64)
    raise ValueError(f"unknown backend {backend!r}")


def select(target_user_emb: np.ndarray, target_item_emb: np.ndarray, lookalike_pool: Pool,
           recall_pool: Pool, backend: str, cfg: Config,
           proj: ProjectionMatrix | None = None) -> CandidateBundle:
    """Score both pools against the target user / item and keep the top k_l / k_r.

    Users are scored against the target user only and items against the target item
    only. With ``cfg.ablation == "select"`` the first k entries of each pool are
    taken instead (scores are still reported).
    """
    k_l, k_r = cfg.k_l, cfg.k_r
    if k_l > len(lookalike_pool.ids) or k_r > len(recall_pool.ids):
        raise ValueError("k exceeds pool size")
    u_idx, s_l = _pick(np.asarray(target_user_emb, float), lookalike_pool, k_l, backend, proj,
                       cfg.hash_variant)
    i_idx, s_r = _pick(np.asarray(target_item_emb, float), recall_pool, k_r, backend, proj,
                       cfg.hash_variant)
    if cfg.ablation == "select":
        u_idx, i_idx = np.arange(k_l), np.arange(k_r)
    return CandidateBundle(
        lookalike_ids=lookalike_pool.ids,
        recall_ids=recall_pool.ids,
        selected_user_ids=lookalike_pool.ids[u_idx],
        selected_item_ids=recall_pool.ids[i_idx],
        E_L_sel=lookalike_pool.emb[u_idx],
        E_R_sel=recall_pool.emb[i_idx],
        scores_users=s_l,
        scores_items=s_r,
    )


def select_batch(target_vecs: np.ndarray, pool_ids: np.ndarray, table: np.ndarray, k: int,
                 backend: str, target_words: np.ndarray | None = None,
                 table_words: np.ndarray | None = None, truncate: bool = False) -> np.ndarray:
    """Batched one-sided selection: returns the selected ids, shape ``(B, k)``.

    ``pool_ids`` is ``(B, n)``. The simhash backend reads pre-computed packed
    fingerprints (``target_words`` ``(B, W)``, ``table_words`` ``(N, W)``). The tie
    rule matches :func:`select`: stable sort, so equal scores keep pool order.
    """
    if truncate:
        return pool_ids[:, :k]
    if backend == "exact":
        scores = np.einsum("bnd,bd->bn", table[pool_ids], target_vecs)
        order = np.argsort(-scores, axis=1, kind="stable")
    elif backend == "simhash":
        dist = np.bitwise_count(table_words[pool_ids] ^ target_words[:, None, :]).sum(axis=2)
        order = np.argsort(dist, axis=1, kind="stable")
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return np.take_along_axis(pool_ids, order[:, :k], axis=1)


def selection_recall_at_k(bundle_a: CandidateBundle, bundle_b: CandidateBundle) -> tuple[float, float]:
    """Overlap of selected ids between two bundles, as (users, items) fractions of k."""
    out = []
    for a, b in ((bundle_a.selected_user_ids, bundle_b.selected_user_ids),
                 (bundle_a.selected_item_ids, bundle_b.selected_item_ids)):
        if len(a) != len(b):
            raise ValueError("bundles were selected with different k")
        out.append(len(np.intersect1d(a, b)) / len(a))
    return out[0], out[1]
