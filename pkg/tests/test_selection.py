import numpy as np
import pytest

from rar.core import Config, seed_rng
from rar.selection import Pool, select, select_batch, selection_recall_at_k
from rar.simhash import ProjectionMatrix, fingerprint

CFG = Config(d1=4, k_l=2, k_r=3, l=20, r=50)


def pools(rng, n_users=10, n_items=12, d=4):
    U = rng.normal(size=(n_users, d))
    I = rng.normal(size=(n_items, d))
    return Pool(np.arange(100, 100 + n_users), U), Pool(np.arange(500, 500 + n_items), I)


@pytest.mark.parametrize("backend", ["exact", "simhash"])
def test_single_user_pool_forced(backend, rng):
    users = Pool([7], rng.normal(size=(1, 4)))
    _, items = pools(rng)
    cfg = CFG.replace(k_l=1)
    b = select(rng.normal(size=4), rng.normal(size=4), users, items, backend, cfg,
               ProjectionMatrix(4, 64, seed_rng(0)))
    assert b.selected_user_ids.tolist() == [7]


def test_target_item_ranks_first_exact(rng):
    users, items = pools(rng)
    items.emb /= np.linalg.norm(items.emb, axis=1, keepdims=True)
    b = select(users.emb[0], items.emb[5], users, items, "exact", CFG)
    assert b.selected_item_ids[0] == 505


def test_exact_matches_argsort_oracle(rng):
    U = rng.normal(size=(200, 8))
    users = Pool(np.arange(200), U)
    _, items = pools(rng, d=8)
    q = rng.normal(size=8)
    b = select(q, rng.normal(size=8), users, items, "exact", CFG.replace(d1=8, k_l=8))
    dots = [float(u @ q) for u in U]
    oracle = sorted(range(200), key=lambda j: (-dots[j], j))[:8]
    assert b.selected_user_ids.tolist() == oracle
    assert np.array_equal(b.E_L_sel, U[oracle])
    assert np.allclose(b.scores_users, U @ q)


def test_bundle_invariants(rng):
    users, items = pools(rng)
    proj = ProjectionMatrix(4, 64, seed_rng(0))
    b = select(rng.normal(size=4), rng.normal(size=4), users, items, "simhash", CFG, proj)
    assert set(b.selected_user_ids) <= set(users.ids)
    assert len(set(b.selected_item_ids)) == CFG.k_r
    for j, uid in enumerate(b.selected_user_ids):
        assert np.array_equal(b.E_L_sel[j], users.emb[uid - 100])
    assert len(b.scores_users) == len(users.ids) and len(b.scores_items) == len(items.ids)


def test_simhash_scores_are_negated_hamming(rng):
    users, items = pools(rng)
    proj = ProjectionMatrix(4, 64, seed_rng(0))
    q = rng.normal(size=4)
    b = select(q, rng.normal(size=4), users, items, "simhash", CFG, proj)
    qw = fingerprint(q, proj)
    expect = [-bin(int(qw[0]) ^ int(w[0])).count("1") for w in fingerprint(users.emb, proj)]
    assert b.scores_users.tolist() == expect


def test_select_ablation_truncates(rng):
    users, items = pools(rng)
    b = select(rng.normal(size=4), rng.normal(size=4), users, items, "exact", CFG.replace(ablation="select"))
    assert b.selected_user_ids.tolist() == [100, 101]
    assert b.selected_item_ids.tolist() == [500, 501, 502]


def test_pure_function(rng):
    users, items = pools(rng)
    proj = ProjectionMatrix(4, 64, seed_rng(0))
    q_u, q_i = rng.normal(size=4), rng.normal(size=4)
    a = select(q_u, q_i, users, items, "simhash", CFG, proj)
    b = select(q_u, q_i, users, items, "simhash", CFG, proj)
    assert np.array_equal(a.selected_user_ids, b.selected_user_ids)
    assert np.array_equal(a.E_R_sel, b.E_R_sel)


def test_channels_independent(rng):
    users, items = pools(rng)
    q_u = rng.normal(size=4)
    a = select(q_u, rng.normal(size=4), users, items, "exact", CFG)
    items2 = Pool(items.ids, rng.normal(size=items.emb.shape))
    b = select(q_u, rng.normal(size=4), users, items2, "exact", CFG)
    assert np.array_equal(a.selected_user_ids, b.selected_user_ids)


def test_errors(rng):
    users, items = pools(rng, n_users=1)
    with pytest.raises(ValueError):
        select(rng.normal(size=4), rng.normal(size=4), users, items, "exact", CFG)  # k_l=2 > 1
    with pytest.raises(ValueError):
        Pool([], np.zeros((0, 4)))
    with pytest.raises(ValueError):
        Pool([1, 1], np.zeros((2, 4)))
    users, items = pools(rng)
    with pytest.raises(ValueError):
        select(rng.normal(size=4), rng.normal(size=4), users, items, "simhash", CFG, None)


@pytest.mark.parametrize("backend", ["exact", "simhash"])
def test_batch_agrees_with_single(backend, rng):
    U, I = rng.normal(size=(30, 4)), rng.normal(size=(40, 4))
    proj = ProjectionMatrix(4, 64, seed_rng(0))
    la = np.stack([rng.choice(30, 10, replace=False) for _ in range(5)])
    targets = rng.integers(0, 30, size=5)
    uw = fingerprint(U, proj)
    got = select_batch(U[targets], la, U, 4, backend, uw[targets], uw)
    for b in range(5):
        bundle = select(U[targets[b]], I[0], Pool(la[b], U[la[b]]), Pool(np.arange(40), I), backend,
                        CFG.replace(k_l=4), proj)
        assert got[b].tolist() == bundle.selected_user_ids.tolist()


def test_recall_at_k(rng):
    users, items = pools(rng)
    proj = ProjectionMatrix(4, 64, seed_rng(0))
    a = select(users.emb[0], items.emb[0], users, items, "exact", CFG)
    assert selection_recall_at_k(a, a) == (1.0, 1.0)
    b = select(users.emb[0], items.emb[0], users, items, "simhash", CFG, proj)
    fu, fi = selection_recall_at_k(a, b)
    assert 0.0 <= fu <= 1.0 and 0.0 <= fi <= 1.0
    c = select(users.emb[0], items.emb[0], users, items, "exact", CFG.replace(ablation="select"))
    d = select(-users.emb[0], -items.emb[0], Pool(users.ids[::-1], users.emb[::-1]),
               Pool(items.ids[::-1], items.emb[::-1]), "exact", CFG.replace(ablation="select"))
    assert selection_recall_at_k(c, d) == (0.0, 0.0)
    with pytest.raises(ValueError):
        selection_recall_at_k(a, select(users.emb[0], items.emb[0], users, items, "exact",
                                        CFG.replace(k_l=3)))


def test_fidelity_monotone_in_bits():
    means = {}
    for m_bits in (16, 256):
        vals = []
        for seed in range(20):
            rng = seed_rng(seed)
            U = rng.normal(size=(1000, 16))
            U /= np.linalg.norm(U, axis=1, keepdims=True)
            users = Pool(np.arange(1000), U)
            items = Pool(np.arange(1000), U)
            cfg = Config(d1=16, k_l=10, k_r=10, l=1000, r=1000)
            q = rng.normal(size=16)
            proj = ProjectionMatrix(16, m_bits, rng)
            ex = select(q, q, users, items, "exact", cfg)
            sh = select(q, q, users, items, "simhash", cfg, proj)
            vals.append(selection_recall_at_k(sh, ex)[0])
        means[m_bits] = np.mean(vals)
    assert means[256] >= means[16]
