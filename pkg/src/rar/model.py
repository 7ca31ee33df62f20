"""CTR heads, the RAR plug, the joint objective and checkpoints."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cointeract as ci
from .core import Config, ExposureLog, init_embedding, seed_rng
from .selection import select_batch
from .simhash import FingerprintCache, ProjectionMatrix

CHECKPOINT_FORMAT = "rar-checkpoint"
CHECKPOINT_VERSION = 1


def init_head(variant: str, d_in: int, hidden: tuple[int, ...], rng: np.random.Generator) -> ci.Layers:
    if variant == "logistic":
        return [(rng.normal(0.0, 0.01, size=(d_in, 1)), np.zeros(1))]
    if variant == "mlp":
        layers = ci.init_tower(d_in, hidden, 1, rng)
        W, b = layers[-1]
        layers[-1] = (W * 0.1, b)
        return layers
    raise ValueError(f"unknown head variant {variant!r}")


def head_logit(x: np.ndarray, layers: ci.Layers) -> tuple[np.ndarray, list]:
    out, cache = ci.mlp_forward(x, layers)
    return out[..., 0], cache


def predict(user_emb, item_emb, v_enr_or_none, head: ci.Layers) -> float:
    """Click probability for one (user, item) pair, optionally RAR-augmented."""
    parts = [np.asarray(user_emb, float), np.asarray(item_emb, float)]
    if v_enr_or_none is not None:
        parts.append(np.asarray(v_enr_or_none, float))
    x = np.concatenate(parts)
    if x.shape[0] != head[0][0].shape[0]:
        raise ValueError(f"head expects width {head[0][0].shape[0]}, got {x.shape[0]}")
    logit, _ = head_logit(x[None], head)
    return float(ci.sigmoid(logit)[0])


def click_loss(p, y) -> float | np.ndarray:
    p = np.clip(np.asarray(p, float), ci.PROB_CLAMP, 1.0 - ci.PROB_CLAMP)
    y = np.asarray(y, float)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def joint_loss(p_click, y_click, M_M, y_exposure, alpha: float, ablation: str = "full") -> float:
    """``alpha * L_clk + (1 - alpha) * L_ep``; the exposure term is dropped for
    the ``aux_wght`` and ``raw`` variants."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    l_clk = click_loss(p_click, y_click)
    if ablation in ("aux_wght", "raw") or M_M is None:
        return float(l_clk)
    return float(alpha * l_clk + (1.0 - alpha) * ci.exposure_loss(M_M, y_exposure))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class Batch:
    users: np.ndarray
    items: np.ndarray
    clicks: np.ndarray
    lookalike: np.ndarray | None = None
    recall: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class TrainRecord:
    user: int
    item: int
    click: int
    lookalike_pool: np.ndarray | None = None
    recall_pool: np.ndarray | None = None

    def as_batch(self) -> Batch:
        la = None if self.lookalike_pool is None else np.asarray(self.lookalike_pool)[None]
        rc = None if self.recall_pool is None else np.asarray(self.recall_pool)[None]
        return Batch(np.array([self.user]), np.array([self.item]), np.array([float(self.click)]), la, rc)


@dataclass
class ForwardResult:
    batch: Batch
    logits: np.ndarray
    p: np.ndarray
    loss: np.ndarray
    head_cache: list
    x: np.ndarray
    sel_users: np.ndarray | None = None
    sel_items: np.ndarray | None = None
    state: ci.CoInteractionState | None = None
    labels: np.ndarray | None = None
    weight_clk: float = 1.0
    weight_ep: float = 0.0
    expose_M: bool = True

    @property
    def M(self) -> np.ndarray | None:
        """Matching matrices, or None when the variant has no matching supervision."""
        if self.state is None or not self.expose_M:
            return None
        return self.state.M

    @property
    def mean_loss(self) -> float:
        return float(self.loss.mean())


class RARModel:
    """Embedding tables, Co-Interaction towers and a CTR head behind one parameter dict.

    ``params`` maps names to float64 arrays: ``user_emb``, ``item_emb``,
    ``tower_u.W{n}``/``tower_u.b{n}``, ``tower_i.*`` (absent when towers are
    shared) and ``head.*``. The raw variant has no tower entries.
    """

    def __init__(self, cfg: Config, n_users: int, n_items: int, exposure: ExposureLog | None = None):
        self.cfg = cfg
        self.n_users = n_users
        self.n_items = n_items
        self.exposure = exposure
        rng_init, rng_proj, _ = seed_rng(cfg.seed).spawn(3)
        d = cfg.d1
        self.params: dict[str, np.ndarray] = {
            "user_emb": init_embedding(n_users, d, cfg.init_scale, rng_init, "user").values,
            "item_emb": init_embedding(n_items, d, cfg.init_scale, rng_init, "item").values,
        }
        if self.augmented:
            for name, layers in self._init_towers(rng_init).items():
                for n, (W, b) in enumerate(layers):
                    self.params[f"{name}.W{n}"] = W
                    self.params[f"{name}.b{n}"] = b
        d_in = 4 * d if self.augmented else 2 * d
        for n, (W, b) in enumerate(init_head(cfg.head, d_in, cfg.head_hidden, rng_init)):
            self.params[f"head.W{n}"] = W
            self.params[f"head.b{n}"] = b
        self.proj = ProjectionMatrix(cfg.d2, cfg.m_bits, rng_proj)
        self._fp_users = FingerprintCache(self.proj, cfg.hash_variant)
        self._fp_items = FingerprintCache(self.proj, cfg.hash_variant)
        self.version = 0

    def _init_towers(self, rng) -> dict:
        d = self.cfg.d1
        towers = {"tower_u": ci.init_tower(d, self.cfg.mlp_hidden, d, rng)}
        if not self.cfg.share_towers:
            towers["tower_i"] = ci.init_tower(d, self.cfg.mlp_hidden, d, rng)
        return towers

    @property
    def augmented(self) -> bool:
        return self.cfg.ablation != "raw"

    def _layers(self, prefix: str) -> ci.Layers:
        layers, n = [], 0
        while f"{prefix}.W{n}" in self.params:
            layers.append((self.params[f"{prefix}.W{n}"], self.params[f"{prefix}.b{n}"]))
            n += 1
        return layers

    def coint_params(self) -> ci.CoInteractionParams:
        user = self._layers("tower_u")
        item = user if self.cfg.share_towers else self._layers("tower_i")
        return ci.CoInteractionParams(user, item)

    def head_layers(self) -> ci.Layers:
        return self._layers("head")

    def bump_version(self) -> None:
        """Mark the embedding tables as changed so fingerprints get recomputed."""
        self.version += 1

    def user_fingerprints(self) -> np.ndarray:
        return self._fp_users.get(self.params["user_emb"], self.version)

    def item_fingerprints(self) -> np.ndarray:
        return self._fp_items.get(self.params["item_emb"], self.version)

    def select(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        """Selected look-alike users ``(B, k_l)`` and recall items ``(B, k_r)``."""
        cfg = self.cfg
        if batch.lookalike is None or batch.recall is None:
            raise ValueError("RAR variants need look-alike and recall pools")
        if batch.lookalike.shape[1] < cfg.k_l or batch.recall.shape[1] < cfg.k_r:
            raise ValueError("k exceeds pool size")
        truncate = cfg.ablation == "select"
        U, I = self.params["user_emb"], self.params["item_emb"]
        uw = iw = None
        if cfg.backend == "simhash" and not truncate:
            uw, iw = self.user_fingerprints(), self.item_fingerprints()
        if cfg.ablation == "user":
            sel_users = batch.users[:, None]
        else:
            sel_users = select_batch(U[batch.users], batch.lookalike, U, cfg.k_l, cfg.backend,
                                     None if uw is None else uw[batch.users], uw, truncate)
        sel_items = select_batch(I[batch.items], batch.recall, I, cfg.k_r, cfg.backend,
                                 None if iw is None else iw[batch.items], iw, truncate)
        return sel_users, sel_items

    def forward(self, batch: Batch, selection: tuple[np.ndarray, np.ndarray] | None = None,
                need_loss: bool = True) -> ForwardResult:
        cfg = self.cfg
        U, I = self.params["user_emb"], self.params["item_emb"]
        eu, ei = U[batch.users], I[batch.items]
        parts = [eu, ei]
        state = sel_users = sel_items = labels = None
        w_clk, w_ep = 1.0, 0.0
        if self.augmented:
            sel_users, sel_items = selection if selection is not None else self.select(batch)
            uniform = cfg.ablation in ("aux_wght", "wght")
            state = ci.forward_batch(U[sel_users], I[sel_items], self.coint_params(), uniform)
            parts.append(state.v_enr)
            if cfg.ablation != "aux_wght":
                w_clk, w_ep = cfg.alpha, 1.0 - cfg.alpha
        x = np.concatenate(parts, axis=1)
        logits, head_cache = head_logit(x, self.head_layers())
        p = ci.sigmoid(logits)
        loss = np.zeros(len(batch))
        if need_loss:
            y = np.asarray(batch.clicks, float)
            loss = w_clk * (_softplus(logits) - y * logits)
            if w_ep > 0.0:
                if self.exposure is None:
                    raise ValueError("exposure supervision needs an exposure log")
                labels = ci.build_exposure_labels(sel_users, sel_items, self.exposure, cfg.exposure_mode)
                loss = loss + w_ep * ci.exposure_loss(state.M, labels)
        return ForwardResult(batch, logits, p, loss, head_cache, x, sel_users, sel_items, state, labels,
                             w_clk, w_ep, expose_M=cfg.ablation != "aux_wght")

    def backward(self, res: ForwardResult) -> dict[str, np.ndarray]:
        """Gradient of ``res.mean_loss`` for every entry of ``params``."""
        cfg = self.cfg
        d = cfg.d1
        B = len(res.batch)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g_logit = res.weight_clk * (res.p - np.asarray(res.batch.clicks, float)) / B
        g_x, head_grads = ci.mlp_backward(g_logit[:, None], self.head_layers(), res.head_cache)
        for n, (gW, gb) in enumerate(head_grads):
            grads[f"head.W{n}"] = gW
            grads[f"head.b{n}"] = gb
        np.add.at(grads["user_emb"], res.batch.users, g_x[:, :d])
        np.add.at(grads["item_emb"], res.batch.items, g_x[:, d:2 * d])
        if res.state is not None:
            g_M = None
            if res.weight_ep > 0.0:
                g_M = res.weight_ep / B * ci.exposure_loss_grad(res.state.M, res.labels)
            cg = ci.backward_batch(res.state, self.coint_params(), g_x[:, 2 * d:], g_M)
            np.add.at(grads["user_emb"], res.sel_users, cg["XL"])
            np.add.at(grads["item_emb"], res.sel_items, cg["XR"])
            for prefix, layer_grads in (("tower_u", cg["user_layers"]), ("tower_i", cg["item_layers"])):
                if layer_grads is None:
                    continue
                for n, (gW, gb) in enumerate(layer_grads):
                    grads[f"{prefix}.W{n}"] = gW
                    grads[f"{prefix}.b{n}"] = gb
        return grads

    def loss_and_grad(self, batch: Batch, selection=None) -> tuple[float, dict[str, np.ndarray]]:
        res = self.forward(batch, selection)
        return res.mean_loss, self.backward(res)

    def forward_example(self, record: TrainRecord) -> tuple[float, np.ndarray | None, ForwardResult]:
        """Run one record; returns (p_click, matching matrix or None, full result)."""
        res = self.forward(record.as_batch())
        M = res.M
        return float(res.p[0]), None if M is None else M[0], res

    def predict_batch(self, batch: Batch, chunk: int = 4096) -> np.ndarray:
        out = []
        for s in range(0, len(batch), chunk):
            sub = Batch(batch.users[s:s + chunk], batch.items[s:s + chunk], batch.clicks[s:s + chunk],
                        None if batch.lookalike is None else batch.lookalike[s:s + chunk],
                        None if batch.recall is None else batch.recall[s:s + chunk])
            out.append(self.forward(sub, need_loss=False).p)
        return np.concatenate(out) if out else np.zeros(0)

    # checkpoints

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "n_users": self.n_users,
            "n_items": self.n_items,
            "ablation": self.cfg.ablation,
            **(extra_meta or {}),
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["projection"] = self.proj.P
        if self.exposure is not None:
            arrays["exposure"] = self.exposure.keys
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> tuple["RARModel", dict]:
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path} is not a RAR checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            cfg = Config.from_dict(meta["config"])
            exposure = ExposureLog(meta["n_items"], z["exposure"]) if "exposure" in z.files else None
            model = cls(cfg, meta["n_users"], meta["n_items"], exposure)
            for key in list(model.params):
                model.params[key] = np.array(z[f"param/{key}"])
            if not np.array_equal(model.proj.P, z["projection"]):
                raise ValueError("projection matrix does not match the checkpoint seed")
        return model, meta
