"""Mini-batch joint training, optimizers and finite-difference gradient checking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import Config, ConfigError, seed_rng
from .cointeract import PROB_CLAMP
from .data import Dataset
from .metrics import auc, gauc, safe
from .model import Batch, RARModel

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,train_loss,val_auc,val_gauc"


class TrainingDiverged(RuntimeError):
    pass


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.step_count = 0

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k in params:  # fixed key order keeps updates reproducible
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: Config, params: dict):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr)
    return Adam(cfg.lr, params)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_auc: float
    val_gauc: float

    def line(self) -> str:
        return f"{self.epoch},{self.train_loss!r},{self.val_auc!r},{self.val_gauc!r}"


@dataclass
class TrainResult:
    model: RARModel
    history: list[EpochMetrics] = field(default_factory=list)


def check_compatible(ds: Dataset, cfg: Config) -> None:
    if cfg.ablation == "raw":
        return
    if not ds.has_sets:
        raise ConfigError("RAR variants need recall and look-alike sets in the dataset")
    if ds.lookalike_sets.shape[1] != cfg.l or ds.recall_sets.shape[1] != cfg.r:
        raise ConfigError(f"config pool sizes l={cfg.l}, r={cfg.r} do not match dataset "
                          f"l={ds.lookalike_sets.shape[1]}, r={ds.recall_sets.shape[1]}")


def evaluate(model: RARModel, ds: Dataset, split: str) -> tuple[float, float]:
    """(AUC, gAUC) on a split; NaN where the metric is undefined."""
    batch = ds.split_batch(split, with_pools=model.augmented)
    if len(batch) == 0:
        return float("nan"), float("nan")
    p = model.predict_batch(batch)
    return safe(auc, p, batch.clicks), safe(gauc, batch.users, p, batch.clicks)


def train(ds: Dataset, cfg: Config, log_path: str | Path | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Train a fresh model for ``cfg.epochs`` epochs of shuffled mini-batches."""
    check_compatible(ds, cfg)
    train_idx = ds.indices("train")
    if len(train_idx) == 0:
        raise ValueError("dataset has no training interactions")
    model = RARModel(cfg, ds.n_users, ds.n_items, ds.exposure)
    opt = make_optimizer(cfg, model.params)
    shuffle_rng = seed_rng(cfg.seed).spawn(3)[2]
    result = TrainResult(model)
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w", encoding="utf-8", newline="\n")
        log_fh.write(LOG_HEADER + "\n")
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = shuffle_rng.permutation(train_idx)
            total = 0.0
            for b, s in enumerate(range(0, len(perm), cfg.batch_size)):
                idx = perm[s:s + cfg.batch_size]
                loss, grads = model.loss_and_grad(ds.batch(idx, with_pools=model.augmented))
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
                opt.step(model.params, grads)
                model.bump_version()
                total += loss * len(idx)
            val_auc, val_gauc = evaluate(model, ds, "val")
            metrics = EpochMetrics(epoch, total / len(perm), val_auc, val_gauc)
            result.history.append(metrics)
            log.info("epoch %d loss %.5f val_auc %.4f val_gauc %.4f", epoch, metrics.train_loss,
                     val_auc, val_gauc)
            if log_fh is not None:
                log_fh.write(metrics.line() + "\n")
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(metrics)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def train_steps(model: RARModel, batch: Batch, steps: int) -> list[float]:
    """Repeated full-batch optimizer steps on one batch; returns the loss trace."""
    opt = make_optimizer(model.cfg, model.params)
    losses = []
    for _ in range(steps):
        loss, grads = model.loss_and_grad(batch)
        opt.step(model.params, grads)
        model.bump_version()
        losses.append(loss)
    return losses


@dataclass
class TensorCheck:
    name: str
    n_checked: int
    max_rel_error: float
    worst_analytic: float
    worst_numeric: float
    n_skipped: int = 0


@dataclass
class GradcheckReport:
    tolerance: float
    tensors: list[TensorCheck]

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def failures(self) -> list[TensorCheck]:
        return [t for t in self.tensors if t.max_rel_error >= self.tolerance]

    @property
    def n_skipped(self) -> int:
        return sum(t.n_skipped for t in self.tensors)


def rel_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _kink_pattern(res) -> np.ndarray:
    """ReLU on/off pattern of every hidden unit plus the exposure clamp mask."""
    parts = [(z > 0).ravel() for _, z in res.head_cache[:-1]]
    if res.state is not None:
        for cache in (res.state.cache_u, res.state.cache_i):
            parts.extend((z > 0).ravel() for _, z in cache[:-1])
        M = res.state.M
        parts.append(((M > PROB_CLAMP) & (M < 1.0 - PROB_CLAMP)).ravel())
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def gradcheck(model: RARModel, batch: Batch, tolerance: float = 1e-4, n_coords: int = 50,
              step: float = 1e-5, seed: int = 0, grad_fn=None) -> GradcheckReport:
    """Compare analytic gradients with central differences of the batch loss.

    Selection is evaluated once at the current parameters and then held fixed:
    top-k is piecewise constant, so the loss being differentiated is the one for
    that selection. Embedding-table coordinates are sampled from rows the batch
    actually touches. ``grad_fn(model, batch, selection)`` overrides the analytic
    gradient (used to test that the checker catches broken gradients).

    A coordinate whose +/- step flips a ReLU or the exposure clamp straddles a
    kink where the loss has no derivative; it is counted in ``n_skipped``
    instead of being compared.
    """
    rng = np.random.default_rng(seed)
    selection = model.select(batch) if model.augmented else None
    if grad_fn is None:
        _, grads = model.loss_and_grad(batch, selection)
    else:
        grads = grad_fn(model, batch, selection)

    base_pattern = _kink_pattern(model.forward(batch, selection))

    def loss_at() -> tuple[float, bool]:
        res = model.forward(batch, selection)
        return res.mean_loss, np.array_equal(_kink_pattern(res), base_pattern)

    touched = {
        "user_emb": np.unique(np.concatenate([batch.users] + ([selection[0].ravel()] if selection else []))),
        "item_emb": np.unique(np.concatenate([batch.items] + ([selection[1].ravel()] if selection else []))),
    }
    checks = []
    for name, P in model.params.items():
        if name in touched:
            rows = touched[name]
            flat = (rows[:, None] * P.shape[1] + np.arange(P.shape[1])).ravel()
        else:
            flat = np.arange(P.size)
        if len(flat) > n_coords:
            flat = rng.choice(flat, n_coords, replace=False)
        worst = (0.0, 0.0, 0.0)
        skipped = 0
        view = P.reshape(-1)
        for c in flat:
            orig = view[c]
            view[c] = orig + step
            lp, smooth_p = loss_at()
            view[c] = orig - step
            lm, smooth_m = loss_at()
            view[c] = orig
            if not (smooth_p and smooth_m):
                skipped += 1
                continue
            num = (lp - lm) / (2.0 * step)
            ana = float(grads[name].reshape(-1)[c])
            err = rel_error(ana, num)
            if err >= worst[0]:
                worst = (err, ana, num)
        checks.append(TensorCheck(name, len(flat) - skipped, worst[0], worst[1], worst[2], skipped))
    return GradcheckReport(tolerance, checks)


ABLATION_ROWS = (
    ("Raw", "raw"),
    ("RAR-user", "user"),
    ("RAR-select", "select"),
    ("RAR-aux-wght", "aux_wght"),
    ("RAR-wght", "wght"),
    ("RAR", "full"),
)


@dataclass(frozen=True)
class AblationRow:
    label: str
    ablation: str
    auc: float
    gauc: float


def run_ablation(ds: Dataset, cfg: Config, split: str = "test",
                 variants: tuple[str, ...] | None = None) -> list[AblationRow]:
    """Train every variant with the same seed and budget and score it on ``split``."""
    rows = []
    for label, ablation in ABLATION_ROWS:
        if variants is not None and ablation not in variants:
            continue
        model = train(ds, cfg.replace(ablation=ablation)).model
        a, g = evaluate(model, ds, split)
        rows.append(AblationRow(label, ablation, a, g))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    body = [(r.label, f"{r.auc:.4f}", f"{r.gauc:.4f}") for r in rows]
    head = ("variant", "AUC", "gAUC")
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    return "\n".join(
        "  ".join(c.ljust(w) if n == 0 else c.rjust(w) for n, (c, w) in enumerate(zip(row, widths)))
        for row in [head, *body])
