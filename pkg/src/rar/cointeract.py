"""Co-Interaction: set-to-set matching between selected users and recall items.

All routines work on a leading batch axis: selected look-alike embeddings are
``(B, k_l, d)`` and selected recall-item embeddings ``(B, k_r, d)``. The
single-example helpers :func:`forward` and :func:`backward` wrap them with B=1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ExposureLog

PROB_CLAMP = 1e-7

Layers = list[tuple[np.ndarray, np.ndarray]]


def init_tower(d_in: int, hidden: tuple[int, ...], d_out: int, rng: np.random.Generator) -> Layers:
    """He-style init for a ReLU MLP ``d_in -> hidden... -> d_out``."""
    widths = (d_in, *hidden, d_out)
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers.append((rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)), np.zeros(b)))
    return layers


def mlp_forward(x: np.ndarray, layers: Layers) -> tuple[np.ndarray, list]:
    cache = []
    a = x
    for n, (W, b) in enumerate(layers):
        z = a @ W + b
        cache.append((a, z))
        a = np.maximum(z, 0.0) if n < len(layers) - 1 else z
    return a, cache


def mlp_backward(g: np.ndarray, layers: Layers, cache: list) -> tuple[np.ndarray, list]:
    """Backprop ``g`` (gradient on the MLP output); returns (grad on input, layer grads)."""
    grads = [None] * len(layers)
    for n in range(len(layers) - 1, -1, -1):
        W, _ = layers[n]
        a_in, z = cache[n]
        if n < len(layers) - 1:
            g = g * (z > 0)
        gW = a_in.reshape(-1, a_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        grads[n] = (gW, gb)
        g = g @ W.T
    return g, grads


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class CoInteractionParams:
    user_layers: Layers
    item_layers: Layers

    def __post_init__(self) -> None:
        if self.user_layers[-1][0].shape[1] != self.item_layers[-1][0].shape[1]:
            raise ValueError("user and item towers must share their output width")

    @property
    def shared(self) -> bool:
        return self.item_layers is self.user_layers


@dataclass
class CoInteractionState:
    M: np.ndarray
    w_u: np.ndarray
    w_i: np.ndarray
    v_c: np.ndarray
    v_d: np.ndarray
    v_enr: np.ndarray
    uniform: bool
    XL: np.ndarray = field(repr=False)
    XR: np.ndarray = field(repr=False)
    HL: np.ndarray = field(repr=False)
    HR: np.ndarray = field(repr=False)
    cache_u: list = field(repr=False)
    cache_i: list = field(repr=False)


def forward_batch(XL: np.ndarray, XR: np.ndarray, params: CoInteractionParams,
                  uniform: bool = False) -> CoInteractionState:
    """Matching matrix, weighting vectors and enriched representation.

    ``uniform=True`` replaces the weighting vectors by 1/k_l and 1/k_r (plain mean
    pooling); the matching matrix is still produced for the exposure loss.
    """
    if XL.ndim != 3 or XR.ndim != 3 or XL.shape[0] != XR.shape[0]:
        raise ValueError("expected (B, k_l, d) and (B, k_r, d) inputs")
    if XL.shape[1] < 1 or XR.shape[1] < 1:
        raise ValueError("need at least one selected user and one selected item")
    if not (np.all(np.isfinite(XL)) and np.all(np.isfinite(XR))):
        raise ValueError("non-finite selected embeddings")
    HL, cache_u = mlp_forward(XL, params.user_layers)
    HR, cache_i = mlp_forward(XR, params.item_layers)
    if HL.shape[-1] != HR.shape[-1]:
        raise ValueError("tower output widths differ")
    M = sigmoid(np.einsum("bld,brd->blr", HL, HR))
    B, k_l, k_r = M.shape
    if uniform:
        w_u = np.full((B, k_l), 1.0 / k_l)
        w_i = np.full((B, k_r), 1.0 / k_r)
    else:
        w_u = M.mean(axis=2)
        w_i = M.mean(axis=1)
    # weighted sums over the original selected embeddings, not the tower outputs
    v_c = np.einsum("bl,bld->bd", w_u, XL)
    v_d = np.einsum("br,brd->bd", w_i, XR)
    return CoInteractionState(M, w_u, w_i, v_c, v_d, np.concatenate([v_c, v_d], axis=1), uniform,
                              XL, XR, HL, HR, cache_u, cache_i)


def backward_batch(state: CoInteractionState, params: CoInteractionParams, g_venr: np.ndarray,
                   g_M: np.ndarray | None = None) -> dict:
    """Gradients of the loss given its gradient on ``v_enr`` and (directly) on ``M``.

    Returns ``{"XL", "XR", "user_layers", "item_layers"}``; with shared towers the
    two layer-gradient lists are already summed into ``user_layers``.
    """
    if state.cache_u is None:
        raise ValueError("state carries no forward cache")
    XL, XR, M = state.XL, state.XR, state.M
    B, k_l, k_r = M.shape
    d = XL.shape[2]
    g_vc, g_vd = g_venr[:, :d], g_venr[:, d:]
    g_XL = state.w_u[:, :, None] * g_vc[:, None, :]
    g_XR = state.w_i[:, :, None] * g_vd[:, None, :]
    g_M_total = np.zeros_like(M) if g_M is None else np.array(g_M, dtype=np.float64)
    if not state.uniform:
        g_wu = np.einsum("bd,bld->bl", g_vc, XL)
        g_wi = np.einsum("bd,brd->br", g_vd, XR)
        g_M_total += g_wu[:, :, None] / k_r + g_wi[:, None, :] / k_l
    g_S = g_M_total * M * (1.0 - M)
    g_HL = np.einsum("blr,brd->bld", g_S, state.HR)
    g_HR = np.einsum("blr,bld->brd", g_S, state.HL)
    gx_l, grads_u = mlp_backward(g_HL, params.user_layers, state.cache_u)
    gx_r, grads_i = mlp_backward(g_HR, params.item_layers, state.cache_i)
    if params.shared:
        grads_u = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(grads_u, grads_i)]
        grads_i = None
    return {"XL": g_XL + gx_l, "XR": g_XR + gx_r, "user_layers": grads_u, "item_layers": grads_i}


def forward(E_L_sel: np.ndarray, E_R_sel: np.ndarray, params: CoInteractionParams,
            uniform: bool = False) -> CoInteractionState:
    """Single-example forward; the returned state keeps a batch axis of 1 internally."""
    state = forward_batch(np.asarray(E_L_sel, float)[None], np.asarray(E_R_sel, float)[None], params,
                          uniform)
    return state


def backward(state: CoInteractionState, params: CoInteractionParams, upstream_grad_on_v_enr,
             grad_on_M_from_exposure=None) -> dict:
    g_venr = np.asarray(upstream_grad_on_v_enr, float).reshape(1, -1)
    g_M = None if grad_on_M_from_exposure is None else np.asarray(grad_on_M_from_exposure, float)
    if g_M is not None and g_M.ndim == 2:
        g_M = g_M[None]
    out = backward_batch(state, params, g_venr, g_M)
    out["E_L_sel"], out["E_R_sel"] = out.pop("XL")[0], out.pop("XR")[0]
    return out


def build_exposure_labels(selected_user_ids, selected_item_ids, log: ExposureLog,
                          mode: str = "entrywise") -> np.ndarray:
    """0/1 supervision for the matching matrix.

    ``entrywise``: cell (j, m) is 1 iff item m was exposed to user j.
    ``aggregate``: cell (j, m) is 1 iff item m was exposed to any selected user,
    so each column is constant. Leading batch axes are supported.
    """
    users = np.asarray(selected_user_ids)
    items = np.asarray(selected_item_ids)
    hit = log.contains(users[..., :, None], items[..., None, :])
    if mode == "aggregate":
        hit = np.broadcast_to(hit.any(axis=-2, keepdims=True), hit.shape)
    elif mode != "entrywise":
        raise ValueError(f"unknown exposure label mode {mode!r}")
    return hit.astype(np.float64)


def exposure_loss(M: np.ndarray, labels: np.ndarray) -> float | np.ndarray:
    """Mean binary cross-entropy over the matrix cells (per example for 3-D input)."""
    M = np.asarray(M, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if M.shape != labels.shape:
        raise ValueError(f"shape mismatch {M.shape} vs {labels.shape}")
    p = np.clip(M, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ce = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    if ce.ndim == 3:
        return ce.mean(axis=(1, 2))
    return float(ce.mean())


def exposure_loss_grad(M: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(exposure_loss)/dM cell-wise, matching the clamp in :func:`exposure_loss`."""
    inside = (M > PROB_CLAMP) & (M < 1.0 - PROB_CLAMP)
    n_cells = M.shape[-1] * M.shape[-2]
    p = np.clip(M, PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = (-labels / p + (1.0 - labels) / (1.0 - p)) / n_cells
    return np.where(inside, g, 0.0)
