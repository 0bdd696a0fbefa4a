"""Layer-local training objectives over goodness scores.

Four objectives, all reduced as the batch MEAN so learning rates transfer
across batch sizes:

* ff_original    softplus(theta - g_pos) + softplus(g_neg - theta)
* symba          softplus(g_neg - g_pos)
* margin         max(m + g_neg - g_pos, 0) + lambda * g_neg
* channel_wise   softmax cross-entropy over the per-class goodness matrix

symba and margin default to the orientation that drives positive goodness
above negative; the *_printed_sign flags swap the hinge/softplus argument
order for the literal published forms. Gradients are analytic and returned
with respect to the goodness inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import ConfigError
from .goodness import check_one_hot

LOSS_KINDS = ("ff_original", "symba", "margin", "channel_wise")


@dataclass
class LossConfig:
    kind: str = "ff_original"
    theta: float = 2.0
    margin: float = 1.0
    lam: float = 0.03
    symba_printed_sign: bool = False
    margin_printed_sign: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.theta <= 0:
            raise ConfigError(f"theta must be > 0, got {self.theta}")
        if self.margin < 0 or self.lam < 0:
            raise ConfigError("margin and lambda must be >= 0")


@dataclass
class LossOutput:
    value: float
    grad_g_pos: Optional[np.ndarray] = None   # (N,)
    grad_g_neg: Optional[np.ndarray] = None   # (N,)
    grad_goodness: Optional[np.ndarray] = None  # (N, J), channel_wise only


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(x, dtype=float))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ff_loss(g_pos: np.ndarray, g_neg: np.ndarray, theta: float) -> LossOutput:
    """Two-sided softplus pushing g_pos above theta and g_neg below it."""
    n = g_pos.shape[0]
    value = float(np.mean(softplus(theta - g_pos) + softplus(g_neg - theta)))
    grad_pos = -sigmoid(theta - g_pos) / n
    grad_neg = sigmoid(g_neg - theta) / n
    return LossOutput(value=value, grad_g_pos=grad_pos, grad_g_neg=grad_neg)


def symba_loss(g_pos: np.ndarray, g_neg: np.ndarray,
               printed_sign: bool = False) -> LossOutput:
    """Softplus of the goodness gap; default orientation rewards g_pos > g_neg."""
    n = g_pos.shape[0]
    d = (g_pos - g_neg) if printed_sign else (g_neg - g_pos)
    value = float(np.mean(softplus(d)))
    s = sigmoid(d) / n
    if printed_sign:
        return LossOutput(value=value, grad_g_pos=s, grad_g_neg=-s)
    return LossOutput(value=value, grad_g_pos=-s, grad_g_neg=s)


def margin_loss(g_pos: np.ndarray, g_neg: np.ndarray, m: float, lam: float,
                printed_sign: bool = False) -> LossOutput:
    """Hinge on the goodness gap plus lambda-weighted suppression of g_neg.

    Subgradient at the hinge kink is 0 (strict inequality activates the hinge).
    """
    n = g_pos.shape[0]
    gap = (m + g_pos - g_neg) if printed_sign else (m + g_neg - g_pos)
    active = gap > 0
    value = float(np.mean(np.where(active, gap, 0.0) + lam * g_neg))
    a = active.astype(g_pos.dtype) / n
    if printed_sign:
        grad_pos = a
        grad_neg = -a + lam / n
    else:
        grad_pos = -a
        grad_neg = a + lam / n
    return LossOutput(value=value, grad_g_pos=grad_pos, grad_g_neg=grad_neg)


def channel_wise_loss(g: np.ndarray, z: np.ndarray) -> LossOutput:
    """Softmax cross-entropy with the true class over per-class goodness.

    value = -(1/N) sum_n [ G[n, y_n] - logsumexp_j G[n, j] ];
    grad_G = (softmax(G) - Z) / N. Rows of grad_G sum to zero.
    """
    if g.shape != z.shape:
        raise ConfigError(f"goodness {g.shape} vs one-hot {z.shape}")
    check_one_hot(z)
    n = g.shape[0]
    shifted = g - g.max(axis=1, keepdims=True)
    expg = np.exp(shifted)
    denom = expg.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    value = float(-np.mean((log_probs * z).sum(axis=1)))
    grad = (expg / denom - z) / n
    return LossOutput(value=value, grad_goodness=grad.astype(g.dtype))


def evaluate_pair_loss(cfg: LossConfig, g_pos: np.ndarray,
                       g_neg: np.ndarray) -> LossOutput:
    """Dispatch the scalar-pair losses from a LossConfig."""
    if cfg.kind == "ff_original":
        return ff_loss(g_pos, g_neg, cfg.theta)
    if cfg.kind == "symba":
        return symba_loss(g_pos, g_neg, printed_sign=cfg.symba_printed_sign)
    if cfg.kind == "margin":
        return margin_loss(g_pos, g_neg, cfg.margin, cfg.lam,
                           printed_sign=cfg.margin_printed_sign)
    raise ConfigError(f"{cfg.kind} is not a pair loss")
