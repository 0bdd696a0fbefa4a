"""Per-layer goodness scores.

Two flavours: the classic per-sample sum of squared activities, and the
channel-grouped variant where a conv layer's C output channels are split into
J contiguous blocks of size S = C/J (one block per class) and each block's
mean of squares becomes that class's score. Reductions accumulate at float64
and cast back to the input dtype so vectorized results track the literal
per-element definition to well under 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor import ConfigError, ShapeError


class ContractError(ValueError):
    """A caller violated an input contract (e.g. non-one-hot label rows)."""


@dataclass(frozen=True)
class GroupSpec:
    """Contiguous channel-to-class partition: block j covers [j*S, (j+1)*S)."""

    channels: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 1 or self.channels < 1:
            raise ConfigError("GroupSpec dimensions must be >= 1")
        if self.channels % self.num_classes:
            raise ConfigError(
                f"channels ({self.channels}) not divisible by classes ({self.num_classes})"
            )

    @property
    def group_size(self) -> int:
        return self.channels // self.num_classes


class GoodnessPair(NamedTuple):
    g_pos: np.ndarray  # (N,) goodness of the true class
    g_neg: np.ndarray  # (N,) summed goodness of all wrong classes


def layer_goodness(a: np.ndarray) -> np.ndarray:
    """Per-sample sum of squares over all features; (N, ...) -> (N,)."""
    flat = a.reshape(a.shape[0], -1).astype(np.float64)
    return np.einsum("ni,ni->n", flat, flat).astype(a.dtype)


def grouped_goodness(y: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Per-class mean of squares; (N, C, H, W) -> (N, J).

    G[n, j] = mean over the j-th channel block and all spatial positions of
    the squared activations.
    """
    if y.ndim != 4:
        raise ShapeError(f"grouped_goodness expects NCHW input, got rank {y.ndim}")
    n, c, h, w = y.shape
    if c != spec.channels:
        raise ShapeError(f"input has {c} channels, spec declares {spec.channels}")
    s = spec.group_size
    grouped = y.reshape(n, spec.num_classes, s * h * w).astype(np.float64)
    g = np.einsum("njk,njk->nj", grouped, grouped) / (s * h * w)
    return g.astype(y.dtype)


def grouped_goodness_backward(y: np.ndarray, spec: GroupSpec,
                              grad_g: np.ndarray) -> np.ndarray:
    """Gradient of grouped_goodness: dG[n,j]/dy = 2*y / (S*H*W) within block j."""
    n, c, h, w = y.shape
    if c != spec.channels:
        raise ShapeError(f"input has {c} channels, spec declares {spec.channels}")
    if grad_g.shape != (n, spec.num_classes):
        raise ShapeError(
            f"grad shape {grad_g.shape} vs expected {(n, spec.num_classes)}"
        )
    s = spec.group_size
    scale = grad_g[:, :, None] / (s * h * w)  # (N, J, 1)
    grad = 2.0 * y.reshape(n, spec.num_classes, s * h * w) * scale
    return grad.reshape(y.shape).astype(y.dtype)


def check_one_hot(z: np.ndarray) -> None:
    """Raise ContractError unless every row of z is exactly one-hot."""
    if z.ndim != 2:
        raise ContractError(f"one-hot matrix must be rank 2, got rank {z.ndim}")
    is_01 = np.all((z == 0) | (z == 1))
    if not is_01 or not np.all(z.sum(axis=1) == 1):
        raise ContractError("label matrix rows must be exactly one-hot")


def split_pos_neg(g: np.ndarray, z: np.ndarray) -> GoodnessPair:
    """g_pos[n] = G[n, y_n]; g_neg[n] = sum of G[n, j] over the wrong classes."""
    if g.shape != z.shape:
        raise ShapeError(f"goodness {g.shape} vs one-hot {z.shape}")
    check_one_hot(z)
    zf = z.astype(g.dtype)
    g_pos = (g * zf).sum(axis=1)
    g_neg = (g * (1.0 - zf)).sum(axis=1)
    return GoodnessPair(g_pos=g_pos, g_neg=g_neg)
