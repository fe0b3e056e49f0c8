"""Normalization and embedding primitives.

Conventions used throughout the model code:

* parameter matrices are stored ``[out, in]`` and applied to row-token
  layouts ``[..., tokens, features]`` as ``x @ W.T``;
* the documented per-channel surfaces keep the column layout
  (``[features, patches]``) and are thin transposing wrappers over the
  batched row-token core, so there is a single code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError, add, matmul, swap_last, transpose

RMSNORM_EPS = 1e-8
REVIN_EPS = 1e-5


class Linear:
    """Affine map with weight ``[out, in]`` and optional bias ``[out]``.

    Bias is present on the patch embedding and output heads and absent on
    QKV/FFN projections; callers choose.
    """

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        bound = math.sqrt(6.0 / in_dim)  # Kaiming-uniform, fan-in scaled
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        """Apply to ``[..., in]`` rows, returning ``[..., out]``."""
        y = matmul(x, transpose(self.weight))
        if self.bias is not None:
            y = add(y, self.bias)
        return y

    def parameters(self):
        if self.bias is not None:
            return [("weight", self.weight), ("bias", self.bias)]
        return [("weight", self.weight)]


class RMSNorm:
    """Root-mean-square rescaling along the last axis; no re-centering."""

    def __init__(self, dim: int, eps: float = RMSNORM_EPS):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.eps = float(eps)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.gain.shape[0]:
            raise ShapeError(
                f"rmsnorm: last axis {x.shape[-1]} != gain size {self.gain.shape[0]}")
        ms = (x * x).mean(axis=-1, keepdims=True)
        return x * (ms + self.eps) ** -0.5 * self.gain

    def parameters(self):
        return [("gain", self.gain)]


def rmsnorm(x: Tensor, layer: RMSNorm) -> Tensor:
    return layer(x)


# -- reversible instance normalization -------------------------------------


@dataclass
class RevInState:
    """Per-channel statistics removed from one input window."""

    mean: np.ndarray
    std: np.ndarray
    eps: float = REVIN_EPS


def revin_normalize(x: np.ndarray, eps: float = REVIN_EPS) -> tuple[np.ndarray, RevInState]:
    """Center and scale each channel of ``x`` over its last (time) axis.

    Works on ``[channels, steps]`` and on batched ``[..., channels, steps]``
    inputs alike. Standard deviations are clamped from below by ``eps`` so
    constant channels normalize to zeros and still round-trip exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ShapeError(f"revin: need at least 2 time steps, got shape {x.shape}")
    mean = x.mean(axis=-1)
    std = x.std(axis=-1)
    std = np.maximum(std, eps)
    normed = (x - mean[..., None]) / std[..., None]
    return normed, RevInState(mean=mean, std=std, eps=eps)


def revin_denormalize(y: np.ndarray, state: RevInState) -> np.ndarray:
    """Invert ``revin_normalize`` on outputs of any horizon length."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[:-1] != state.mean.shape:
        raise ShapeError(
            f"revin: output channels {y.shape[:-1]} != state channels {state.mean.shape}")
    return y * state.std[..., None] + state.mean[..., None]


# -- positional encodings ---------------------------------------------------


class PositionalEncoding:
    """Learnable ``[d_model, num_patches]`` table, initialized from U(0, 0.2)."""

    def __init__(self, d_model: int, num_patches: int,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.table = Tensor(rng.uniform(0.0, 0.2, size=(d_model, num_patches)),
                            requires_grad=True)

    def parameters(self):
        return [("table", self.table)]


# -- patching ---------------------------------------------------------------


def patch_rows(x: np.ndarray, patch_len: int) -> np.ndarray:
    """Split the last axis into non-overlapping patches.

    ``[..., L] -> [..., K, P]`` with ``K = floor(L / P)``; the trailing
    ``L - K*P`` steps are dropped.
    """
    x = np.asarray(x, dtype=np.float64)
    if patch_len < 1:
        raise ValueError(f"patch length must be >= 1, got {patch_len}")
    length = x.shape[-1]
    if length < patch_len:
        raise ShapeError(
            f"input too short: {length} steps cannot hold one patch of length {patch_len}")
    k = length // patch_len
    trimmed = x[..., : k * patch_len]
    return trimmed.reshape(x.shape[:-1] + (k, patch_len))


def make_patches(x, patch_len: int) -> Tensor:
    """Patch a single channel, returning the ``[P, K]`` column layout."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    flat = data.reshape(-1)
    rows = patch_rows(flat, patch_len)  # [K, P]
    return Tensor(rows.T)


def embed_tokens(xp: Tensor, projection: Linear, pos: PositionalEncoding) -> Tensor:
    """Project patch rows ``[..., K, P]`` into tokens ``[..., K, D]``.

    Adds the broadcast bias and the learnable positional table.
    """
    k = xp.shape[-2]
    if pos.table.shape[1] != k:
        raise ShapeError(
            f"positional table covers {pos.table.shape[1]} patches, input has {k}")
    return projection(xp) + transpose(pos.table)


def embed_patches(xp: Tensor, projection: Linear, pos: PositionalEncoding) -> Tensor:
    """Column-layout embedding surface: ``[P, K] -> [D, K]``."""
    tokens = embed_tokens(swap_last(xp), projection, pos)
    return swap_last(tokens)
