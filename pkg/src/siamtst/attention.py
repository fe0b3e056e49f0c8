"""Multi-head scaled dot-product attention with query/key normalization.

Queries and keys are RMS-normalized per token before the dot product,
which bounds the pre-softmax logits and keeps the softmax away from
saturation regardless of the raw projection scale. Projections carry no
bias terms.
"""

from __future__ import annotations

import math

import numpy as np

from .layers import RMSNorm
from .tensor import Tensor, ShapeError, concat, matmul, softmax, swap_last, transpose


class MultiHeadAttention:
    """Self-attention over token rows ``[..., K, D]``.

    Each of the ``n_heads`` heads has its own query/key/value projections
    of width ``d_k = floor(D / n_heads)`` and its own learnable RMS gains
    for queries and keys (initialized to 1). Head outputs are concatenated
    and mixed by an output projection; the caller adds the residual.
    """

    def __init__(self, d_model: int, n_heads: int,
                 rng: np.random.Generator | None = None,
                 qk_norm: bool = True, learnable_qk_gains: bool = True,
                 eps: float = 1e-8):
        if rng is None:
            rng = np.random.default_rng(0)
        if n_heads < 1 or n_heads > d_model:
            raise ShapeError(f"need 1 <= heads <= d_model, got {n_heads} and {d_model}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.qk_norm = qk_norm

        bound = math.sqrt(6.0 / d_model)

        def proj():
            return Tensor(rng.uniform(-bound, bound, size=(self.d_k, d_model)),
                          requires_grad=True)

        self.w_q = [proj() for _ in range(n_heads)]
        self.w_k = [proj() for _ in range(n_heads)]
        self.w_v = [proj() for _ in range(n_heads)]
        self.w_out = Tensor(rng.uniform(-math.sqrt(6.0 / d_model), math.sqrt(6.0 / d_model),
                                        size=(d_model, n_heads * self.d_k)),
                            requires_grad=True)
        self.q_norms = [RMSNorm(self.d_k, eps=eps) for _ in range(n_heads)]
        self.k_norms = [RMSNorm(self.d_k, eps=eps) for _ in range(n_heads)]
        if not learnable_qk_gains:
            for norm in self.q_norms + self.k_norms:
                norm.gain.requires_grad = False

    def project_head(self, tokens: Tensor, head: int):
        """Q, K, V rows for one head: ``[..., K, D] -> 3 x [..., K, d_k]``."""
        q = matmul(tokens, transpose(self.w_q[head]))
        k = matmul(tokens, transpose(self.w_k[head]))
        v = matmul(tokens, transpose(self.w_v[head]))
        return q, k, v

    def head_attention(self, q: Tensor, k: Tensor, v: Tensor, head: int) -> Tensor:
        q_norm = self.q_norms[head] if self.qk_norm else None
        k_norm = self.k_norms[head] if self.qk_norm else None
        return qknorm_attention(q, k, v, self.d_k, q_norm=q_norm, k_norm=k_norm)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.d_model:
            raise ShapeError(
                f"attention expects feature size {self.d_model}, got {tokens.shape[-1]}")
        outs = []
        for h in range(self.n_heads):
            q, k, v = self.project_head(tokens, h)
            outs.append(self.head_attention(q, k, v, h))
        merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
        return matmul(merged, transpose(self.w_out))

    def parameters(self):
        params = []
        for h in range(self.n_heads):
            params.append((f"head{h}.wq", self.w_q[h]))
            params.append((f"head{h}.wk", self.w_k[h]))
            params.append((f"head{h}.wv", self.w_v[h]))
            params.append((f"head{h}.q_gain", self.q_norms[h].gain))
            params.append((f"head{h}.k_gain", self.k_norms[h].gain))
        params.append(("w_out", self.w_out))
        return params


def qknorm_attention(q: Tensor, k: Tensor, v: Tensor, d_k: int,
                     q_norm: RMSNorm | None = None,
                     k_norm: RMSNorm | None = None) -> Tensor:
    """Scaled dot-product attention over key rows.

    When norm layers are given, each query and key vector is RMS-normalized
    along its feature axis first; with unit gains this caps every logit at
    ``sqrt(d_k)`` in magnitude. ``None`` norms give plain attention.
    """
    if q.shape != k.shape:
        raise ShapeError(f"query shape {q.shape} != key shape {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key rows {k.shape[-2]} != value rows {v.shape[-2]}")
    if q_norm is not None:
        q = q_norm(q)
    if k_norm is not None:
        k = k_norm(k)
    logits = matmul(q, swap_last(k)) * (1.0 / math.sqrt(d_k))
    weights = softmax(logits, axis=-1)
    return matmul(weights, v)


def attention_weights(q: Tensor, k: Tensor, d_k: int,
                      q_norm: RMSNorm | None = None,
                      k_norm: RMSNorm | None = None) -> np.ndarray:
    """Softmax attention matrix only, for inspection and tests."""
    if q_norm is not None:
        q = q_norm(q)
    if k_norm is not None:
        k = k_norm(k)
    logits = matmul(q, swap_last(k)) * (1.0 / math.sqrt(d_k))
    return softmax(logits, axis=-1).data
