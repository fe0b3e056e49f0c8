"""Channel-independent transformer encoder.

Raw univariate windows are patched, linearly embedded with a learnable
positional table, and passed through a stack of pre-norm encoder layers.
All channels of a multivariate series share one parameter set. The
encoded representation of a channel is a ``[d_model, num_patches]``
matrix.

Checkpoints are single JSON files: a format version, a config echo, and
named parameter arrays with shapes. JSON float serialization round-trips
binary64 exactly, so save/load is bit-faithful.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .attention import MultiHeadAttention
from .layers import Linear, PositionalEncoding, RMSNorm, embed_tokens, patch_rows
from .tensor import Tensor, ShapeError, dropout, gelu, swap_last

CHECKPOINT_FORMAT_VERSION = 1


class EncoderLayer:
    """Pre-norm block: attention and FFN sublayers, residuals after each.

    With every sublayer weight at zero the block is exactly the identity,
    which is the point of normalizing before the residual branch instead
    of after it.
    """

    def __init__(self, d_model: int, n_heads: int, d_ff: int,
                 rng: np.random.Generator | None = None,
                 qk_norm: bool = True, learnable_qk_gains: bool = True,
                 rmsnorm_eps: float = 1e-8,
                 attn_dropout: float = 0.0, ffn_dropout: float = 0.0):
        if rng is None:
            rng = np.random.default_rng(0)
        self.attn = MultiHeadAttention(d_model, n_heads, rng=rng, qk_norm=qk_norm,
                                       learnable_qk_gains=learnable_qk_gains,
                                       eps=rmsnorm_eps)
        self.ffn_in = Linear(d_model, d_ff, bias=False, rng=rng)
        self.ffn_out = Linear(d_ff, d_model, bias=False, rng=rng)
        self.norm1 = RMSNorm(d_model, eps=rmsnorm_eps)
        self.norm2 = RMSNorm(d_model, eps=rmsnorm_eps)
        self.attn_dropout = attn_dropout
        self.ffn_dropout = ffn_dropout

    def __call__(self, tokens: Tensor, train_rng: np.random.Generator | None = None) -> Tensor:
        attended = self.attn(self.norm1(tokens))
        if self.attn_dropout > 0.0 and train_rng is not None:
            attended = dropout(attended, self.attn_dropout, train_rng)
        tokens = tokens + attended
        hidden = gelu(self.ffn_in(self.norm2(tokens)))
        out = self.ffn_out(hidden)
        if self.ffn_dropout > 0.0 and train_rng is not None:
            out = dropout(out, self.ffn_dropout, train_rng)
        return tokens + out

    def parameters(self):
        params = [(f"attn.{n}", p) for n, p in self.attn.parameters()]
        params += [(f"ffn_in.{n}", p) for n, p in self.ffn_in.parameters()]
        params += [(f"ffn_out.{n}", p) for n, p in self.ffn_out.parameters()]
        params += [(f"norm1.{n}", p) for n, p in self.norm1.parameters()]
        params += [(f"norm2.{n}", p) for n, p in self.norm2.parameters()]
        return params


class Backbone:
    """Patch embedding plus ``n_layers`` encoder layers, channel-shared."""

    def __init__(self, patch_len: int, num_patches: int, d_model: int,
                 n_heads: int, n_layers: int, d_ff: int | None = None,
                 rng: np.random.Generator | None = None,
                 qk_norm: bool = True, learnable_qk_gains: bool = True,
                 rmsnorm_eps: float = 1e-8, final_norm: bool = False,
                 attn_dropout: float = 0.0, ffn_dropout: float = 0.0):
        if rng is None:
            rng = np.random.default_rng(0)
        if d_ff is None:
            d_ff = 4 * d_model
        self.patch_len = patch_len
        self.num_patches = num_patches
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.embed = Linear(patch_len, d_model, bias=True, rng=rng)
        self.pos = PositionalEncoding(d_model, num_patches, rng=rng)
        self.layers = [
            EncoderLayer(d_model, n_heads, d_ff, rng=rng, qk_norm=qk_norm,
                         learnable_qk_gains=learnable_qk_gains,
                         rmsnorm_eps=rmsnorm_eps,
                         attn_dropout=attn_dropout, ffn_dropout=ffn_dropout)
            for _ in range(n_layers)
        ]
        self.final_norm = RMSNorm(d_model, eps=rmsnorm_eps) if final_norm else None

    @property
    def repr_dim(self) -> int:
        """Length of one flattened channel representation."""
        return self.d_model * self.num_patches

    # -- forward -----------------------------------------------------------

    def encode_tokens(self, xp: Tensor, train_rng=None) -> Tensor:
        """Batched core: patch rows ``[..., K, P]`` to tokens ``[..., K, D]``."""
        tokens = embed_tokens(xp, self.embed, self.pos)
        for layer in self.layers:
            tokens = layer(tokens, train_rng=train_rng)
        if self.final_norm is not None:
            tokens = self.final_norm(tokens)
        return tokens

    def encode_window(self, x: np.ndarray) -> Tensor:
        """Encode one window ``[..., L]`` into patch tokens ``[..., K, D]``."""
        rows = patch_rows(x, self.patch_len)
        if rows.shape[-2] != self.num_patches:
            raise ShapeError(
                f"window yields {rows.shape[-2]} patches, model expects {self.num_patches}")
        return self.encode_tokens(Tensor(rows))

    def encode_channel(self, x) -> Tensor:
        """Encode a single ``[1, L]`` channel into ``[d_model, K]``."""
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        tokens = self.encode_window(data.reshape(-1))
        return swap_last(tokens)

    def encode(self, x) -> Tensor:
        """Encode ``[N, L]`` channel-independently into ``[N, d_model, K]``."""
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        tokens = self.encode_window(data)  # [N, K, D]
        return swap_last(tokens)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        params = [(f"embed.{n}", p) for n, p in self.embed.parameters()]
        params += [(f"pos.{n}", p) for n, p in self.pos.parameters()]
        for i, layer in enumerate(self.layers):
            params += [(f"layers.{i}.{n}", p) for n, p in layer.parameters()]
        if self.final_norm is not None:
            params += [(f"final_norm.{n}", p) for n, p in self.final_norm.parameters()]
        return params

    def zero_all(self):
        """Zero every sublayer weight; keeps norm gains at their values."""
        for name, p in self.parameters():
            if ".attn." in name and "gain" not in name:
                p.data[...] = 0.0
            if "ffn" in name:
                p.data[...] = 0.0


def parameter_fingerprint(params) -> str:
    """SHA-256 over names and raw parameter bytes, order-sensitive."""
    digest = hashlib.sha256()
    for name, p in params:
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def save_checkpoint(path, params, config_echo: dict):
    """Write named parameters and a config echo to one JSON file."""
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_echo,
        "params": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in params
        },
    }
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint, returning (config echo, name -> ndarray)."""
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    version = blob.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version!r}")
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in blob["params"].items()
    }
    return blob["config"], arrays


def restore_parameters(params, arrays: dict):
    """Load checkpoint arrays into live parameters, strict on names/shapes."""
    names = [n for n, _ in params]
    missing = set(arrays) ^ set(names)
    if missing:
        raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
    for name, p in params:
        arr = arrays[name]
        if arr.shape != p.shape:
            raise ShapeError(f"checkpoint {name} has shape {arr.shape}, model {p.shape}")
        p.data[...] = arr
