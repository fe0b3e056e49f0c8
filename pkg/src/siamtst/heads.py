"""Forecast head and frozen-backbone fine-tuning.

The head is one linear layer per horizon, shared across channels: each
channel's encoded representation is flattened to a ``d_model * K`` vector
and mapped to the horizon. Fine-tuning updates head parameters only; the
backbone stays bit-identical, which lets us encode every training window
once and train the head on cached features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone
from .layers import Linear, patch_rows, revin_denormalize, revin_normalize
from .optim import Adam, check_finite
from .tensor import Tensor, no_grad, swap_last


class ForecastHead:
    """Linear map from flattened channel representation to one horizon."""

    def __init__(self, repr_dim: int, horizon: int,
                 rng: np.random.Generator | None = None):
        self.horizon = horizon
        self.linear = Linear(repr_dim, horizon, bias=True, rng=rng)

    def __call__(self, flat: Tensor) -> Tensor:
        return self.linear(flat)

    def parameters(self):
        return [(f"head.{n}", p) for n, p in self.linear.parameters()]


def flatten_tokens(tokens: Tensor) -> Tensor:
    """Flatten ``[..., K, D]`` tokens to ``[..., D*K]`` vectors.

    The order is feature-major (all patches of feature 0, then feature 1,
    ...), i.e. the row-major flattening of the ``[D, K]`` representation.
    """
    z = swap_last(tokens)  # [..., D, K]
    return z.reshape(z.shape[:-2] + (z.shape[-1] * z.shape[-2],))


def forecast_batch(windows: np.ndarray, backbone: Backbone, head: ForecastHead,
                   revin_eps: float = 1e-5) -> np.ndarray:
    """Forecast ``[..., N, L]`` windows, returning ``[..., N, H]``.

    Pipeline: instance-normalize, encode channel-independently, flatten,
    apply the head, undo the instance normalization.
    """
    normed, state = revin_normalize(windows, eps=revin_eps)
    with no_grad():
        tokens = backbone.encode_window(normed)
        preds = head(flatten_tokens(tokens))
    return revin_denormalize(preds.data, state)


def forecast(x, backbone: Backbone, head: ForecastHead,
             revin_eps: float = 1e-5) -> np.ndarray:
    """Single-window surface: ``[N, L] -> [N, H]``."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return forecast_batch(data, backbone, head, revin_eps=revin_eps)


@dataclass
class FinetuneResult:
    head: ForecastHead
    log: list = field(default_factory=list)


def encode_features(windows: np.ndarray, backbone: Backbone, batch_size: int = 64,
                    revin_eps: float = 1e-5):
    """Cache flattened representations and instance states for windows.

    Returns (features ``[num, N, D*K]``, states) computed without a tape;
    valid as long as the backbone is frozen.
    """
    normed, state = revin_normalize(windows, eps=revin_eps)
    chunks = []
    with no_grad():
        for start in range(0, windows.shape[0], batch_size):
            tokens = backbone.encode_window(normed[start:start + batch_size])
            chunks.append(flatten_tokens(tokens).data)
    return np.concatenate(chunks, axis=0), state


def finetune(windows: np.ndarray, targets: np.ndarray, backbone: Backbone,
             horizon: int, *, epochs: int, batch_size: int, lr: float,
             seed: int, revin_eps: float = 1e-5,
             unfreeze_backbone: bool = False) -> FinetuneResult:
    """Train a forecast head on (window, next-horizon) pairs.

    ``windows`` is ``[num, N, L]``, ``targets`` ``[num, N, H]``. The loss
    is MSE on the instance-normalized scale. The backbone is left frozen
    (verified by fingerprint in the tests); the unfreeze flag exists for
    experimentation and bypasses the feature cache.
    """
    if windows.shape[0] == 0:
        raise ValueError("finetune: empty training set")
    rng = np.random.default_rng(seed)
    head = ForecastHead(backbone.repr_dim, horizon, rng=rng)
    if unfreeze_backbone:
        return _finetune_unfrozen(windows, targets, backbone, head, epochs=epochs,
                                  batch_size=batch_size, lr=lr, rng=rng,
                                  revin_eps=revin_eps)

    features, state = encode_features(windows, backbone, batch_size=batch_size,
                                      revin_eps=revin_eps)
    # Targets on the same per-window instance scale the head predicts in.
    target_norm = (targets - state.mean[..., None]) / state.std[..., None]
    num = windows.shape[0]
    opt = Adam([p for _, p in head.parameters()], lr=lr)
    log = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(num)
        total = 0.0
        n_batches = 0
        for start in range(0, num, batch_size):
            idx = order[start:start + batch_size]
            pred = head(Tensor(features[idx]))
            diff = pred - Tensor(target_norm[idx])
            loss = (diff * diff).mean()
            check_finite(loss.item(), f"finetune epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
        log.append({"epoch": epoch, "mse": total / n_batches})
    return FinetuneResult(head=head, log=log)


def _finetune_unfrozen(windows, targets, backbone, head, *, epochs, batch_size,
                       lr, rng, revin_eps):
    normed, state = revin_normalize(windows, eps=revin_eps)
    target_norm = (targets - state.mean[..., None]) / state.std[..., None]
    patches = patch_rows(normed, backbone.patch_len)
    params = backbone.parameters() + head.parameters()
    opt = Adam([p for _, p in params], lr=lr)
    num = windows.shape[0]
    log = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(num)
        total = 0.0
        n_batches = 0
        for start in range(0, num, batch_size):
            idx = order[start:start + batch_size]
            tokens = backbone.encode_tokens(Tensor(patches[idx]))
            pred = head(flatten_tokens(tokens))
            diff = pred - Tensor(target_norm[idx])
            loss = (diff * diff).mean()
            check_finite(loss.item(), f"finetune epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
        log.append({"epoch": epoch, "mse": total / n_batches})
    return FinetuneResult(head=head, log=log)
