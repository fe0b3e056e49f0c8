"""Reference forecasters: LinearNet, ridge regression, persistence.

LinearNet is the bare forecast head run directly on embedded patches with
no encoder layers; structurally it equals the full model with zero
encoder depth. Ridge regression forecasts from learned representations
via the closed-form normal equations over a fixed regularization grid.
Persistence repeats the last seasonal period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heads import ForecastHead, flatten_tokens
from .layers import (Linear, PositionalEncoding, embed_tokens,
                     patch_rows, revin_denormalize, revin_normalize)
from .optim import Adam, check_finite
from .tensor import ShapeError, Tensor, no_grad

RIDGE_LAMBDA_GRID = (0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


class LinearNet:
    """Patch-embed, flatten, one linear output layer; channel-independent."""

    def __init__(self, patch_len: int, num_patches: int, d_model: int,
                 horizon: int, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.patch_len = patch_len
        self.num_patches = num_patches
        self.d_model = d_model
        self.horizon = horizon
        self.embed = Linear(patch_len, d_model, bias=True, rng=rng)
        self.pos = PositionalEncoding(d_model, num_patches, rng=rng)
        self.head = ForecastHead(d_model * num_patches, horizon, rng=rng)

    def forward_normed(self, normed: np.ndarray) -> Tensor:
        """Predict on already instance-normalized windows ``[..., N, L]``."""
        rows = patch_rows(normed, self.patch_len)
        if rows.shape[-2] != self.num_patches:
            raise ShapeError(
                f"window yields {rows.shape[-2]} patches, model expects {self.num_patches}")
        tokens = embed_tokens(Tensor(rows), self.embed, self.pos)
        return self.head(flatten_tokens(tokens))

    def forecast(self, x, revin_eps: float = 1e-5) -> np.ndarray:
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        normed, state = revin_normalize(data, eps=revin_eps)
        with no_grad():
            pred = self.forward_normed(normed)
        return revin_denormalize(pred.data, state)

    def parameters(self):
        params = [(f"embed.{n}", p) for n, p in self.embed.parameters()]
        params += [(f"pos.{n}", p) for n, p in self.pos.parameters()]
        params += self.head.parameters()
        return params


def linearnet_forecast(x, net: LinearNet, revin_eps: float = 1e-5) -> np.ndarray:
    return net.forecast(x, revin_eps=revin_eps)


@dataclass
class LinearNetResult:
    net: LinearNet
    log: list = field(default_factory=list)


def train_linearnet(windows: np.ndarray, targets: np.ndarray, net: LinearNet, *,
                    epochs: int, batch_size: int, lr: float, seed: int,
                    revin_eps: float = 1e-5) -> LinearNetResult:
    """Supervised MSE training of all LinearNet parameters."""
    if windows.shape[0] == 0:
        raise ValueError("train_linearnet: empty training set")
    rng = np.random.default_rng(seed)
    normed, state = revin_normalize(windows, eps=revin_eps)
    target_norm = (targets - state.mean[..., None]) / state.std[..., None]
    opt = Adam([p for _, p in net.parameters()], lr=lr)
    num = windows.shape[0]
    log = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(num)
        total = 0.0
        n_batches = 0
        for start in range(0, num, batch_size):
            idx = order[start:start + batch_size]
            pred = net.forward_normed(normed[idx])
            diff = pred - Tensor(target_norm[idx])
            loss = (diff * diff).mean()
            check_finite(loss.item(), f"linearnet epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
        log.append({"epoch": epoch, "mse": total / n_batches})
    return LinearNetResult(net=net, log=log)


# -- ridge regression -------------------------------------------------------


@dataclass
class RidgeModel:
    """Closed-form multi-output ridge solution with intercept."""

    coef: np.ndarray        # [features, outputs]
    intercept: np.ndarray   # [outputs]
    lam: float
    val_mse: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept


def _ridge_solve(x: np.ndarray, y: np.ndarray, lam: float):
    """Solve (X'X + lam I) beta = X'y on centered data; returns beta, means."""
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    beta = np.linalg.solve(gram, xc.T @ yc)
    return beta, x_mean, y_mean


def ridge_fit(x_train: np.ndarray, y_train: np.ndarray,
              x_val: np.ndarray, y_val: np.ndarray,
              lambda_grid=RIDGE_LAMBDA_GRID) -> RidgeModel:
    """Fit on train for every lambda in the grid; pick by validation MSE.

    The model is fit on the training observations only; the grid value
    minimizing validation MSE wins (no refit on train+val).
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if x_train.ndim != 2 or x_train.shape[0] < 2:
        raise ValueError(f"ridge needs >= 2 training observations, got {x_train.shape}")
    if x_val is None or len(x_val) == 0:
        raise ValueError("ridge needs a non-empty validation split")
    best = None
    for lam in lambda_grid:
        beta, x_mean, y_mean = _ridge_solve(x_train, y_train, float(lam))
        intercept = y_mean - x_mean @ beta
        pred = x_val @ beta + intercept
        mse = float(np.mean((pred - y_val) ** 2))
        if best is None or mse < best.val_mse:
            best = RidgeModel(coef=beta, intercept=intercept, lam=float(lam), val_mse=mse)
    return best


# -- persistence ------------------------------------------------------------


def persistence_forecast(x, horizon: int, period: int = 24) -> np.ndarray:
    """Repeat each channel's last full period until the horizon is filled."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.shape[-1] < period:
        raise ShapeError(
            f"persistence needs at least one period ({period}), got {data.shape[-1]} steps")
    last = data[..., -period:]
    reps = int(np.ceil(horizon / period))
    tiled = np.concatenate([last] * reps, axis=-1)
    return tiled[..., :horizon]
