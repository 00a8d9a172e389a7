"""Differentiable layers on (batch, length, channels) tensors.

Convolutions are cross-correlations (no kernel flip) with same zero padding
and stride 1, so the spatial length is preserved. Max pooling uses window 2,
stride 2 and drops a trailing odd element.
"""

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from scipy.special import expit

from .autograd import Parameter, Tensor, as_array, lift
from .errors import ContractError, ShapeError


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv1dParams:
    """Kernel of shape (kernel_size, C_in, C_out) and a bias of length C_out."""
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 3:
            raise ShapeError(f"conv kernel must be rank 3, got {self.weight.shape}")
        if self.weight.shape[0] % 2 != 1:
            raise ShapeError("conv kernel size must be odd for same padding")
        if self.bias.shape != (self.weight.shape[2],):
            raise ShapeError(f"conv bias {self.bias.shape} does not match kernel {self.weight.shape}")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator,
             kernel_size: int = 3, name: str = "conv") -> "Conv1dParams":
        shape = (kernel_size, c_in, c_out)
        weight = glorot_uniform(shape, kernel_size * c_in, kernel_size * c_out, rng)
        return cls(Parameter(weight, name=f"{name}.weight"),
                   Parameter(np.zeros(c_out), name=f"{name}.bias"))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


@dataclass
class DenseParams:
    """Weights (n_in, n_out) and an optional bias (n_out)."""
    weight: Tensor
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"dense weight must be rank 2, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"dense bias {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator,
             bias: bool = True, name: str = "dense") -> "DenseParams":
        weight = Parameter(glorot_uniform((n_in, n_out), n_in, n_out, rng), name=f"{name}.weight")
        b = Parameter(np.zeros(n_out), name=f"{name}.bias") if bias else None
        return cls(weight, b)

    def parameters(self) -> List[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


def _require_rank(x: Tensor, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op} expects a rank-{rank} tensor, got shape {x.shape}")


def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """y[b,i,o] = bias[o] + sum_k sum_c x[b,i+k,c] * W[k+pad,c,o], zero outside."""
    _require_rank(x, 3, "conv1d")
    B, L, C = x.shape
    if C != p.in_channels:
        raise ShapeError(f"conv1d input has {C} channels, kernel expects {p.in_channels}")
    k, c_out = p.kernel_size, p.out_channels
    pad = (k - 1) // 2

    padded = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([padded[:, j:j + L, :] for j in range(k)], axis=2).reshape(B * L, k * C)
    w = p.weight.value.reshape(k * C, c_out)
    out = (cols @ w + p.bias.value).reshape(B, L, c_out)

    def rule(g):
        g2 = g.reshape(B * L, c_out)
        dw = (cols.T @ g2).reshape(k, C, c_out)
        db = g2.sum(axis=0)
        dcols = (g2 @ w.T).reshape(B, L, k, C)
        dpadded = np.zeros((B, L + 2 * pad, C))
        for j in range(k):
            dpadded[:, j:j + L, :] += dcols[:, :, j, :]
        return dpadded[:, pad:pad + L, :], dw, db

    return Tensor(out, (x, p.weight, p.bias), rule)


def maxpool1d(x: Tensor) -> Tensor:
    """Window 2, stride 2; ties route the gradient to the earlier position."""
    _require_rank(x, 3, "maxpool1d")
    B, L, C = x.shape
    if L < 2:
        raise ShapeError(f"maxpool1d needs length >= 2, got {L}")
    half = L // 2
    windows = x.value[:, :2 * half, :].reshape(B, half, 2, C)
    winner = np.argmax(windows, axis=2)  # first occurrence on ties
    out = np.take_along_axis(windows, winner[:, :, None, :], axis=2)[:, :, 0, :]

    def rule(g):
        dwindows = np.zeros((B, half, 2, C))
        np.put_along_axis(dwindows, winner[:, :, None, :], g[:, :, None, :], axis=2)
        dx = np.zeros((B, L, C))
        dx[:, :2 * half, :] = dwindows.reshape(B, 2 * half, C)
        return (dx,)

    return Tensor(out, (x,), rule)


def dense(x: Tensor, p: DenseParams) -> Tensor:
    """y = x W + bias on a (batch, n_in) tensor."""
    _require_rank(x, 2, "dense")
    if x.shape[1] != p.n_in:
        raise ShapeError(f"dense input width {x.shape[1]} does not match weight {p.weight.shape}")
    xv, w = x.value, p.weight.value
    out = xv @ w
    if p.bias is not None:
        out = out + p.bias.value

    def rule(g):
        grads = (g @ w.T, xv.T @ g)
        if p.bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return Tensor(out, parents, rule)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    mask = x.value > 0

    def rule(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.value, 0.0), (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.value)

    def rule(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, (x,), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over the length axis: (B, L, C) -> (B, C)."""
    _require_rank(x, 3, "global_avg_pool")
    B, L, C = x.shape

    def rule(g):
        return (np.broadcast_to(g[:, None, :] / L, (B, L, C)).copy(),)

    return Tensor(x.value.mean(axis=1), (x,), rule)


def channel_scale(x: Tensor, e: Tensor) -> Tensor:
    """y[b,i,c] = e[b,c] * x[b,i,c]."""
    _require_rank(x, 3, "channel_scale")
    _require_rank(e, 2, "channel_scale")
    if e.shape != (x.shape[0], x.shape[2]):
        raise ShapeError(f"channel_scale factors {e.shape} do not match input {x.shape}")
    xv, ev = x.value, e.value

    def rule(g):
        return g * ev[:, None, :], (g * xv).sum(axis=1)

    return Tensor(xv * ev[:, None, :], (x, e), rule)


def flatten(x: Tensor) -> Tensor:
    """(B, ...) -> (B, prod(...))."""
    B = x.shape[0]
    return x.reshape((B, int(np.prod(x.shape[1:]))))


def mse_loss(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """(1/B) sum (y_i - f_i)^2 as a scalar tensor."""
    target = lift(target) if isinstance(target, Tensor) else Tensor(as_array(target))
    if pred.shape[0] == 0:
        raise ContractError("mse_loss on an empty batch")
    if pred.size != target.size or pred.shape[0] != target.shape[0]:
        raise ShapeError(f"mse_loss shapes {pred.shape} and {target.shape} differ")
    diff = pred.value.reshape(-1) - target.value.reshape(-1)
    n = diff.size

    def rule(g):
        d = (2.0 / n) * g * diff
        return d.reshape(pred.shape), (-d).reshape(target.shape)

    return Tensor(np.dot(diff, diff) / n, (pred, target), rule)
