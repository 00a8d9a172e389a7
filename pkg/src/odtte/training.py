"""Adam, the step learning-rate schedule, early stopping and the training loop."""

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .architectures import Model
from .autograd import Parameter, backward, zero_grad
from .config import TrainConfig
from .early_stopping import EarlyStopping
from .errors import ContractError, DivergenceError, NumericalError
from .layers import mse_loss
from .logger import RunLogger, null_logger
from .schema import EpochRecord, TrainHistory


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the step count."""
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "AdamState":
        return cls(beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
) -> AdamState:
    """One bias-corrected Adam update. Parameter values are replaced, not mutated.

    A missing gradient counts as zero. Raises NumericalError naming the first
    parameter whose gradient is not finite, before anything is updated.
    """
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    grads = [np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64)
             for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.value.shape:
            raise ContractError(f"gradient for {p.name} has shape {g.shape}, expected {p.value.shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {p.name}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for p, g in zip(params, grads):
        key = p.name
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[key] = np.zeros_like(p.value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)
        state.m[key], state.v[key] = m, v
        p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """initial_lr halved every ``lr_halving_period`` epochs; ``epoch`` counts from 0."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return cfg.initial_lr * 0.5 ** (epoch // cfg.lr_halving_period)


def early_stop(history: Union[TrainHistory, Sequence[float]], patience: int) -> bool:
    """True once the last ``patience`` epochs brought no strict improvement."""
    losses = history.val_losses() if isinstance(history, TrainHistory) else list(history)
    if not losses:
        raise ContractError("early_stop needs a non-empty history")
    best_idx = losses.index(min(losses))
    return len(losses) - 1 - best_idx >= patience


def evaluate_mse(model: Model, features: np.ndarray, targets: np.ndarray, batch_size: int = 1024) -> float:
    """Mean squared error of the model over a whole set, without recording."""
    if len(targets) == 0:
        raise ContractError("cannot evaluate on an empty set")
    diff = model.predict(features, batch_size=batch_size) - np.asarray(targets, dtype=np.float64)
    return float(np.dot(diff, diff) / diff.size)


@dataclass
class TrainResult:
    model: Model
    history: TrainHistory
    stop_reason: str

    @property
    def best_epoch(self) -> int:
        return self.history.best_epoch


def train(
    model: Model,
    train_set: Tuple[np.ndarray, np.ndarray],
    val_set: Tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    logger: Optional[RunLogger] = None,
) -> TrainResult:
    """Mini-batch Adam on MSE with per-epoch shuffling and early stopping.

    ``train_set`` and ``val_set`` are (features (N, 12), targets (N,)) pairs.
    The last partial batch is kept. On stop the parameters of the best
    validation epoch are restored, except when ``target_train_mse`` was
    reached, in which case the final parameters are kept. On divergence the
    best parameters are restored before ``DivergenceError`` is raised.
    """
    logger = logger or null_logger()
    x_train, y_train = (np.asarray(a, dtype=np.float64) for a in train_set)
    x_val, y_val = (np.asarray(a, dtype=np.float64) for a in val_set)
    n = len(y_train)
    if n == 0:
        raise ContractError("training set is empty")
    if len(y_val) == 0:
        raise ContractError("validation set is empty")

    params = model.parameters()
    state = AdamState.from_config(cfg)
    stopper = EarlyStopping(cfg.patience)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_state = model.state_dict()
    stop_reason = "max_epochs"

    logger.info(f"Training {model.spec.name}: {n} train / {len(y_val)} validation samples, "
                f"{model.count_params():,} parameters")

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        lr = lr_at(epoch - 1, cfg)
        perm = rng.permutation(n)
        running = 0.0

        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            zero_grad(params)
            loss = mse_loss(model.forward(x_train[idx]), y_train[idx].reshape(-1, 1))
            value = loss.item()
            if not math.isfinite(value):
                model.load_state_dict(best_state)
                raise DivergenceError(f"training loss became {value} in epoch {epoch}",
                                      epoch=epoch, last_good=best_state)
            backward(loss)
            adam_step(params, [p.grad for p in params], state, lr)
            running += value * len(idx)

        train_mse = running / n
        if cfg.target_train_mse is not None:
            train_mse = evaluate_mse(model, x_train, y_train)
        val_mse = evaluate_mse(model, x_val, y_val)
        if not math.isfinite(val_mse):
            model.load_state_dict(best_state)
            raise DivergenceError(f"validation loss became {val_mse} in epoch {epoch}",
                                  epoch=epoch, last_good=best_state)

        improved = stopper.record(val_mse)
        if improved:
            best_state = model.state_dict()
        seconds = time.perf_counter() - started
        history.append(EpochRecord(epoch, train_mse, val_mse, lr, seconds))
        logger.log_epoch(epoch, train_mse, val_mse, lr, seconds, improved)

        if cfg.target_train_mse is not None and train_mse < cfg.target_train_mse:
            stop_reason = "target_train_mse"
            break
        if stopper.should_stop():
            stop_reason = "early_stopping"
            logger.info(stopper.get_status().reason)
            break

    if stop_reason != "target_train_mse":
        model.load_state_dict(best_state)
    history.stop_reason = stop_reason
    logger.success(f"Stopped after {len(history)} epochs ({stop_reason}); "
                   f"best epoch {history.best_epoch} val_mse={history.best_val_mse:.5f}")
    return TrainResult(model=model, history=history, stop_reason=stop_reason)
