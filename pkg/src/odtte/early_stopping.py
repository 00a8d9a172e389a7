"""Patience-based early stopping on validation loss."""

import math
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass
class EarlyStoppingStatus:
    """Status of the early-stopping monitor."""
    epochs_without_improvement: int
    patience: int
    best_loss: float
    best_epoch: int
    should_stop: bool
    reason: str = ""


class EarlyStopping:
    """
    Stops training after ``patience`` consecutive epochs without a strictly
    lower validation loss. Epochs are counted from 1.
    """

    def __init__(self, patience: int = 25):
        if patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.reset()

    def record(self, val_loss: float) -> bool:
        """
        Record one epoch's validation loss.

        Returns:
            True if this epoch improved on the best loss so far
        """
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.epochs_without_improvement = 0
            return True
        self.epochs_without_improvement += 1
        return False

    def should_stop(self) -> bool:
        return self.epochs_without_improvement >= self.patience

    def get_status(self) -> EarlyStoppingStatus:
        should_stop = self.should_stop()
        reason = ""
        if should_stop:
            reason = (f"no improvement for {self.epochs_without_improvement} epochs "
                      f"(best {self.best_loss:.6g} at epoch {self.best_epoch})")
        return EarlyStoppingStatus(
            epochs_without_improvement=self.epochs_without_improvement,
            patience=self.patience,
            best_loss=self.best_loss,
            best_epoch=self.best_epoch,
            should_stop=should_stop,
            reason=reason,
        )

    def reset(self) -> None:
        self.epoch = 0
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_without_improvement = 0
