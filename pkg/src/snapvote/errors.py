"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss becomes NaN or infinite during training.

    Attributes:
        epoch: the epoch in which the non-finite loss appeared.
        last_good_epoch: the most recent fully completed epoch (0 if none).
    """

    def __init__(self, epoch, last_good_epoch, stage="train"):
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch
        self.stage = stage
        super().__init__(
            f"{stage}: non-finite loss at epoch {epoch} "
            f"(last good epoch: {last_good_epoch})"
        )


class EnsembleError(ValueError):
    """Raised when an ensemble cannot be formed from the available snapshots."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


class FormatError(ValueError):
    """Raised when a persisted file does not match the expected layout."""
