from __future__ import annotations

from dataclasses import asdict, dataclass, field

from stepcast.dataset import OUTCOMES, WINDOW_SIZES, ConfigurationError

LSTM_ARCHITECTURES = ("lstm_early", "lstm_late", "lstm_engagement", "lstm_activity")
LINREG_ARCHITECTURES = ("linreg_multimodal", "linreg_engagement", "linreg_activity")
ARCHITECTURES = LSTM_ARCHITECTURES + LINREG_ARCHITECTURES + ("arima",)
HEADS = ("regression", "classification")

# which modalities each architecture reads
MODALITIES = {
    "lstm_early": ("u", "v"),
    "lstm_late": ("u", "v"),
    "lstm_engagement": ("u",),
    "lstm_activity": ("v",),
    "linreg_multimodal": ("u", "v"),
    "linreg_engagement": ("u",),
    "linreg_activity": ("v",),
    "arima": ("v",),
}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "lstm_early"
    window: int = 7
    hidden_size: int = 64
    late_hidden_size: int = 32
    late_decision_size: int = 16
    head: str = "regression"
    threshold: float | None = None
    outcome: str = "steps"
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 32
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    arima_order: tuple = (1, 1, 1)
    ridge: float = 1e-6
    strict_window: bool = True

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}")
        if self.strict_window and self.window not in WINDOW_SIZES:
            raise ConfigurationError(f"window must be one of {WINDOW_SIZES}, got {self.window}")
        if self.window <= 0:
            raise ConfigurationError("window must be positive")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head {self.head!r}")
        if self.head == "classification":
            if self.threshold is None:
                raise ConfigurationError("classification head needs a steps threshold")
            if self.architecture not in LSTM_ARCHITECTURES:
                raise ConfigurationError("classification heads exist only for LSTM architectures")
        if self.outcome not in OUTCOMES:
            raise ConfigurationError(f"unknown outcome {self.outcome!r}")
        if min(self.hidden_size, self.late_hidden_size, self.late_decision_size) < 1:
            raise ConfigurationError("layer sizes must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("batch_size, max_epochs and patience must be positive")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("learning_rate and clip_norm must be positive")
        order = tuple(int(k) for k in self.arima_order)
        if len(order) != 3 or min(order) < 0:
            raise ConfigurationError(f"ARIMA order must be three non-negative integers, got {self.arima_order}")
        object.__setattr__(self, "arima_order", order)

    @property
    def modalities(self) -> tuple[str, ...]:
        return MODALITIES[self.architecture]

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arima_order"] = list(self.arima_order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "arima_order" in d:
            d["arima_order"] = tuple(d["arima_order"])
        return cls(**d)


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingLog":
        return cls(**d)
