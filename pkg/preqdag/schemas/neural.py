from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Tuple


class MlpCpdConfig(BaseModel):
    """Hyperparameters of the discretized-softmax MLP conditional model"""
    hidden_layers: int = Field(default=3, ge=1)
    hidden_width: int = Field(default=512, ge=1)
    dropout_rate: float = Field(default=0.5, ge=0.0, lt=1.0)
    fourier_features: int = Field(default=512, ge=1)
    fourier_scale: float = Field(default=10.0, gt=0.0)  # std of the frequencies
    num_bins: int = Field(default=128, ge=2)
    batch_size: int = Field(default=128, ge=1)
    learning_rates: Tuple[float, ...] = (1e-4, 3e-4)
    max_steps: int = Field(default=25_000, ge=1)
    theta_steps_per_beta_step: int = Field(default=10, ge=1)
    beta_learning_rate: float = Field(default=1e-2, gt=0.0)
    validation_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    max_validation_rows: int = Field(default=1024, ge=1)
    eval_every: int = Field(default=100, ge=1)
    patience: int = Field(default=10, ge=1)
    min_improvement: float = Field(default=1e-4, ge=0.0)

    @field_validator("learning_rates")
    @classmethod
    def learning_rates_positive(cls, rates: Tuple[float, ...]) -> Tuple[float, ...]:
        if not rates or any(rate <= 0 for rate in rates):
            raise ValueError("learning_rates must be a nonempty tuple of positive values")
        return rates

    @model_validator(mode="after")
    def eval_within_budget(self) -> "MlpCpdConfig":
        if self.eval_every > self.max_steps:
            self.eval_every = self.max_steps
        return self
