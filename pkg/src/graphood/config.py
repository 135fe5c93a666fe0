"""Pipeline configuration and defaults."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .data import SyntheticSpec
from .errors import ValidationError

INFONCE_FORMS = ("printed", "split")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.15
    beta: float = 0.5
    gamma: float = 1e-4

    def validate(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v not in (float("inf"),)):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 10
    # Minimum subgraph count before the hierarchy stops merging. Like the
    # reference experiments' per-dataset subgraph budget (~2.5% of the sample
    # count), this default matches the default synthetic benchmark (N=500);
    # set it per dataset, or to None to rely on convergence alone.
    k_target: int | None = 12
    p_tau: float = 0.3
    rho: float = 0.5
    temperature: float = 1.0
    delta: float = 0.7
    alpha: float = 0.15
    beta: float = 0.5
    gamma: float = 1e-4
    max_levels: int = 10
    max_epochs: int = 50
    lr: float = 0.05
    scorer_lr: float = 0.1
    scorer_steps: int = 15
    hidden_dim: int = 64
    noise_sigma: float = 0.1
    drop_prob: float = 0.1
    infonce_form: str = "printed"
    tol: float = 1e-5
    patience: int = 5
    seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def weights(self):
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)

    def validate(self):
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.max_levels < 1:
            raise ValidationError(f"max_levels must be >= 1, got {self.max_levels}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.k_target is not None and self.k_target < 1:
            raise ValidationError(f"k_target must be >= 1, got {self.k_target}")
        if not 0.0 <= self.p_tau <= 1.0:
            raise ValidationError(f"p_tau must lie in [0, 1], got {self.p_tau}")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must be strictly between 0 and 1, got {self.rho}")
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not self.scorer_lr > 0:
            raise ValidationError(f"scorer_lr must be > 0, got {self.scorer_lr}")
        if self.scorer_steps < 1:
            raise ValidationError(f"scorer_steps must be >= 1, got {self.scorer_steps}")
        if self.hidden_dim < 1:
            raise ValidationError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValidationError(f"drop_prob must lie in [0, 1), got {self.drop_prob}")
        if self.infonce_form not in INFONCE_FORMS:
            raise ValidationError(
                f"infonce_form must be one of {INFONCE_FORMS}, got {self.infonce_form!r}"
            )
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if not self.tol >= 0:
            raise ValidationError(f"tol must be >= 0, got {self.tol}")
        self.weights().validate()


def config_field_names():
    return [f.name for f in fields(PipelineConfig) if f.name != "synthetic"]
