"""Energy-guided diffusion for unpaired rain-streak removal on toy images.

Train a score model on a clean domain and a pair of domain prompts on
unpaired rainy/clean sets, then run an energy-guided reverse VP-SDE that
strips the synthetic rain while holding on to the content. Every module is
deterministic under its seed and checkable against closed-form oracles.
"""

from .energy import EnergyConfig, content_energy, domain_energy, energy_gradient, total_energy
from .errors import (CheckpointError, ConfigError, DegenerateEmbeddingError,
                     DimensionError, DivergenceError, DomainError, FileFormatError,
                     RainDiffError)
from .features import (FeatureEncoder, PromptPair, classify_clean, prompt_accuracy,
                       prompt_probability, train_prompts)
from .sampler import (Guidance, SamplerConfig, euler_maruyama_step, euler_maruyama_update,
                      initialize, sample, vp_step, vp_update)
from .scorenet import ScoreNetwork, TrainConfig, gaussian_oracle_score, train_score_model
from .sde import DiffusionSchedule
from .toyworld import DomainSpec, cluster_filter, corrupt, make_clean

__all__ = [
    "CheckpointError", "ConfigError", "DegenerateEmbeddingError", "DiffusionSchedule",
    "DimensionError", "DivergenceError", "DomainError", "DomainSpec", "EnergyConfig",
    "FeatureEncoder", "FileFormatError", "Guidance", "PromptPair", "RainDiffError",
    "SamplerConfig", "ScoreNetwork", "TrainConfig", "classify_clean", "cluster_filter",
    "content_energy", "corrupt", "domain_energy", "energy_gradient",
    "euler_maruyama_step", "euler_maruyama_update", "gaussian_oracle_score",
    "initialize", "make_clean", "prompt_accuracy", "prompt_probability", "sample",
    "total_energy", "train_prompts", "train_score_model", "vp_step", "vp_update",
]

__version__ = "0.1.0"
