"""Dual-term guidance energy: discard domain features, preserve content.

The energy attached to the reverse sampler is a weighted sum of two terms
evaluated against a reference image drawn from the forward kernel:

* domain term: the negative-prompt softmax probabilities of the reference
  and of the current sample. Driving it down pushes the sample toward the
  clean domain as seen by the trained prompts.
* content term: the layer-weighted sum of Euclidean distances between the
  encoder features of sample and reference. Driving it down keeps the
  sample's content aligned with the input.

Both terms are differentiated exactly through the encoder, the
cosine-softmax and the per-layer norms; the reference's own probability is
constant in the sample and contributes nothing to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import FeatureEncoder, PromptPair, prompt_probability
from .numerics import cosine_similarity
from .sde import DiffusionSchedule


@dataclass(frozen=True)
class EnergyConfig:
    """Weights and switches of the guidance energy.

    lambda1 scales the domain term, lambda2 the content term;
    `layer_weights` must have one entry per encoder layer. With
    `perturb_reference` the reference is a fresh kernel draw x_t at the
    sampler's current time (one Monte Carlo sample per step); without it
    the raw input x_0 is compared against directly.

    `squared_norms` (square each layer distance) and `negate_content_term`
    (flip the content term's sign in the combination) are ablation hooks,
    both off by default.
    """

    lambda1: float = 73.0
    lambda2: float = 0.72
    layer_weights: tuple[float, ...] = (0.5, 1.0, 1.0, 1.0, 1.0)
    perturb_reference: bool = True
    squared_norms: bool = False
    negate_content_term: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("energy weights must be non-negative")
        if len(self.layer_weights) == 0:
            raise ConfigError("layer_weights must be non-empty")

    @property
    def m(self) -> int:
        return len(self.layer_weights)

    @property
    def guided(self) -> bool:
        return self.lambda1 + self.lambda2 > 0


def _check_layers(encoder: FeatureEncoder, config: EnergyConfig) -> None:
    if config.m != encoder.depth:
        raise ConfigError(
            f"layer_weights has {config.m} entries but encoder has {encoder.depth} layers")


def domain_energy(y, x_ref, encoder: FeatureEncoder, prompts: PromptPair) -> float:
    """Negative-prompt probability of the reference plus that of the sample.

    Always lies in [0, 2]; low values mean both look clean to the prompts.
    """
    return (prompt_probability(encoder, x_ref, prompts, "negative")
            + prompt_probability(encoder, y, prompts, "negative"))


def content_energy(y, x_ref, encoder: FeatureEncoder, config: EnergyConfig) -> float:
    """Layer-weighted mean of feature distances between sample and reference.

    (1/m) * sum_k w_k * ||E_k(y) - E_k(x_ref)||_2, or the squared variant
    when config.squared_norms is set. Zero iff the feature stacks agree.
    """
    _check_layers(encoder, config)
    taps_y = encoder.forward_taps(y)
    taps_x = encoder.forward_taps(x_ref)
    total = 0.0
    for w_k, a_y, a_x in zip(config.layer_weights, taps_y, taps_x):
        dist = float(np.linalg.norm(a_y - a_x))
        total += w_k * (dist * dist if config.squared_norms else dist)
    return total / config.m


def total_energy(y, x0, t, schedule: DiffusionSchedule, encoder: FeatureEncoder,
                 prompts: PromptPair | None, config: EnergyConfig,
                 rng: np.random.Generator):
    """Weighted energy at time t, drawing the reference if configured.

    Returns (value, x_ref) so the caller can reuse the single reference
    draw for the gradient of the same step. The generator is consumed only
    when perturb_reference is set.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if config.perturb_reference:
        x_ref = schedule.perturb(x0, t, rng.standard_normal(x0.shape))
    else:
        x_ref = x0
    value = 0.0
    if config.lambda1 > 0:
        value += config.lambda1 * domain_energy(y, x_ref, encoder, prompts)
    if config.lambda2 > 0:
        sign = -1.0 if config.negate_content_term else 1.0
        value += sign * config.lambda2 * content_energy(y, x_ref, encoder, config)
    return value, x_ref


def energy_gradient(y, x_ref, encoder: FeatureEncoder, prompts: PromptPair | None,
                    config: EnergyConfig) -> np.ndarray:
    """Exact gradient of the weighted energy with respect to the sample.

    The domain term differentiates the sample's negative-prompt softmax
    through cosine similarity and the encoder; the reference's probability
    is constant in y. Each content layer contributes its unit difference
    direction (zero subgradient where the features coincide). One forward
    and one backward pass through the encoder cover both terms.
    """
    y = np.asarray(y, dtype=np.float64)
    if not config.guided:
        return np.zeros_like(y)
    _check_layers(encoder, config)

    taps_y = encoder.forward_taps(y)
    tap_grads: list[np.ndarray | None] = [None] * encoder.depth

    if config.lambda2 > 0:
        sign = -1.0 if config.negate_content_term else 1.0
        taps_x = encoder.forward_taps(x_ref)
        for k, (w_k, a_y, a_x) in enumerate(zip(config.layer_weights, taps_y, taps_x)):
            diff = a_y - a_x
            if config.squared_norms:
                g = (sign * config.lambda2 * w_k / config.m) * (2.0 * diff)
            else:
                dist = float(np.linalg.norm(diff))
                if dist == 0.0:
                    continue
                g = (sign * config.lambda2 * w_k / (config.m * dist)) * diff
            tap_grads[k] = g

    if config.lambda1 > 0:
        e = taps_y[-1]
        c_pos = cosine_similarity(e, prompts.p_pos)
        c_neg = cosine_similarity(e, prompts.p_neg)
        exp_p, exp_n = np.exp(c_pos), np.exp(c_neg)
        z_neg = exp_n / (exp_p + exp_n)

        def cos_grad(p, c):
            norm_e = np.linalg.norm(e)
            norm_p = np.linalg.norm(p)
            return p / (norm_e * norm_p) - c * e / (norm_e * norm_e)

        g_embed = (config.lambda1 * z_neg * (1.0 - z_neg)
                   * (cos_grad(prompts.p_neg, c_neg) - cos_grad(prompts.p_pos, c_pos)))
        tap_grads[-1] = g_embed if tap_grads[-1] is None else tap_grads[-1] + g_embed

    return encoder.tap_backprop(y, taps_y, tap_grads)
