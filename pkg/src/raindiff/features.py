"""Frozen feature encoder and learnable domain prompts.

The encoder is a fixed randomly-initialised tanh MLP whose post-activation
layer outputs serve two purposes: the final 32-dim embedding feeds a
two-way softmax over cosine similarities to a pair of learnable prompt
vectors (one per domain), and the full stack of layer features measures
content distance between two samples.

The prompts are the only trainable parameters here. They are fit with a
binary cross-entropy loss on unpaired rainy/clean collections: label 0 for
rainy, 1 for clean, prediction probability z_hat(v, p_pos). Prompt
gradients are computed in closed form (cosine + softmax chain) so they can
be verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, DegenerateEmbeddingError, DimensionError,
                     DivergenceError, DomainError)
from .numerics import cosine_similarity, orthogonal
from .optim import Adam
from .scorenet import TrainConfig

DEFAULT_LAYER_DIMS = (64, 64, 64, 64, 32)
DEFAULT_LAYER_GAINS = (0.8, 0.8, 0.8, 0.8, 0.8)
DEFAULT_CHANNEL_GAINS = (0.9, 1.8)


def _smooth_filter_bank(rng: np.random.Generator, d_in: int, d_out: int,
                        sigma: float, gain: float,
                        smooth_fraction: float = 0.5) -> np.ndarray:
    """Orthonormal first-layer filters mixing smooth and broadband channels.

    The first `smooth_fraction` of the columns are white noise low-passed
    by a periodic Gaussian of width sigma (they respond to image content
    and shrug off pixel noise); the rest stay broadband white (they keep
    fine detail such as streaks visible to the feature distances). QR over
    the concatenation orthonormalises the bank while preserving the smooth
    leading block. Requires d_in to be a perfect square.
    """
    size = int(round(np.sqrt(d_in)))
    if size * size != d_in:
        raise ConfigError(
            f"input_smoothing needs square image inputs, got dim {d_in}")
    freq = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(freq, freq, indexing="ij")
    envelope = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx ** 2 + fy ** 2))
    n_smooth = int(round(smooth_fraction * d_out))
    cols = np.empty((d_in, d_out))
    for j in range(d_out):
        white = rng.standard_normal((size, size))
        if j < n_smooth:
            cols[:, j] = np.fft.ifft2(np.fft.fft2(white) * envelope).real.ravel()
        else:
            cols[:, j] = white.ravel()
    q, r = np.linalg.qr(cols)
    q = q * np.sign(np.diag(r))
    if np.isscalar(gain):
        return gain * q
    # per-channel scales: smooth block, then broadband block
    scales = np.concatenate([np.full(n_smooth, gain[0]),
                             np.full(d_out - n_smooth, gain[1])])
    return q * scales


class FeatureEncoder:
    """Frozen multi-layer feature map with one tap point per layer.

    Weights are immutable after construction (the arrays are marked
    read-only), so the encoder is safe to share across threads and its
    embeddings are stable for the lifetime of a pipeline.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 activation: str = "tanh", seed: int | None = None):
        if len(weights) != len(biases) or not weights:
            raise ConfigError("encoder needs matching, non-empty weight/bias lists")
        if activation not in ("tanh", "linear"):
            raise ConfigError(f"unknown activation {activation!r}")
        self._weights = [np.array(w, dtype=np.float64) for w in weights]
        self._biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i + 1}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[0] != self._weights[i - 1].shape[1]:
                raise DimensionError(f"layer {i + 1} input dim does not chain")
            w.setflags(write=False)
            b.setflags(write=False)
        self.activation = activation
        self.seed = seed

    @classmethod
    def random(cls, input_dim: int, seed: int,
               layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS,
               gain: float | tuple[float, ...] = DEFAULT_LAYER_GAINS,
               bias_scale: float = 0.01,
               input_smoothing: float = 1.0,
               first_layer_gains: tuple[float, float] | None = DEFAULT_CHANNEL_GAINS,
               ) -> "FeatureEncoder":
        """Frozen random encoder: orthogonal weights, small random biases.

        `gain` scales each layer's orthogonal weights; a scalar applies to
        every layer, a tuple gives one gain per layer.

        With `input_smoothing` > 0 (square image inputs only) the first
        layer is an orthonormal bank of spatially smooth random fields for
        half its columns and broadband white fields for the rest, QR-
        orthonormalised together. Smooth filters respond to image content
        rather than pixel noise, which is what makes feature distances
        between two noisy images carry a usable content signal; broadband
        filters keep fine detail such as streaks visible. The two blocks
        get separate scales from `first_layer_gains` (smooth, broadband):
        the larger broadband scale drives those units into tanh saturation
        at high noise levels, which automatically damps the guidance
        gradient where feature distances would be noise-dominated. Pass 0
        for plain orthogonal first-layer weights (point data, test
        configurations).

        The biases default to a small non-zero scale so the final embedding
        cannot be the zero vector anywhere on [-1, 1]^D (checked at the
        all-zeros input, the one point where zero biases would produce a
        zero embedding through tanh). Passing bias_scale=0 opts out of that
        guarantee; it exists for hand-constructed test configurations.
        """
        rng = np.random.default_rng(seed)
        dims = (int(input_dim), *layer_dims)
        gains = ((float(gain),) * len(layer_dims)
                 if np.isscalar(gain) else tuple(float(g) for g in gain))
        if len(gains) != len(layer_dims):
            raise ConfigError(f"need {len(layer_dims)} layer gains, got {len(gains)}")
        weights, biases = [], []
        for i, (d_in, d_out, g) in enumerate(zip(dims[:-1], dims[1:], gains)):
            if i == 0 and input_smoothing > 0:
                weights.append(_smooth_filter_bank(rng, d_in, d_out,
                                                   input_smoothing,
                                                   first_layer_gains or g))
            else:
                weights.append(orthogonal(rng, (d_in, d_out), gain=g))
            biases.append(bias_scale * rng.standard_normal(d_out))
        enc = cls(weights, biases, activation="tanh", seed=seed)
        if bias_scale != 0.0 and np.linalg.norm(enc.embed(np.zeros(input_dim))) == 0.0:
            raise DegenerateEmbeddingError(
                "encoder maps the zero input to a zero embedding; pick another seed")
        return enc

    @property
    def frozen(self) -> bool:
        return True

    @property
    def depth(self) -> int:
        """Number of tap points m (one per layer)."""
        return len(self._weights)

    @property
    def input_dim(self) -> int:
        return self._weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self._weights[-1].shape[1]

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self._weights)

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def _check_input(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.input_dim:
            raise DimensionError(
                f"input dimension {v.shape[-1]} != encoder input_dim {self.input_dim}")
        return v

    def forward_taps(self, v) -> list[np.ndarray]:
        """Post-activation features of every layer, shallow to deep."""
        a = self._check_input(v)
        taps = []
        for w, b in zip(self._weights, self._biases):
            a = self._act(a @ w + b)
            taps.append(a)
        return taps

    def layer_features(self, v, k: int) -> np.ndarray:
        """Features of layer k, 1-based; layer `depth` equals embed()."""
        if not 1 <= k <= self.depth:
            raise DomainError(f"layer index {k} outside 1..{self.depth}")
        return self.forward_taps(v)[k - 1]

    def embed(self, v) -> np.ndarray:
        """Final-layer embedding."""
        return self.forward_taps(v)[-1]

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        """Vectorised embed() over rows of an (n, D) array."""
        return self.embed(np.asarray(batch, dtype=np.float64))

    def tap_backprop(self, v, taps: list[np.ndarray],
                     tap_grads: list[np.ndarray | None]) -> np.ndarray:
        """Pull gradients at the tap points back to the input.

        `taps` must be the cached forward_taps(v); `tap_grads[k]` is the
        gradient of some scalar with respect to taps[k] (None for layers
        without a direct contribution).
        """
        self._check_input(v)
        delta = None
        for k in range(self.depth - 1, -1, -1):
            g_a = tap_grads[k]
            if delta is not None:
                g_a = delta if g_a is None else g_a + delta
            if g_a is None:
                g_a = np.zeros(self.layer_dims[k])
            g_z = g_a * (1.0 - taps[k] ** 2) if self.activation == "tanh" else g_a
            delta = g_z @ self._weights[k].T
        return delta

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, (w, b) in enumerate(zip(self._weights, self._biases), start=1):
            arrays[f"enc_w{i}"] = w.copy()
            arrays[f"enc_b{i}"] = b.copy()
        arrays["encoder_seed"] = np.array([-1.0 if self.seed is None else float(self.seed)])
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "FeatureEncoder":
        depth = sum(1 for name in arrays if name.startswith("enc_w"))
        weights = [np.asarray(arrays[f"enc_w{i}"], dtype=np.float64) for i in range(1, depth + 1)]
        biases = [np.asarray(arrays[f"enc_b{i}"], dtype=np.float64) for i in range(1, depth + 1)]
        seed_val = float(arrays["encoder_seed"][0]) if "encoder_seed" in arrays else -1.0
        seed = None if seed_val < 0 else int(round(seed_val))
        return cls(weights, biases, activation="tanh", seed=seed)


@dataclass
class PromptPair:
    """Learnable negative (rainy) and positive (clean) domain embeddings.

    Stored un-normalised; cosine similarity normalises on the fly, so the
    prompts' scale never matters to any downstream probability.
    """

    p_neg: np.ndarray
    p_pos: np.ndarray
    loss_history: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.p_neg = np.asarray(self.p_neg, dtype=np.float64)
        self.p_pos = np.asarray(self.p_pos, dtype=np.float64)
        if self.p_neg.shape != self.p_pos.shape or self.p_neg.ndim != 1:
            raise DimensionError("prompts must be two vectors of the same dimension")
        if not (np.all(np.isfinite(self.p_neg)) and np.all(np.isfinite(self.p_pos))):
            raise ConfigError("prompts must be finite")

    def swapped(self) -> "PromptPair":
        return PromptPair(p_neg=self.p_pos.copy(), p_pos=self.p_neg.copy())

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"p_neg": self.p_neg.copy(), "p_pos": self.p_pos.copy()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "PromptPair":
        return cls(p_neg=arrays["p_neg"], p_pos=arrays["p_pos"])


def prompt_probability(encoder: FeatureEncoder, v, prompts: PromptPair,
                       which: str = "positive") -> float:
    """Two-way softmax over cosine similarities of embed(v) to the prompts.

    Returns exp(sim(e, p_which)) / (exp(sim(e, p_neg)) + exp(sim(e, p_pos))).
    The two choices of `which` sum to one by construction.
    """
    if which not in ("positive", "negative"):
        raise ConfigError(f"which must be 'positive' or 'negative', got {which!r}")
    e = encoder.embed(v)
    c_pos = cosine_similarity(e, prompts.p_pos)
    c_neg = cosine_similarity(e, prompts.p_neg)
    e_pos, e_neg = np.exp(c_pos), np.exp(c_neg)
    num = e_pos if which == "positive" else e_neg
    return float(num / (e_pos + e_neg))


def classify_clean(encoder: FeatureEncoder, v, prompts: PromptPair) -> bool:
    """Predict clean iff z_hat(v, p_pos) > 0.5; the tie goes to rainy."""
    return prompt_probability(encoder, v, prompts, "positive") > 0.5


def _batch_cosines(emb: np.ndarray, p: np.ndarray):
    norms = np.linalg.norm(emb, axis=1)
    pn = np.linalg.norm(p)
    if pn == 0.0 or np.any(norms == 0.0):
        raise DegenerateEmbeddingError("zero embedding or prompt in cosine batch")
    return (emb @ p) / (norms * pn), norms, pn


def prompt_loss_and_grads(emb: np.ndarray, labels: np.ndarray,
                          p_pos: np.ndarray, p_neg: np.ndarray):
    """Mean BCE over a batch of embeddings, with exact prompt gradients.

    labels: 1.0 for clean, 0.0 for rainy. Returns (loss, grad_pos, grad_neg).
    """
    c_pos, norms, npos = _batch_cosines(emb, p_pos)
    c_neg, _, nneg = _batch_cosines(emb, p_neg)
    exp_p, exp_n = np.exp(c_pos), np.exp(c_neg)
    z_hat = exp_p / (exp_p + exp_n)
    loss = float(np.mean(-(labels * np.log(z_hat) + (1.0 - labels) * np.log(1.0 - z_hat))))

    # d loss / d c_pos per sample; c_neg gets the negated coefficient.
    dc = (z_hat - labels) / emb.shape[0]
    unit = emb / norms[:, None]

    def prompt_grad(coeff, p, pn, cos):
        return (unit.T @ coeff) / pn - float(np.dot(coeff, cos)) * p / (pn * pn)

    grad_pos = prompt_grad(dc, p_pos, npos, c_pos)
    grad_neg = prompt_grad(-dc, p_neg, nneg, c_neg)
    return loss, grad_pos, grad_neg


def train_prompts(encoder: FeatureEncoder, rainy, clean, config: TrainConfig,
                  init_scale: float = 0.002) -> PromptPair:
    """Fit the prompt pair on unpaired rainy/clean collections.

    Embeddings are computed once up front (the encoder is frozen) and
    mixed batches are drawn from the pooled set. A single Adam instance
    updates both prompts; all randomness comes from `config.seed`.

    The init scale is deliberately small relative to the displacement the
    default step budget can produce, so the trained directions are set by
    the data rather than by the random starting point.
    """
    rainy = np.asarray(rainy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if rainy.ndim != 2 or clean.ndim != 2 or rainy.shape[0] == 0 or clean.shape[0] == 0:
        raise ConfigError("rainy and clean must be non-empty (n, D) arrays")

    rng = np.random.default_rng(config.seed)
    dim = encoder.output_dim
    flat = init_scale * rng.standard_normal(2 * dim)
    p_neg, p_pos = flat[:dim], flat[dim:]

    emb = np.concatenate([encoder.embed_batch(rainy), encoder.embed_batch(clean)], axis=0)
    labels = np.concatenate([np.zeros(rainy.shape[0]), np.ones(clean.shape[0])])
    n_total = emb.shape[0]

    adam = Adam(flat.size, config.learning_rate, config.adam_beta1, config.adam_beta2)
    losses = np.empty(config.steps)
    for step in range(config.steps):
        idx = rng.integers(0, n_total, size=config.batch_size)
        loss, g_pos, g_neg = prompt_loss_and_grads(emb[idx], labels[idx], p_pos, p_neg)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite prompt loss {loss} at step {step}")
        adam.step(flat, np.concatenate([g_neg, g_pos]))
        losses[step] = loss

    return PromptPair(p_neg=p_neg.copy(), p_pos=p_pos.copy(), loss_history=losses)


def prompt_accuracy(encoder: FeatureEncoder, samples: np.ndarray, labels: np.ndarray,
                    prompts: PromptPair) -> float:
    """Fraction of samples whose clean/rainy prediction matches `labels`."""
    emb = encoder.embed_batch(np.asarray(samples, dtype=np.float64))
    c_pos, _, _ = _batch_cosines(emb, prompts.p_pos)
    c_neg, _, _ = _batch_cosines(emb, prompts.p_neg)
    z_hat = np.exp(c_pos) / (np.exp(c_pos) + np.exp(c_neg))
    predicted = (z_hat > 0.5).astype(np.float64)
    return float(np.mean(predicted == np.asarray(labels, dtype=np.float64)))
