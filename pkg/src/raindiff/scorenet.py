"""Time-conditioned score model trained by denoising score matching.

The network is a small MLP that predicts the noise eps injected by the
forward kernel; the score is recovered as s(y, t) = -eps_hat(y, t) / std(t).
Training draws (t, eps) pairs, forms y_t = mean_coeff(t) * y_0 + std(t) * eps
and minimises the squared error ||eps_hat - eps||^2, which is the standard
numerically stable formulation of denoising score matching.

Forward and backward passes are written out explicitly over a flat
parameter vector, so parameter gradients can be checked coordinate by
coordinate against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, DomainError
from .numerics import orthogonal, silu, silu_prime
from .optim import Adam
from .sde import DiffusionSchedule


@dataclass
class TrainConfig:
    """Hyperparameters shared by the score and prompt trainers.

    The Adam moment constants are fixed at (0.9, 0.99) by default for both
    trainers; only the learning rate differs between them. `t_min` keeps
    training away from the 1/std(t) singularity at t = 0. When
    `final_learning_rate` is set, the rate decays linearly from
    `learning_rate` to it across the run; the image-domain score model
    needs that headroom, small problems train fine at a constant rate.
    """

    steps: int
    batch_size: int = 8
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    t_min: float = 1e-3
    seed: int = 0
    final_learning_rate: float | None = None

    def __post_init__(self):
        if self.steps <= 0:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.final_learning_rate is not None and self.final_learning_rate <= 0:
            raise ConfigError("final_learning_rate must be positive when set")
        if not (0.0 < self.t_min < 1.0):
            raise ConfigError(f"t_min must lie in (0, 1), got {self.t_min}")

    def rate_at(self, step: int) -> float:
        """Learning rate for a 0-based step index."""
        if self.final_learning_rate is None or self.steps == 1:
            return self.learning_rate
        frac = step / (self.steps - 1)
        return self.learning_rate + (self.final_learning_rate - self.learning_rate) * frac


class ScoreNetwork:
    """MLP noise predictor with sinusoidal time conditioning.

    The input layer sees the sample concatenated with `time_embed_dim`
    sinusoidal features of t (sin/cos pairs at geometrically spaced
    frequencies between 1 and 1000). Hidden layers use the
    sigmoid-weighted linear unit; hidden weights are orthogonal-initialised
    with gain 1 and the output layer starts at zero, so a fresh network
    predicts zero noise everywhere.

    All parameters live in one flat float64 vector (`self.params`); the
    layer manifest maps names to (shape, offset) slices of it.
    """

    def __init__(self, input_dim: int, schedule: DiffusionSchedule | None = None,
                 time_embed_dim: int = 16, hidden_dims: tuple[int, int] = (128, 128),
                 t_min: float = 1e-3, rng: np.random.Generator | None = None,
                 seed: int = 0, zero_head: bool = True):
        if time_embed_dim % 2 != 0:
            raise ConfigError("time_embed_dim must be even (sin/cos pairs)")
        self.input_dim = int(input_dim)
        self.time_embed_dim = int(time_embed_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.schedule = schedule if schedule is not None else DiffusionSchedule()
        self.t_min = float(t_min)
        self._freqs = np.geomspace(1.0, 1000.0, self.time_embed_dim // 2)

        dims = [self.input_dim + self.time_embed_dim, *self.hidden_dims, self.input_dim]
        self.manifest: list[tuple[str, tuple[int, ...], int]] = []
        offset = 0
        for i in range(len(dims) - 1):
            for name, shape in ((f"w{i + 1}", (dims[i], dims[i + 1])),
                                (f"b{i + 1}", (dims[i + 1],))):
                self.manifest.append((name, shape, offset))
                offset += int(np.prod(shape))
        self.params = np.zeros(offset)
        self._views = {name: self.params[off:off + int(np.prod(shape))].reshape(shape)
                       for name, shape, off in self.manifest}
        # persistent gradient buffer: every entry is overwritten by each
        # backward pass, so reuse across steps is safe
        self._grad = np.empty(offset)
        self._grad_views = {name: self._grad[off:off + int(np.prod(shape))].reshape(shape)
                            for name, shape, off in self.manifest}

        rng = rng if rng is not None else np.random.default_rng(seed)
        n_layers = len(dims) - 1
        for i in range(1, n_layers + 1):
            w = self._views[f"w{i}"]
            if i < n_layers or not zero_head:
                w[...] = orthogonal(rng, w.shape, gain=1.0)
        self.loss_history: np.ndarray | None = None
        self.snapshots: list[tuple[int, np.ndarray]] = []

    # -- forward ---------------------------------------------------------

    def time_features(self, t) -> np.ndarray:
        """Sinusoidal features of t: [sin(f_j t) ..., cos(f_j t) ...]."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        phase = t[:, None] * self._freqs[None, :]
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)

    def _forward(self, y2d: np.ndarray, t1d: np.ndarray):
        v = self._views
        a0 = np.concatenate([y2d, self.time_features(t1d)], axis=1)
        z1 = a0 @ v["w1"] + v["b1"]
        a1 = silu(z1)
        z2 = a1 @ v["w2"] + v["b2"]
        a2 = silu(z2)
        out = a2 @ v["w3"] + v["b3"]
        return out, (a0, z1, a1, z2, a2)

    def _as_batch(self, y, t):
        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        y2d = y[None, :] if single else y
        if y2d.shape[-1] != self.input_dim:
            raise DimensionError(
                f"sample dimension {y2d.shape[-1]} != network input_dim {self.input_dim}")
        t1d = np.broadcast_to(np.asarray(t, dtype=np.float64), (y2d.shape[0],))
        return y2d, t1d, single

    def predict_noise(self, y, t) -> np.ndarray:
        """Raw network output eps_hat(y, t); same shape as y."""
        y2d, t1d, single = self._as_batch(y, t)
        out, _ = self._forward(y2d, t1d)
        return out[0] if single else out

    def score(self, y, t) -> np.ndarray:
        """Score estimate -eps_hat(y, t) / std(t).

        t must lie in [t_min, T]; below t_min the 1/std conversion is
        ill-conditioned and rejected.
        """
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < self.t_min):
            raise DomainError(f"score undefined below t_min={self.t_min}, got t={t}")
        _, std = self.schedule.kernel_coeffs(t_arr)
        eps_hat = self.predict_noise(y, t)
        if np.ndim(std) > 0 and eps_hat.ndim > 1:
            std = np.asarray(std)[:, None]
        return -eps_hat / std

    # -- training --------------------------------------------------------

    def loss_and_grads(self, y_t: np.ndarray, t: np.ndarray, eps: np.ndarray):
        """DSM loss (mean over batch of ||eps_hat - eps||^2) and its flat gradient.

        The returned gradient aliases an internal buffer and is only valid
        until the next call; copy it if it must outlive that.
        """
        v = self._views
        y2d, t1d, _ = self._as_batch(y_t, t)
        out, (a0, z1, a1, z2, a2) = self._forward(y2d, t1d)
        diff = out - eps
        batch = y2d.shape[0]
        loss = float(np.sum(diff * diff) / batch)

        g_out = 2.0 * diff / batch
        grad = self._grad
        gv = self._grad_views
        gv["w3"][...] = a2.T @ g_out
        gv["b3"][...] = g_out.sum(axis=0)
        g_a2 = g_out @ v["w3"].T
        g_z2 = g_a2 * silu_prime(z2)
        gv["w2"][...] = a1.T @ g_z2
        gv["b2"][...] = g_z2.sum(axis=0)
        g_a1 = g_z2 @ v["w2"].T
        g_z1 = g_a1 * silu_prime(z1)
        gv["w1"][...] = a0.T @ g_z1
        gv["b1"][...] = g_z1.sum(axis=0)
        return loss, grad

    # -- serialization ---------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: self._views[name].copy() for name, _, _ in self.manifest}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray],
                    schedule: DiffusionSchedule | None = None,
                    t_min: float = 1e-3) -> "ScoreNetwork":
        input_dim = arrays["b3"].shape[0]
        time_dim = arrays["w1"].shape[0] - input_dim
        hidden = (arrays["b1"].shape[0], arrays["b2"].shape[0])
        net = cls(input_dim, schedule, time_embed_dim=time_dim, hidden_dims=hidden,
                  t_min=t_min)
        for name, _, _ in net.manifest:
            net._views[name][...] = np.asarray(arrays[name], dtype=np.float64)
        return net

    def copy_with_params(self, flat: np.ndarray) -> "ScoreNetwork":
        net = ScoreNetwork(self.input_dim, self.schedule, self.time_embed_dim,
                           self.hidden_dims, self.t_min)
        net.params[...] = flat
        return net


def train_score_model(clean_data, schedule: DiffusionSchedule, config: TrainConfig,
                      snapshot_steps: tuple[int, ...] = (),
                      hidden_dims: tuple[int, int] = (128, 128)) -> ScoreNetwork:
    """Fit a ScoreNetwork to clean-domain samples by denoising score matching.

    Per step: draw a batch of samples, times t ~ U[t_min, T] and unit
    Gaussian noise, perturb through the closed-form kernel and take one
    Adam step on the noise-prediction loss. All randomness comes from a
    single generator seeded by `config.seed`, so reruns are bitwise
    reproducible. The loss curve is stored on `network.loss_history`;
    parameter snapshots at the requested step counts land in
    `network.snapshots`.
    """
    data = np.asarray(clean_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError(f"clean_data must be a non-empty (n, D) array, got shape {data.shape}")
    n, dim = data.shape

    rng = np.random.default_rng(config.seed)
    net = ScoreNetwork(dim, schedule, t_min=config.t_min, rng=rng,
                       hidden_dims=hidden_dims)
    adam = Adam(net.params.size, config.learning_rate, config.adam_beta1, config.adam_beta2)
    losses = np.empty(config.steps)
    wanted = set(int(s) for s in snapshot_steps)

    t_lo, t_hi = config.t_min, schedule.horizon
    for step in range(config.steps):
        adam.lr = config.rate_at(step)
        idx = rng.integers(0, n, size=config.batch_size)
        t = t_lo + (t_hi - t_lo) * rng.random(config.batch_size)
        eps = rng.standard_normal((config.batch_size, dim))
        mean_coeff, std = net.schedule.kernel_coeffs(t)
        y_t = mean_coeff[:, None] * data[idx] + std[:, None] * eps
        loss, grad = net.loss_and_grads(y_t, t, eps)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at step {step}")
        adam.step(net.params, grad)
        losses[step] = loss
        if step + 1 in wanted:
            net.snapshots.append((step + 1, net.params.copy()))

    net.loss_history = losses
    return net


def gaussian_oracle_score(y, t, mean, var0: float, schedule: DiffusionSchedule,
                          t_min: float = 1e-3) -> np.ndarray:
    """Exact score of kernel-perturbed N(mean, var0 * I) data.

    The perturbed marginal is N(mean_coeff * mean, (mean_coeff^2 var0 + std^2) I),
    whose score at y is -(y - mean_coeff * mean) / (mean_coeff^2 var0 + std^2).
    Used as an independent oracle for trained networks.
    """
    if var0 < 0:
        raise DomainError(f"var0 must be non-negative, got {var0}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < t_min):
        raise DomainError(f"oracle rejects t below t_min={t_min} (singular at t=0)")
    mean_coeff, std = schedule.kernel_coeffs(t_arr)
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    return -(y - mean_coeff * mean) / (mean_coeff ** 2 * var0 + std ** 2)
