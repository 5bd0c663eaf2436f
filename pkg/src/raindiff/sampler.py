"""Energy-guided reverse sampling of the VP-SDE.

Sampling starts from a kernel perturbation of the input at a partial depth
Ts (a fraction of the horizon), then walks the reverse SDE back to t = 0
in N uniform steps. At each step the score is steered by the energy
gradient, s(y, n) - grad_y E(y, x, n), and one of two first-order update
rules is applied:

* vp rule:            y <- (y + beta(n) h * steer) / sqrt(1 - beta(n) h)
                           + sqrt(beta(n) h) * eta
* Euler-Maruyama:     y <- y - (f(y, n) - g(n)^2 * steer) h + g(n) sqrt(h) eta

The two agree to O(h^2) per step. The final step is noiseless. All
randomness of one sample() call flows through a single seeded generator
with a fixed draw order (initial noise; then per step: one reference draw
when guidance is active, one eta when not on the final step), which makes
runs bitwise reproducible and lets an unguided run consume exactly the
same stream as a plain reverse-SDE sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyConfig, energy_gradient, total_energy
from .errors import ConfigError, DivergenceError, DomainError
from .features import FeatureEncoder, PromptPair
from .sde import DiffusionSchedule

STEPPERS = ("vp_rule", "euler_maruyama")


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-sampling parameters.

    ts_fraction positions the starting time as a fraction of the horizon;
    steps is the number of reverse iterations N. The step size h =
    ts_fraction * T / N must keep beta(t) h < 1 everywhere below the
    starting time or the vp rule's square root is undefined; that check
    needs the schedule and happens in sample().
    """

    ts_fraction: float = 0.4
    steps: int = 100
    seed: int = 0
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    stepper: str = "vp_rule"

    def __post_init__(self):
        if not 0.0 < self.ts_fraction <= 1.0:
            raise ConfigError(f"ts_fraction must lie in (0, 1], got {self.ts_fraction}")
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.stepper not in STEPPERS:
            raise ConfigError(f"stepper must be one of {STEPPERS}, got {self.stepper!r}")


@dataclass
class Guidance:
    """Bundle of everything a guided step needs besides the score."""

    x0: np.ndarray
    encoder: FeatureEncoder
    prompts: PromptPair | None
    config: EnergyConfig


def initialize(x0, schedule: DiffusionSchedule, ts: float,
               rng: np.random.Generator) -> np.ndarray:
    """Draw the start point from the kernel at depth ts: a(ts) x0 + s(ts) eps."""
    if not 0.0 < ts <= schedule.horizon:
        raise DomainError(f"starting time {ts} outside (0, {schedule.horizon}]")
    x0 = np.asarray(x0, dtype=np.float64)
    return schedule.perturb(x0, ts, rng.standard_normal(x0.shape))


def vp_update(y, beta_n: float, h: float, steer, eta=None):
    """One application of the vp iteration rule; eta=None means noiseless."""
    bh = beta_n * h
    if bh >= 1.0:
        raise ConfigError(f"beta(n) * h = {bh} >= 1; decrease the step size")
    out = (y + bh * steer) / np.sqrt(1.0 - bh)
    if eta is not None:
        out = out + np.sqrt(bh) * eta
    return out


def euler_maruyama_update(y, beta_n: float, h: float, steer, eta=None):
    """One reverse Euler-Maruyama step with f = -beta y / 2, g^2 = beta."""
    out = y - (-0.5 * beta_n * y - beta_n * steer) * h
    if eta is not None:
        out = out + np.sqrt(beta_n) * np.sqrt(h) * eta
    return out

_UPDATES = {"vp_rule": vp_update, "euler_maruyama": euler_maruyama_update}


def _guided_step(y, n: float, h: float, schedule, score_fn, rng, guidance,
                 last: bool, update):
    """Shared body of the two steppers; returns (y_next, (n, energy, grad_norm)).

    Draw order per step: the guidance reference (when active), then eta
    (when not last). An unguided step consumes only eta.
    """
    s = score_fn(y, n)
    if guidance is not None and guidance.config.guided:
        energy, x_ref = total_energy(y, guidance.x0, n, schedule, guidance.encoder,
                                     guidance.prompts, guidance.config, rng)
        grad = energy_gradient(y, x_ref, guidance.encoder, guidance.prompts,
                               guidance.config)
        steer = s - grad
        grad_norm = float(np.linalg.norm(grad))
    else:
        steer = s
        energy, grad_norm = 0.0, 0.0
    eta = None if last else rng.standard_normal(np.shape(y))
    return update(y, float(schedule.beta(n)), h, steer, eta), (n, energy, grad_norm)


def vp_step(y, n: float, h: float, schedule: DiffusionSchedule, score_fn,
            rng: np.random.Generator, guidance: Guidance | None = None,
            last: bool = False):
    """One step of the vp rule from time n to n - h."""
    if n - h < -1e-12:
        raise DomainError(f"step from n={n} with h={h} would cross t=0")
    return _guided_step(y, n, h, schedule, score_fn, rng, guidance, last, vp_update)


def euler_maruyama_step(y, n: float, h: float, schedule: DiffusionSchedule, score_fn,
                        rng: np.random.Generator, guidance: Guidance | None = None,
                        last: bool = False):
    """One reverse Euler-Maruyama step from time n to n - h."""
    if n - h < -1e-12:
        raise DomainError(f"step from n={n} with h={h} would cross t=0")
    return _guided_step(y, n, h, schedule, score_fn, rng, guidance, last,
                        euler_maruyama_update)


def sample(x0, schedule: DiffusionSchedule, score_fn, config: SamplerConfig,
           encoder: FeatureEncoder | None = None,
           prompts: PromptPair | None = None):
    """Run the full guided reverse loop on one input.

    score_fn(y, t) may be a trained network's bound method or any callable
    (e.g. an analytic score for validation). Returns (y0, trace) where
    trace is an (N, 3) array of per-step rows (n, energy, grad_norm);
    energy and grad_norm are zero when guidance is off, since the energy is
    never evaluated then.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    guided = config.energy.guided
    if guided and encoder is None:
        raise ConfigError("guided sampling requires an encoder")
    if guided and config.energy.lambda1 > 0 and prompts is None:
        raise ConfigError("a positive lambda1 requires trained prompts")

    ts = config.ts_fraction * schedule.horizon
    h = ts / config.steps
    if schedule.beta(ts) * h >= 1.0:
        raise ConfigError(
            f"beta(Ts) * h = {schedule.beta(ts) * h:.3g} >= 1; increase steps")

    rng = np.random.default_rng(config.seed)
    y = initialize(x0, schedule, ts, rng)
    guidance = Guidance(x0, encoder, prompts, config.energy) if guided else None
    step = vp_step if config.stepper == "vp_rule" else euler_maruyama_step

    trace = np.empty((config.steps, 3))
    for row, i in enumerate(range(config.steps, 0, -1)):
        y, info = step(y, i * h, h, schedule, score_fn, rng, guidance, last=(i == 1))
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite sample state at step {row + 1} (n={i * h})")
        trace[row] = info
    return y, trace
