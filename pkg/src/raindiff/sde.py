"""Variance-preserving SDE: linear beta schedule and closed-form perturbation kernel.

The forward process is the variance-preserving (VP) SDE

    dy = -1/2 beta(t) y dt + sqrt(beta(t)) dW_t,    t in [0, T],

with the linear schedule beta(t) = beta_min + t (beta_max - beta_min).
Because the drift is affine, the transition kernel from time 0 to t is a
Gaussian with closed-form coefficients

    mean_coeff(t) = exp(-1/2 * integral_beta(t)),
    std(t)        = sqrt(1 - exp(-integral_beta(t))),
    integral_beta(t) = beta_min * t + 1/2 (beta_max - beta_min) t^2,

so a perturbed sample can be drawn in one step as

    y_t = mean_coeff(t) * y_0 + std(t) * z,   z ~ N(0, I).

The name "variance preserving" refers to the identity
mean_coeff(t)^2 + std(t)^2 = 1, which holds exactly for every t: data with
unit variance keeps unit variance along the whole forward process.

All operations are pure functions of their arguments and accept scalars or
arrays of times; nothing here owns random state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

#: Times may exceed [0, T] by at most this much before being rejected;
#: loop arithmetic like (i * h) accumulates error of this order.
TIME_SLACK = 1e-12


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear beta schedule of the VP-SDE with horizon T.

    Parameters
    ----------
    beta_min : float
        Noise rate at t = 0. Must be positive.
    beta_max : float
        Noise rate at t = T. Must exceed beta_min.
    horizon : float
        Final time T of the forward process. Fixed to 1.0 throughout the
        pipeline; sampler starting times are expressed as fractions of it.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.beta_min <= 0:
            raise DomainError(f"beta_min must be positive, got {self.beta_min}")
        if self.beta_max <= self.beta_min:
            raise DomainError(
                f"beta_max ({self.beta_max}) must exceed beta_min ({self.beta_min})")
        if self.horizon <= 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")

    def _check_time(self, t):
        """Validate t in [0, T], clamping floating-point drift up to TIME_SLACK."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < -TIME_SLACK) or np.any(t > self.horizon + TIME_SLACK):
            bad = t if t.ndim == 0 else t[(t < -TIME_SLACK) | (t > self.horizon + TIME_SLACK)][0]
            raise DomainError(f"time {bad} outside [0, {self.horizon}]")
        return np.clip(t, 0.0, self.horizon)

    def beta(self, t):
        """Noise rate beta(t) = beta_min + t (beta_max - beta_min)."""
        t = self._check_time(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integral_beta(self, t):
        """Exact value of the integral of beta over [0, t].

        For the linear schedule this is beta_min * t + 1/2 (beta_max - beta_min) t^2;
        no quadrature is involved.
        """
        t = self._check_time(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def kernel_coeffs(self, t):
        """Coefficients (mean_coeff, std) of the perturbation kernel at time t.

        Returns
        -------
        mean_coeff : exp(-1/2 * integral_beta(t)); equals 1 at t = 0.
        std : sqrt(1 - exp(-integral_beta(t))); equals 0 at t = 0.

        The pair satisfies mean_coeff^2 + std^2 = 1 identically.
        """
        ib = self.integral_beta(t)
        mean_coeff = np.exp(-0.5 * ib)
        std = np.sqrt(1.0 - np.exp(-ib))
        return mean_coeff, std

    def perturb(self, x0: np.ndarray, t, noise: np.ndarray) -> np.ndarray:
        """One-step draw from the kernel: mean_coeff(t) * x0 + std(t) * noise.

        `noise` must have the same shape as `x0`; it is supplied by the
        caller so that all randomness stays under the caller's generator.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        noise = np.asarray(noise, dtype=np.float64)
        if x0.shape != noise.shape:
            raise DimensionError(
                f"x0 shape {x0.shape} does not match noise shape {noise.shape}")
        mean_coeff, std = self.kernel_coeffs(t)
        return mean_coeff * x0 + std * noise

    def drift(self, y: np.ndarray, t) -> np.ndarray:
        """Forward drift f(y, t) = -1/2 beta(t) y."""
        return -0.5 * self.beta(t) * np.asarray(y, dtype=np.float64)

    def diffusion(self, t):
        """Forward diffusion coefficient g(t) = sqrt(beta(t))."""
        return np.sqrt(self.beta(t))
