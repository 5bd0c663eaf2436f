"""Small numerical helpers: stable activations, orthogonal init, cosine similarity."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateEmbeddingError


def sigmoid(z):
    """Numerically stable logistic function, elementwise.

    Arguments are clipped to |z| <= 60 before exponentiation; beyond that
    the float64 result is exactly 0 or 1 anyway, so clipping changes
    nothing while avoiding overflow.
    """
    z = np.clip(np.asarray(z, dtype=np.float64), -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-z))


def silu(z):
    """Sigmoid-weighted linear unit z * sigmoid(z)."""
    return z * sigmoid(z)


def silu_prime(z):
    """Derivative of silu: sigmoid(z) * (1 + z * (1 - sigmoid(z)))."""
    s = sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    """Random matrix with orthonormal rows or columns (whichever fit), scaled by gain.

    Uses the QR decomposition of a Gaussian matrix with the sign of R's
    diagonal folded into Q, which makes the distribution uniform over the
    orthogonal group and deterministic given the generator state.
    """
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two non-zero vectors.

    Raises DegenerateEmbeddingError when either vector is zero, since the
    angle is undefined there.
    """
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("cosine similarity with a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))
