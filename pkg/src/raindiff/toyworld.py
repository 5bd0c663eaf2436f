"""Synthetic unpaired rainy/clean data, greymap file I/O, and data filtering.

The image domain is a stationary Gaussian random field: white noise on a
K x K torus smoothed by a Gaussian transfer function in Fourier space and
rescaled to a fixed pixel standard deviation. Rain is synthesised by
adding a fixed brightness along wrapped 45-degree diagonal lines and
clipping back to [-1, 1]. Corruption shuffles the output order so the
rainy and clean collections carry no usable correspondence; the hidden
pairing is returned separately and only the evaluation tooling may touch
it.

Images are stored as flat float64 vectors in [-1, 1]; files are 8-bit
binary greymaps (P5) with the affine pixel map v = p / 127.5 - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FileFormatError
from .features import FeatureEncoder


@dataclass(frozen=True)
class DomainSpec:
    """Parameters of the synthetic clean domain and its rain corruption.

    kind "gaussian2d" is a 2-dim Gaussian cloud (rain = a fixed offset plus
    jitter); kind "streak_images" is the K x K texture domain described in
    the module docstring. streak_angles is fixed to diagonals at 45
    degrees, one pixel wide.
    """

    kind: str = "streak_images"
    image_size: int = 16
    # gaussian2d
    clean_mean: tuple[float, float] = (0.0, 0.0)
    clean_spread: float = 0.3
    rain_offset: tuple[float, float] = (2.0, 2.0)
    rain_jitter_var: float = 0.05
    # streak_images
    texture_smoothness: float = 3.0
    texture_std: float = 0.15
    streak_count: int = 3
    streak_delta: float = 0.8
    streak_angles: tuple[int, ...] = (45,)
    streak_width: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian2d", "streak_images"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if self.image_size < 2:
            raise ConfigError("image_size must be at least 2")
        if self.streak_count < 0:
            raise ConfigError("streak_count must be non-negative")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "gaussian2d" else self.image_size ** 2


def _smoothing_transfer(size: int, sigma: float) -> np.ndarray:
    """Fourier transfer function of a periodic Gaussian blur with std sigma."""
    f = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(f, f, indexing="ij")
    return np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx ** 2 + fy ** 2))


def make_clean(spec: DomainSpec, n: int, seed: int) -> np.ndarray:
    """Draw n clean samples as an (n, D) array, deterministic in (spec, seed)."""
    if n <= 0:
        raise ConfigError(f"sample count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    if spec.kind == "gaussian2d":
        return np.asarray(spec.clean_mean) + spec.clean_spread * rng.standard_normal((n, 2))

    size = spec.image_size
    transfer = _smoothing_transfer(size, spec.texture_smoothness)
    # white noise filtered on the torus has pixel variance mean(transfer^2)
    scale = spec.texture_std / math.sqrt(float(np.mean(transfer ** 2)))
    out = np.empty((n, size * size))
    for j in range(n):
        white = rng.standard_normal((size, size))
        field = np.fft.ifft2(np.fft.fft2(white) * transfer).real * scale
        field -= field.mean()  # textures carry no brightness offset; rain will
        out[j] = np.clip(field, -1.0, 1.0).ravel()
    return out


def streak_pixels(size: int, offset: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays of the wrapped 45-degree diagonal with the given offset."""
    rows = np.arange(size)
    return rows, (offset + rows) % size


def corrupt(clean: np.ndarray, spec: DomainSpec, seed: int):
    """Rain-corrupt a clean collection and shuffle away the correspondence.

    Returns (rainy, pairing) where rainy is an (n, D) array in shuffled
    order and pairing[j] is the clean-row index that produced rainy[j].
    The pairing exists for evaluation only; training code must not see it.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 2 or clean.shape[0] == 0:
        raise ConfigError("clean must be a non-empty (n, D) array")
    n = clean.shape[0]
    rng = np.random.default_rng(seed)

    corrupted = np.empty_like(clean)
    if spec.kind == "gaussian2d":
        jitter = math.sqrt(spec.rain_jitter_var) * rng.standard_normal((n, 2))
        corrupted = clean + np.asarray(spec.rain_offset) + jitter
    else:
        size = spec.image_size
        if clean.shape[1] != size * size:
            raise DimensionError(f"clean rows have dim {clean.shape[1]}, expected {size * size}")
        for j in range(n):
            img = clean[j].reshape(size, size).copy()
            offsets = rng.integers(0, size, size=spec.streak_count)
            for off in offsets:
                rr, cc = streak_pixels(size, int(off))
                img[rr, cc] += spec.streak_delta
            corrupted[j] = np.clip(img, -1.0, 1.0).ravel()

    pairing = rng.permutation(n)
    return corrupted[pairing], pairing


# -- greymap files ---------------------------------------------------------

def save_pgm(path, image: np.ndarray) -> None:
    """Write a 2-d array in [-1, 1] as an 8-bit binary greymap (P5).

    Values map through p = floor((v + 1) * 127.5 + 0.5) clipped to 0..255
    (round half up).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError(f"expected a 2-d image, got shape {image.shape}")
    levels = np.clip(np.floor((image + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary greymap into a 2-d float64 array in [-1, 1] (v = p/127.5 - 1)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FileFormatError(f"{path}: not a binary greymap (missing P5 magic)")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError(f"{path}: truncated greymap header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric greymap header") from exc
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit greymaps supported, maxval={maxval}")
    raw = data[pos:pos + w * h]
    if len(raw) != w * h:
        raise FileFormatError(f"{path}: payload holds {len(raw)} bytes, expected {w * h}")
    levels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return levels.astype(np.float64) / 127.5 - 1.0


def save_images(directory, names: list[str], samples: np.ndarray) -> None:
    """Write flat square images to directory/<name> as greymaps."""
    samples = np.asarray(samples, dtype=np.float64)
    size = int(round(math.sqrt(samples.shape[1])))
    if size * size != samples.shape[1]:
        raise DimensionError(f"rows of dim {samples.shape[1]} are not square images")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, row in zip(names, samples):
        save_pgm(directory / name, row.reshape(size, size))


def load_images(directory):
    """Read every .pgm in a directory, sorted by filename.

    Returns (names, samples) with samples flattened to (n, D). All images
    must share one size.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        raise FileFormatError(f"no .pgm files under {directory}")
    images = [load_pgm(p) for p in paths]
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise DimensionError(f"mixed image sizes under {directory}: {sorted(shapes)}")
    return [p.name for p in paths], np.stack([img.ravel() for img in images])


def load_domain(directory):
    """Training-side loader: file names and samples only, no pairing data."""
    return load_images(directory)


def write_pair_map(path, rainy_names: list[str], clean_names: list[str]) -> None:
    """Evaluation-side pairing file: one 'rainy_file<TAB>clean_file' row each."""
    with open(path, "w", encoding="ascii") as fh:
        for r, c in zip(rainy_names, clean_names):
            fh.write(f"{r}\t{c}\n")


def load_pair_map(path) -> dict[str, str]:
    """Read the evaluation pairing written by write_pair_map."""
    mapping = {}
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FileFormatError(f"{path}:{line_no}: expected two tab-separated names")
            mapping[parts[0]] = parts[1]
    return mapping


# -- feature-cluster filtering ----------------------------------------------

def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 50):
    """Seeded k-means++ initialisation followed by a fixed number of Lloyd steps."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(0, n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            centers[c] = points[rng.integers(0, n)]
        else:
            centers[c] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    for _ in range(iters):
        dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        assign = np.argmin(dists, axis=1)
        for c in range(k):
            members = points[assign == c]
            if members.shape[0] > 0:  # empty clusters keep their centroid
                centers[c] = members.mean(axis=0)
    dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    assign = np.argmin(dists, axis=1)
    return assign, dists[np.arange(n), assign]


def cluster_filter(samples: np.ndarray, encoder: FeatureEncoder, k: int,
                   quantile: float, seed: int = 0) -> np.ndarray:
    """Drop embedding-space outliers, cluster by cluster.

    Embeds all samples, k-means clusters the embeddings, and inside each
    cluster keeps the ceil(quantile * members) samples closest to their
    centroid (ties broken toward the lower original index). Survivors come
    back in their original order; quantile 1.0 keeps everything.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"cluster count must be at least 1, got {k}")
    if k > samples.shape[0]:
        raise ConfigError(f"cluster count {k} exceeds sample count {samples.shape[0]}")
    if not 0.0 < quantile <= 1.0:
        raise ConfigError(f"quantile must lie in (0, 1], got {quantile}")

    emb = encoder.embed_batch(samples)
    assign, dist = _kmeans(emb, k, np.random.default_rng(seed))
    keep = np.zeros(samples.shape[0], dtype=bool)
    for c in range(k):
        members = np.flatnonzero(assign == c)
        if members.size == 0:
            continue
        n_keep = math.ceil(quantile * members.size)
        order = members[np.lexsort((members, dist[members]))]
        keep[order[:n_keep]] = True
    return samples[keep]
