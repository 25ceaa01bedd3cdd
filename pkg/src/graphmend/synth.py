"""Synthetic datasets with controlled label noise.

Clusters are unit-variance isotropic Gaussians whose centroids sit on
scaled standard-basis axes, so every centroid pair is separated by
class_separation * sqrt(2); when the embedding dimension cannot hold
that simplex the centroids fall back to random directions on the sphere.
Noise comes in three kinds: uniform flips, boundary-concentrated
"confusing" flips toward the nearest other class, and fixed class-to-
class asymmetric flips.
"""

import numpy as np

from .core import FeatureMatrix, ValidationError

NOISE_KINDS = ("uniform", "confusing", "asymmetric", "none")


class SynthConfig:
    def __init__(
        self,
        n_classes=4,
        per_class=500,
        dim=16,
        class_separation=4.0,
        noise_rate=0.3,
        noise_kind="confusing",
        rng_seed=0,
    ):
        if n_classes < 2:
            raise ValidationError("need at least 2 classes")
        if per_class < 1 or dim < 1:
            raise ValidationError("per_class and dim must be positive")
        if not 0.0 <= noise_rate < 1.0:
            raise ValidationError("noise_rate must lie in [0, 1)")
        if noise_kind not in NOISE_KINDS:
            raise ValidationError("unknown noise kind %r" % noise_kind)
        self.n_classes = int(n_classes)
        self.per_class = int(per_class)
        self.dim = int(dim)
        self.class_separation = float(class_separation)
        self.noise_rate = float(noise_rate)
        self.noise_kind = noise_kind
        self.rng_seed = int(rng_seed)


def class_centroids(cfg, rng):
    """Centroid layout used by make_blobs and the confusing-noise margin."""
    C, d = cfg.n_classes, cfg.dim
    centroids = np.zeros((C, d))
    if d >= C:
        centroids[np.arange(C), np.arange(C)] = cfg.class_separation
    else:
        # not enough room for the axis simplex; random unit directions
        raw = rng.standard_normal((C, d))
        centroids = raw / np.linalg.norm(raw, axis=1)[:, None] * cfg.class_separation
    return centroids


def _blobs_with_centroids(cfg, rng):
    centroids = class_centroids(cfg, rng)
    n = cfg.n_classes * cfg.per_class
    labels = np.repeat(np.arange(cfg.n_classes), cfg.per_class)
    points = centroids[labels] + rng.standard_normal((n, cfg.dim))
    return FeatureMatrix(points), labels.astype(np.int64), centroids


def make_blobs(cfg, rng=None):
    """Gaussian class blobs; returns (FeatureMatrix, clean labels)."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    features, labels, _ = _blobs_with_centroids(cfg, rng)
    return features, labels


def inject_uniform(labels, rate, n_classes, rng):
    """Flip floor(rate*n) uniformly chosen samples to random other classes."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    flips = int(rate * n)
    noisy = labels.copy()
    if flips == 0:
        return noisy
    victims = rng.choice(n, size=flips, replace=False)
    # uniform over the other C-1 classes: draw below C-1 and skip self
    draw = rng.integers(0, n_classes - 1, size=flips)
    noisy[victims] = draw + (draw >= labels[victims])
    return noisy


def margin_deficit(features, labels, centroids):
    """Distance to own centroid minus distance to the nearest other one.

    High values mark samples sitting at or beyond the class boundary.
    """
    X = features.data.astype(np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    dist = np.sqrt(d2)
    own = dist[np.arange(X.shape[0]), labels]
    masked = dist.copy()
    masked[np.arange(X.shape[0]), labels] = np.inf
    other_class = masked.argmin(axis=1)
    return own - masked.min(axis=1), other_class


def inject_confusing(features, labels, rate, rng, centroids=None, cfg=None):
    """Flip the floor(rate*n) most boundary-crowded samples.

    Victims are the samples scoring highest on margin deficit; each is
    flipped to the class of its nearest other centroid, reproducing
    noise that clusters along decision borders.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    flips = int(rate * n)
    noisy = labels.copy()
    if flips == 0:
        return noisy
    if centroids is None:
        if cfg is None:
            raise ValidationError("inject_confusing needs centroids or a config")
        centroids = class_centroids(cfg, np.random.default_rng(cfg.rng_seed))
    score, nearest_other = margin_deficit(features, labels, centroids)
    # stable sort keeps ties in index order, making the pick deterministic
    victims = np.argsort(-score, kind="stable")[:flips]
    noisy[victims] = nearest_other[victims]
    return noisy


def inject_asymmetric(labels, rate, mapping, rng):
    """Flip a fixed fraction of each mapped class along class->class arrows."""
    labels = np.asarray(labels, dtype=np.int64)
    for src, dst in mapping.items():
        if src == dst:
            raise ValidationError("mapping may not fix class %d" % src)
    noisy = labels.copy()
    for src in sorted(mapping):
        members = np.flatnonzero(labels == src)
        flips = int(rate * members.shape[0])
        if flips == 0:
            continue
        victims = rng.choice(members, size=flips, replace=False)
        noisy[victims] = mapping[src]
    return noisy


def make_noisy_dataset(cfg, rng=None, mapping=None):
    """Blobs plus injected noise; returns (features, noisy, clean)."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    features, clean, centroids = _blobs_with_centroids(cfg, rng)
    if cfg.noise_kind == "none" or cfg.noise_rate == 0.0:
        return features, clean.copy(), clean
    if cfg.noise_kind == "uniform":
        noisy = inject_uniform(clean, cfg.noise_rate, cfg.n_classes, rng)
    elif cfg.noise_kind == "confusing":
        noisy = inject_confusing(features, clean, cfg.noise_rate, rng, centroids)
    else:
        if mapping is None:
            # default derangement: each class maps to the next one
            mapping = {c: (c + 1) % cfg.n_classes for c in range(cfg.n_classes)}
        noisy = inject_asymmetric(clean, cfg.noise_rate, mapping, rng)
    return features, noisy, clean
