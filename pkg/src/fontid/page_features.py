"""Page-level bag-of-words descriptors over a k-means codebook of word features."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyPageError, InsufficientDataError
from .word_features import FEATURE_NAMES

DEFAULT_K = 20
KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 300
CODEBOOK_FORMAT_VERSION = 1


def feature_schema_hash() -> str:
    return hashlib.sha256("\n".join(FEATURE_NAMES).encode()).hexdigest()[:16]


@dataclass
class Codebook:
    """k cluster centroids in z-scored feature space, plus the standardizer."""

    k: int
    centroids: np.ndarray  # (k, d), standardized space
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,)
    seed: int
    n_iter: int = 0
    inertia: float = 0.0

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": CODEBOOK_FORMAT_VERSION,
            "feature_schema": feature_schema_hash(),
            "k": self.k,
            "seed": self.seed,
            "standardizer": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "centroids": self.centroids.tolist(),
            "n_iter": self.n_iter,
            "inertia": self.inertia,
        }
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            k=int(doc["k"]),
            centroids=np.array(doc["centroids"], dtype=np.float64),
            mean=np.array(doc["standardizer"]["mean"], dtype=np.float64),
            std=np.array(doc["standardizer"]["std"], dtype=np.float64),
            seed=int(doc["seed"]),
            n_iter=int(doc.get("n_iter", 0)),
            inertia=float(doc.get("inertia", 0.0)),
        )


def _kmeans_pp_init(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = z.shape[0]
    centers = np.empty((k, z.shape[1]))
    first = int(rng.integers(n))
    centers[0] = z[first]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            choice = int(rng.choice(n, p=probs))
        else:
            choice = int(rng.integers(n))
        centers[i] = z[choice]
        d2 = np.minimum(d2, np.sum((z - centers[i]) ** 2, axis=1))
    return centers


def _assign(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # Squared Euclidean distances; argmin breaks ties at the lowest index.
    d2 = np.sum(z**2, axis=1, keepdims=True) - 2 * z @ centers.T + np.sum(centers**2, axis=1)
    return np.argmin(d2, axis=1)


def build_codebook(features: np.ndarray, k: int = DEFAULT_K, seed: int = 0) -> Codebook:
    """Cluster standardized word features with seeded k-means++ / Lloyd.

    Features are z-scored first (dimensions with zero variance keep std 1).
    Iterates until the largest centroid shift drops below 1e-6 or 300
    rounds; a cluster that empties is re-seeded at the point farthest from
    its current centroid. Bit-reproducible for a fixed seed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise InsufficientDataError(
            f"need at least k={k} feature vectors, got {x.shape[0] if x.ndim == 2 else 0}"
        )
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    z = (x - mean) / std

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(z, k, rng)
    n_iter = 0
    for n_iter in range(1, KMEANS_MAX_ITER + 1):
        assign = _assign(z, centers)
        new_centers = centers.copy()
        for c in range(k):
            members = z[assign == c]
            if members.shape[0] > 0:
                new_centers[c] = members.mean(axis=0)
            else:
                dist = np.sum((z - centers[assign]) ** 2, axis=1)
                far = int(np.argmax(dist))
                new_centers[c] = z[far]
                assign[far] = c
        shift = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if shift < KMEANS_TOL:
            break
    assign = _assign(z, centers)
    inertia = float(np.sum((z - centers[assign]) ** 2))
    return Codebook(k=k, centroids=centers, mean=mean, std=std, seed=seed, n_iter=n_iter, inertia=inertia)


def quantize(feature: np.ndarray, codebook: Codebook) -> int:
    """Index of the nearest centroid (standardized space, ties to lowest index)."""
    z = codebook.standardize(np.atleast_2d(feature))
    return int(_assign(z, codebook.centroids)[0])


def quantize_many(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    z = codebook.standardize(np.atleast_2d(features))
    return _assign(z, codebook.centroids)


def page_bof(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Normalized histogram of the page's word-cluster assignments."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.size == 0 or feats.shape[0] == 0:
        raise EmptyPageError("page has no valid word features")
    assign = quantize_many(feats, codebook)
    counts = np.bincount(assign, minlength=codebook.k).astype(np.float64)
    return counts / feats.shape[0]
