"""Set-level diversity and coverage metrics for final samples."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist, pdist

from .errors import TooFewPoints
from .numerics import sym_eig


@dataclass
class ModeReference:
    centers: np.ndarray
    cloud: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.centers.shape[0] < 1:
            raise ValueError("need at least one mode center")
        if self.centers.shape[0] > 1 and np.min(pdist(self.centers)) == 0.0:
            raise ValueError("mode centers must be distinct")

    @property
    def min_separation(self) -> float:
        if self.centers.shape[0] < 2:
            return float("inf")
        return float(np.min(pdist(self.centers)))


@dataclass
class MetricReport:
    vendi: float
    vendi_kernel: str
    vendi_bandwidth: float | None
    coverage: dict[float, float]
    entropy_norm: float
    precision_recall: list[tuple[int, float, float]] = field(default_factory=list)  # (k, precision, recall)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage"] = {repr(float(k)): v for k, v in self.coverage.items()}
        d["precision_recall"] = [list(p) for p in self.precision_recall]
        return d


def median_bandwidth(x) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(x)))
    return med if med > 0 else 1.0


def kernel_matrix(x, kernel: str = "rbf", bandwidth: float | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if kernel == "linear":
        k = x @ x.T
    elif kernel == "rbf":
        h = median_bandwidth(x) if bandwidth is None else bandwidth
        k = np.exp(-cdist(x, x, "sqeuclidean") / (2.0 * h * h))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return np.triu(k) + np.triu(k, 1).T


def vendi_score(features, kernel: str = "rbf", bandwidth: float | None = None) -> float:
    """exp of the Shannon entropy of the unit-trace kernel spectrum."""
    k = kernel_matrix(features, kernel, bandwidth)
    tr = np.trace(k)
    if not tr > 0:
        return 1.0
    lam = sym_eig(k / tr).eigenvalues
    lam = lam[lam > 0]
    return float(np.exp(-np.sum(lam * np.log(lam))))


def coverage_at(samples, ref: ModeReference, taus) -> dict[float, float]:
    """Fraction of mode centers with at least one sample within each tau."""
    d = cdist(ref.centers, np.atleast_2d(samples)).min(axis=1)
    return {float(tau): float(np.mean(d <= tau)) for tau in taus}


def assign_modes(samples, ref: ModeReference) -> np.ndarray:
    # argmin returns the first index on ties, i.e. the lowest center index
    return np.argmin(cdist(np.atleast_2d(samples), ref.centers), axis=1)


def normalized_entropy(samples, ref: ModeReference) -> float:
    """Entropy of the nearest-center histogram divided by log(#centers)."""
    n_modes = ref.centers.shape[0]
    if n_modes < 2:
        return 0.0
    counts = np.bincount(assign_modes(samples, ref), minlength=n_modes)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)) / np.log(n_modes))


def knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    d = cdist(x, x)
    return np.sort(d, axis=1)[:, k]  # column 0 is the point itself


def knn_precision_recall(gen, real, k: int = 3) -> tuple[float, float]:
    """Improved precision/recall from k-NN ball manifold estimates."""
    gen = np.atleast_2d(np.asarray(gen, dtype=np.float64))
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    if k < 1 or k >= min(len(gen), len(real)):
        raise TooFewPoints(f"k={k} needs more than k points in both sets (got {len(gen)}, {len(real)})")
    d = cdist(gen, real)
    precision = np.mean(np.any(d <= knn_radii(real, k)[None, :], axis=1))
    recall = np.mean(np.any(d.T <= knn_radii(gen, k)[None, :], axis=1))
    return float(precision), float(recall)


def kmeans(x, k: int, seed: int = 0, iters: int = 50, restarts: int = 8) -> np.ndarray:
    """k-means++ seeded Lloyd iterations; keeps the restart with the lowest inertia."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(restarts):
        centers, labels = kmeans2(x, k, iter=iters, minit="++", seed=rng)
        inertia = float(np.sum((x - centers[labels]) ** 2))
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


def metric_report(
    samples,
    ref: ModeReference,
    taus=None,
    kernel: str = "rbf",
    bandwidth: float | None = None,
    ks=(3,),
) -> MetricReport:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if taus is None:
        taus = [0.5 * ref.min_separation]
    if kernel == "rbf" and bandwidth is None:
        bandwidth = median_bandwidth(samples)
    pr = []
    if ref.cloud is not None:
        for k in ks:
            if k < min(len(samples), len(ref.cloud)):
                pr.append((int(k), *knn_precision_recall(samples, ref.cloud, k)))
    return MetricReport(
        vendi=vendi_score(samples, kernel, bandwidth),
        vendi_kernel=kernel,
        vendi_bandwidth=bandwidth if kernel == "rbf" else None,
        coverage=coverage_at(samples, ref, taus),
        entropy_norm=normalized_entropy(samples, ref),
        precision_recall=pr,
    )
