"""City-level indicator analysis: PCA of modal splits and k-means grouping.

Indicator values (modal shares plus general city statistics) are supplied
via a CSV config file; this module only provides the numerics.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MODES = ("car", "moto", "pt", "bike", "walk")


@dataclass(frozen=True)
class CityIndicators:
    city_id: str
    gdp_per_capita: float
    population: float
    area_km2: float
    population_density: float
    education: float
    mode_shares: dict[str, float]

    def __post_init__(self) -> None:
        total = sum(self.mode_shares.get(m, 0.0) for m in MODES)
        if abs(total - 1.0) > 0.02:
            raise ValueError(f"{self.city_id}: modal shares sum to {total:.3f}, expected 1")


def load_city_indicators(path: str | Path) -> list[CityIndicators]:
    """Read the indicators CSV (columns: city, car, moto, pt, bike, walk,
    gdp_per_capita, population, area_km2, population_density, education)."""
    cities: list[CityIndicators] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cities.append(
                CityIndicators(
                    city_id=row["city"],
                    gdp_per_capita=float(row["gdp_per_capita"]),
                    population=float(row["population"]),
                    area_km2=float(row["area_km2"]),
                    population_density=float(row["population_density"]),
                    education=float(row["education"]),
                    mode_shares={m: float(row[m]) for m in MODES},
                )
            )
    return cities


def modal_share_matrix(cities: Sequence[CityIndicators]) -> np.ndarray:
    return np.array([[c.mode_shares[m] for m in MODES] for c in cities], dtype=float)


@dataclass(frozen=True)
class PcaResult:
    loadings: np.ndarray  # columns are components, orthonormal
    scores: np.ndarray  # centered (or standardized) data projected on loadings
    explained_variance: np.ndarray  # descending eigenvalues


def pca(data: np.ndarray, standardize: bool = True) -> PcaResult:
    """Full principal-component decomposition via the symmetric eigensolver.

    Components are sorted by descending explained variance; each component's
    sign is fixed so that its largest-magnitude loading is positive.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise ValueError("need an n x p matrix with n >= 2, p >= 1")
    x = x - x.mean(axis=0)
    if standardize:
        sd = x.std(axis=0, ddof=1)
        if np.any(sd == 0.0):
            raise ValueError("zero-variance column cannot be standardized")
        x = x / sd
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        if eigvecs[np.argmax(np.abs(eigvecs[:, j])), j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return PcaResult(
        loadings=eigvecs,
        scores=x @ eigvecs,
        explained_variance=np.maximum(eigvals, 0.0),
    )


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wss: float
    wss_history: tuple[float, ...]
    n_iter: int


def _wss(points: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    return float(((points - centroids[assignments]) ** 2).sum())


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    init_centroids: np.ndarray | None = None,
) -> KMeansResult:
    """Lloyd's algorithm from a seeded random initialization.

    An emptied cluster is re-seeded at the point farthest from its assigned
    centroid, which keeps k populated clusters at all times.
    """
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=float, copy=True)
        if centroids.shape != (k, x.shape[1]):
            raise ValueError("init_centroids has wrong shape")
    else:
        rng = np.random.default_rng(seed)
        centroids = x[rng.choice(n, size=k, replace=False)].copy()

    history: list[float] = []
    assignments = np.zeros(n, dtype=int)
    for it in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignments = np.argmin(d2, axis=1)
        for c in range(k):
            members = new_assignments == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                farthest = int(np.argmax(d2[np.arange(n), new_assignments]))
                centroids[c] = x[farthest]
                new_assignments[farthest] = c
        history.append(_wss(x, centroids, new_assignments))
        if it > 0 and np.array_equal(new_assignments, assignments):
            assignments = new_assignments
            break
        assignments = new_assignments
    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        wss=history[-1],
        wss_history=tuple(history),
        n_iter=len(history),
    )


def wss_curve(
    points: np.ndarray,
    k_values: Iterable[int],
    restarts: int = 10,
    seed: int = 0,
) -> dict[int, KMeansResult]:
    """Best-of-restarts k-means per k.

    Besides the random restarts, each k also warm-starts from the previous
    k's best centroids plus the farthest point, so the resulting WSS curve is
    non-increasing in k.
    """
    x = np.asarray(points, dtype=float)
    results: dict[int, KMeansResult] = {}
    prev_best: KMeansResult | None = None
    for k in sorted(k_values):
        candidates = [kmeans(x, k, seed=seed * 10007 + k * 101 + r) for r in range(restarts)]
        if prev_best is not None and prev_best.centroids.shape[0] == k - 1:
            d2 = ((x[:, None, :] - prev_best.centroids[None, :, :]) ** 2).sum(axis=2)
            farthest = int(np.argmax(d2.min(axis=1)))
            warm = np.vstack([prev_best.centroids, x[farthest]])
            candidates.append(kmeans(x, k, init_centroids=warm))
        best = min(candidates, key=lambda r: r.wss)
        results[k] = best
        prev_best = best
    return results


def select_k_wss(
    points: np.ndarray,
    k_range: Iterable[int] = range(1, 7),
    restarts: int = 10,
    seed: int = 0,
    improvement_threshold: float = 0.2,
) -> int:
    """Elbow rule on the within-sum-of-squares curve.

    Returns the smallest k whose relative improvement when moving to k + 1
    falls below the threshold; exact zero WSS short-circuits (the data is
    already perfectly explained). Both tests are scale-invariant.
    """
    ks = sorted(k_range)
    curve = wss_curve(points, ks + [max(ks) + 1], restarts=restarts, seed=seed)
    for k in ks:
        wss_k = curve[k].wss
        if wss_k == 0.0:
            return k
        improvement = (wss_k - curve[k + 1].wss) / wss_k
        if improvement < improvement_threshold:
            return k
    return ks[-1]
