"""Usage-pattern clustering of per-cell availability profiles.

Profiles are canonical-day curves (one value per 10-minute bin, 144 bins),
normalized by each cell's own mean so that above/below-average behaviour is
comparable across cells of very different traffic. Distances are banded
dynamic time warping; clustering is k-medoids (PAM) with silhouette-based
selection of k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import CellId, CellSeries

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
DEFAULT_BAND_RADIUS = 6  # bins; one hour at 10-minute bins


@dataclass(frozen=True)
class CellProfile:
    cell_id: CellId
    values: np.ndarray  # length = bins per day, mean ~ 1


@dataclass(frozen=True)
class ClusterModel:
    k: int
    medoids: tuple[int, ...]  # point indices, ascending
    assignment: np.ndarray  # index into medoids, per point
    total_cost: float
    mean_silhouette: float | None


def build_profile(series: CellSeries, days: int | None = None) -> CellProfile | None:
    """Fold a cell's availability series into a normalized canonical day.

    Bin values are averaged across days slot by slot, then divided by the
    cell's overall mean. Cells with zero overall availability are excluded
    (returns None) since normalization is undefined for them.
    """
    per_day, rem = divmod(SECONDS_PER_DAY, series.bin_s)
    if rem:
        raise ValueError(f"bin duration {series.bin_s}s does not divide a day")
    n_full = len(series.counts) // per_day
    if days is not None:
        n_full = min(n_full, days)
    if n_full < 1:
        raise ValueError("series shorter than one full day")
    folded = (
        np.asarray(series.counts[: n_full * per_day], dtype=float)
        .reshape(n_full, per_day)
        .mean(axis=0)
    )
    overall = folded.mean()
    if overall == 0.0:
        logger.warning("cell %s has zero mean availability, excluded", series.cell_id)
        return None
    return CellProfile(cell_id=series.cell_id, values=folded / overall)


def build_profiles(
    series: Mapping[CellId, CellSeries], days: int | None = None
) -> dict[CellId, CellProfile]:
    out: dict[CellId, CellProfile] = {}
    for cell in sorted(series):
        profile = build_profile(series[cell], days)
        if profile is not None:
            out[cell] = profile
    return out


def dtw_distance(
    a: Sequence[float],
    b: Sequence[float],
    band_radius: int | None = None,
    cost: str = "squared",
) -> float:
    """Banded dynamic-time-warping cost between two equal-length profiles.

    The warping path is confined to |i - j| <= band_radius; a radius of at
    least len - 1 is equivalent to unconstrained DTW, and a radius of 0
    degenerates to the plain pointwise cost along the diagonal. Local cost is
    the squared difference by default ("absolute" is also supported); steps
    are the symmetric match/insert/delete with unit weights.
    """
    n = len(a)
    if n == 0:
        raise ValueError("empty profile")
    if len(b) != n:
        raise ValueError("profiles must have equal length")
    r = n - 1 if band_radius is None else band_radius
    if r < 0:
        raise ValueError("band radius must be non-negative")
    squared = cost == "squared"
    if not squared and cost != "absolute":
        raise ValueError(f"unknown local cost {cost!r}")

    av = [float(x) for x in a]
    bv = [float(x) for x in b]
    inf = float("inf")
    prev: list[float] = []
    for i in range(n):
        curr = [inf] * n
        j_lo = i - r if i > r else 0
        j_hi = i + r if i + r < n - 1 else n - 1
        ai = av[i]
        for j in range(j_lo, j_hi + 1):
            delta = ai - bv[j]
            c = delta * delta if squared else abs(delta)
            if i == 0:
                curr[j] = c if j == 0 else c + curr[j - 1]
                continue
            best = prev[j]
            if j > 0:
                if prev[j - 1] < best:
                    best = prev[j - 1]
                if curr[j - 1] < best:
                    best = curr[j - 1]
            curr[j] = c + best
        prev = curr
    return prev[n - 1]


def distance_matrix(
    profiles: Sequence[CellProfile] | Sequence[np.ndarray],
    band_radius: int = DEFAULT_BAND_RADIUS,
    cost: str = "squared",
) -> np.ndarray:
    """Symmetric pairwise DTW matrix with zero diagonal."""
    values = [p.values if isinstance(p, CellProfile) else np.asarray(p, float) for p in profiles]
    n = len(values)
    d = np.zeros((n, n), dtype=float)
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw_distance(values[i], values[j], band_radius, cost)
    return d


def _total_cost(d: np.ndarray, medoids: Sequence[int]) -> float:
    return float(d[:, list(medoids)].min(axis=1).sum())


def pam_cluster(d: np.ndarray, k: int) -> ClusterModel:
    """Partitioning Around Medoids: greedy BUILD then steepest-descent SWAP.

    Ties always resolve to the lowest index, so runs are reproducible. SWAP
    stops when no single medoid exchange lowers the total distance-to-medoid
    cost.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")

    # BUILD: start from the 1-medoid optimum, then greedily add.
    totals = d.sum(axis=0)
    medoids = [int(np.argmin(totals))]
    nearest = d[:, medoids[0]].copy()
    while len(medoids) < k:
        best_j, best_cost = -1, np.inf
        for j in range(n):
            if j in medoids:
                continue
            cost_j = float(np.minimum(nearest, d[:, j]).sum())
            if cost_j < best_cost:
                best_j, best_cost = j, cost_j
        medoids.append(best_j)
        nearest = np.minimum(nearest, d[:, best_j])

    # SWAP: steepest descent over all (medoid, candidate) exchanges.
    medoids = sorted(medoids)
    current_cost = _total_cost(d, medoids)
    while True:
        best_swap = None
        best_cost = current_cost
        others = [j for j in range(n) if j not in medoids]
        for mi, m in enumerate(medoids):
            rest = medoids[:mi] + medoids[mi + 1 :]
            base = d[:, rest].min(axis=1) if rest else np.full(n, np.inf)
            for h in others:
                cost_h = float(np.minimum(base, d[:, h]).sum())
                if cost_h < best_cost - 1e-12:
                    best_swap, best_cost = (mi, h), cost_h
        if best_swap is None:
            break
        mi, h = best_swap
        medoids[mi] = h
        medoids.sort()
        current_cost = best_cost

    med = np.array(medoids)
    assignment = np.argmin(d[:, med], axis=1)
    assignment[med] = np.arange(k)  # medoids belong to themselves
    sil = silhouette(d, assignment) if k >= 2 else None
    return ClusterModel(
        k=k,
        medoids=tuple(medoids),
        assignment=assignment,
        total_cost=current_cost,
        mean_silhouette=sil,
    )


def silhouette(d: np.ndarray, assignment: Sequence[int]) -> float:
    """Mean silhouette score over all points.

    For every point: a = mean distance to its own cluster (excluding itself),
    b = lowest mean distance to any other cluster, s = (b - a) / max(a, b).
    Points in singleton clusters score 0 by convention.
    """
    d = np.asarray(d, dtype=float)
    labels = np.asarray(assignment)
    unique = np.unique(labels)
    if len(unique) < 2:
        raise ValueError("silhouette requires at least 2 clusters")
    members = {c: np.flatnonzero(labels == c) for c in unique}
    scores = np.zeros(len(labels))
    for i in range(len(labels)):
        own = members[labels[i]]
        if len(own) == 1:
            scores[i] = 0.0
            continue
        a = d[i, own].sum() / (len(own) - 1)
        b = min(d[i, members[c]].mean() for c in unique if c != labels[i])
        m = max(a, b)
        scores[i] = 0.0 if m == 0.0 else (b - a) / m
    return float(scores.mean())


def select_k(
    d: np.ndarray,
    k_range: Iterable[int] = range(2, 9),
) -> tuple[int, ClusterModel]:
    """Pick the cluster count maximizing mean silhouette; ties favour fewer clusters."""
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    best: tuple[int, ClusterModel] | None = None
    for k in k_range:
        if not 2 <= k <= n - 1:
            continue
        model = pam_cluster(d, k)
        if best is None or model.mean_silhouette > best[1].mean_silhouette:
            best = (k, model)
    if best is None:
        raise ValueError("no feasible k in range")
    return best
