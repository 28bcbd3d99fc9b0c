"""
Point clouds, ground metrics, covers and packings on subsets of [0,1]^d
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from utils import (DimensionMismatchError, DomainError, EmptyInputError,
                   ValidationError, run_parallel)

logger = logging.getLogger(__name__)

GEOMETRY_CONFIG = {
    'domain_tolerance': 1e-12,   # slack for coordinates just outside [0,1]
    'cover_tolerance': 1e-12,    # relative slack on ball radii
}


class GroundMetric(str, Enum):
    LINF = "linf"
    L2 = "l2"

    @property
    def minkowski_p(self) -> float:
        return math.inf if self is GroundMetric.LINF else 2.0

    @property
    def cdist_name(self) -> str:
        return "chebyshev" if self is GroundMetric.LINF else "euclidean"


def as_metric(metric) -> GroundMetric:
    if isinstance(metric, GroundMetric):
        return metric
    try:
        return GroundMetric(str(metric).lower())
    except ValueError:
        raise ValidationError(f"unknown metric {metric!r} (use linf or l2)")


@dataclass(frozen=True)
class PointCloud:
    """Finite set of points in [0,1]^d with its ground metric."""
    points: np.ndarray
    metric: GroundMetric = GroundMetric.LINF

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def as_point_cloud(points, metric=GroundMetric.LINF, check_domain: bool = True) -> PointCloud:
    """Validate an array-like of points (1-D input is read as points on a line)."""
    if isinstance(points, PointCloud):
        return points
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyInputError("point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError("point coordinates must be finite")
    if check_domain:
        tol = GEOMETRY_CONFIG['domain_tolerance']
        if arr.min() < -tol or arr.max() > 1 + tol:
            raise DomainError("points must lie in [0,1]^d")
    return PointCloud(points=arr, metric=as_metric(metric))


@dataclass
class Cover:
    """Centers with a common radius; covered mass is 1 for plain point covers."""
    centers: np.ndarray
    radius: float
    metric: GroundMetric = GroundMetric.LINF
    covered_mass: float = 1.0
    uncovered_mass: float = 0.0
    method: str = "greedy"
    assignment: Optional[np.ndarray] = None
    stop_counts: Optional[List[int]] = None

    @property
    def cardinality(self) -> int:
        return int(self.centers.shape[0])

    def to_dict(self, include_centers: bool = False) -> Dict:
        out = {
            'cardinality': self.cardinality,
            'radius': self.radius,
            'metric': self.metric.value,
            'method': self.method,
            'covered_mass': self.covered_mass,
            'uncovered_mass': self.uncovered_mass,
        }
        if include_centers:
            out['centers'] = self.centers.tolist()
        return out


@dataclass
class Packing:
    points: np.ndarray
    radius: float
    metric: GroundMetric = GroundMetric.LINF
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def to_dict(self, include_points: bool = False) -> Dict:
        out = {'size': self.size, 'radius': self.radius, 'metric': self.metric.value}
        if include_points:
            out['points'] = self.points.tolist()
        return out


def distance(x, y, metric=GroundMetric.LINF) -> float:
    """Distance between two points under the ground metric."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionMismatchError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    diff = np.abs(x - y)
    if as_metric(metric) is GroundMetric.LINF:
        return float(diff.max()) if diff.size else 0.0
    return float(np.sqrt(np.sum(diff ** 2)))


def pairwise_distances(X, Y, metric=GroundMetric.LINF) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return cdist(X, Y, metric=as_metric(metric).cdist_name)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not eps > 0 or not math.isfinite(eps):
        raise ValidationError(f"eps must be a positive finite number, got {eps}")
    return eps


def grid_cells(points: np.ndarray, eps: float) -> np.ndarray:
    """
    Integer index of the side-2ε grid cell holding each point, grid anchored
    at 0. The last cell in each axis is closed at 1.
    """
    side = 2.0 * eps
    per_axis = max(1, math.ceil(1.0 / side - 1e-12))
    idx = np.floor(points / side).astype(np.int64)
    return np.clip(idx, 0, per_axis - 1)


def grid_cover(points, eps: float) -> Cover:
    """
    Cover by the occupied cells of an axis-aligned grid of side 2ε.

    Each cell is an ℓ∞ ball of radius ε around its midpoint, so the result
    is a valid ℓ∞ cover with radius eps.
    """
    cloud = as_point_cloud(points)
    eps = _check_eps(eps)
    cells = grid_cells(cloud.points, eps)
    occupied, assignment = np.unique(cells, axis=0, return_inverse=True)
    centers = (2.0 * occupied + 1.0) * eps
    return Cover(centers=centers, radius=eps, metric=GroundMetric.LINF,
                 method="grid", assignment=np.asarray(assignment).ravel())


def _neighbor_lists(points: np.ndarray, radius: float, metric: GroundMetric) -> np.ndarray:
    tree = cKDTree(points)
    r = radius * (1.0 + GEOMETRY_CONFIG['cover_tolerance'])
    return tree.query_ball_point(points, r=r, p=metric.minkowski_p)


def greedy_cover(points, eps: float, metric=GroundMetric.LINF,
                 weights: Optional[Sequence[float]] = None,
                 target_mass: Optional[float] = None,
                 outside_mass: float = 0.0,
                 stop_masses: Optional[Sequence[float]] = None) -> Cover:
    """
    Greedy set cover with balls centered on the input points.

    Repeatedly picks the ball covering the most uncovered weight (lowest
    index on ties). Without weights every point weighs 1 and the cover is
    complete. With weights and target_mass the loop stops once the
    uncovered weight plus outside_mass drops to 1 - target_mass.

    stop_masses, when given, lists several targets at once; the returned
    cover stops at the largest and cover.stop_counts holds the ball count at
    which each target was first met.
    """
    cloud = as_point_cloud(points, metric=metric, check_domain=False)
    metric = as_metric(metric)
    eps = _check_eps(eps)
    X = cloud.points
    n = X.shape[0]

    if weights is None:
        w = np.ones(n)
        total = float(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != n or np.any(w < 0):
            raise ValidationError("weights must be nonnegative, one per point")
        total = 1.0

    if stop_masses is None:
        stop_masses = [1.0 if target_mass is None else float(target_mass)]
    # uncovered weight allowed at each stop, measured in the units of w
    allowances = [max(0.0, (1.0 - m) * total - outside_mass) for m in stop_masses]
    if weights is None:
        allowances = [0.0 for _ in stop_masses]

    neighbors = _neighbor_lists(X, eps, metric)
    lengths = np.fromiter((len(nb) for nb in neighbors), dtype=np.int64, count=n)
    flat = np.concatenate([np.asarray(nb, dtype=np.int64) for nb in neighbors]) if n else np.zeros(0, np.int64)
    owners = np.repeat(np.arange(n), lengths)
    gains = np.bincount(owners, weights=w[flat], minlength=n)

    covered = np.zeros(n, dtype=bool)
    chosen: List[int] = []
    stop_counts: List[Optional[int]] = [None] * len(allowances)
    offsets = np.concatenate([[0], np.cumsum(lengths)])

    def record_stops() -> bool:
        uncovered = float(np.sum(w[~covered]))
        for k, allowance in enumerate(allowances):
            if stop_counts[k] is None and uncovered <= allowance * (1 + 1e-12) + 1e-300:
                stop_counts[k] = len(chosen)
        return all(c is not None for c in stop_counts)

    done = record_stops()
    while not done:
        if covered.all():
            break
        best = int(np.argmax(gains))
        if gains[best] <= 0:
            # only zero-weight points remain uncovered
            remaining = np.flatnonzero(~covered)
            best = int(remaining[0])
        chosen.append(best)
        members = np.asarray(neighbors[best], dtype=np.int64)
        fresh = members[~covered[members]]
        covered[fresh] = True
        if fresh.size:
            idx = np.concatenate([flat[offsets[j]:offsets[j + 1]] for j in fresh])
            amounts = np.repeat(w[fresh], lengths[fresh])
            np.subtract.at(gains, idx, amounts)
        done = record_stops()

    for k in range(len(stop_counts)):
        if stop_counts[k] is None:
            stop_counts[k] = len(chosen)

    covered_weight = float(np.sum(w[covered]))
    if weights is None:
        covered_mass, uncovered_mass = 1.0, 0.0
    else:
        uncovered_mass = float(np.sum(w[~covered])) + outside_mass
        covered_mass = covered_weight
    cover = Cover(centers=X[chosen].copy(), radius=eps, metric=metric,
                  covered_mass=covered_mass, uncovered_mass=uncovered_mass,
                  method="greedy")
    cover.stop_counts = stop_counts
    return cover


def greedy_packing(points, eps: float, metric=GroundMetric.LINF) -> Packing:
    """
    Maximal packing by a single pass in input order: a point joins unless
    some already chosen point lies closer than eps.
    """
    cloud = as_point_cloud(points, metric=metric, check_domain=False)
    metric = as_metric(metric)
    eps = _check_eps(eps)
    X = cloud.points
    tree = cKDTree(X)

    blocked = np.zeros(X.shape[0], dtype=bool)
    chosen: List[int] = []
    for i in range(X.shape[0]):
        if blocked[i]:
            continue
        chosen.append(i)
        near = np.asarray(tree.query_ball_point(X[i], r=eps, p=metric.minkowski_p), dtype=np.int64)
        if near.size:
            d = pairwise_distances(X[i:i + 1], X[near], metric)[0]
            blocked[near[d < eps]] = True

    idx = np.asarray(chosen, dtype=np.int64)
    return Packing(points=X[idx].copy(), radius=eps, metric=metric, indices=idx)


def is_valid_cover(points, cover: Cover, metric=None) -> bool:
    """True when every point lies within the cover radius of some center."""
    cloud = as_point_cloud(points, check_domain=False)
    metric = as_metric(metric if metric is not None else cover.metric)
    if cover.cardinality == 0:
        return False
    tree = cKDTree(cover.centers)
    dist, _ = tree.query(cloud.points, k=1, p=metric.minkowski_p)
    return bool(np.all(dist <= cover.radius * (1 + GEOMETRY_CONFIG['cover_tolerance']) + 1e-15))


def covering_profile(points, eps_grid: Sequence[float], method: str = "grid",
                     metric=GroundMetric.LINF, threads: Optional[int] = None) -> List[Dict]:
    """Cover (or packing) sizes across scales, merged in scale order."""
    cloud = as_point_cloud(points, metric=metric)
    if method not in ("grid", "greedy", "packing"):
        raise ValidationError(f"unknown cover method {method!r}")

    def one_scale(eps: float) -> Dict:
        if method == "grid":
            size = grid_cover(cloud, eps).cardinality
        elif method == "greedy":
            size = greedy_cover(cloud, eps, metric).cardinality
        else:
            size = greedy_packing(cloud, eps, metric).size
        logger.info(f"{method} cover at eps={eps:.3g}: {size}")
        return {'eps': float(eps), 'count': int(size)}

    return run_parallel(one_scale, list(eps_grid), threads, label="scale")
