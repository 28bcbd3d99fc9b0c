"""
Intrinsic dimension estimators
(eps, tau)-cover counts, entropic / Wasserstein / Minkowski slope estimates and
analytic reference values for the measure zoo
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry import Cover, GroundMetric, as_metric, covering_profile, greedy_cover
from measures import (LATTICE_KINDS, MeasureKind, MeasureSpec, axis_interval_masses,
                      cantor_dimension, make_discrete, sample, truncate)
from utils import (CapExceededError, DegenerateGridError, RegimeError, ValidationError,
                   WassdimError, linear_regression, run_parallel)

logger = logging.getLogger(__name__)

DIMENSION_CONFIG = {
    'default_eps_grid': [2.0 ** -k for k in range(3, 11)],
    'default_tau_grid': [0.2, 0.1, 0.05, 0.01],
    'sample_budget': 100000,      # points backing covers of continuous pushforwards
    'sample_seed': 0,
    'tau_floor': 1e-15,
    'min_scales': 4,
    'min_decades': 1.5,
    'atom_bin_threshold': 4000,   # atom lists above this size are binned before greedy
    'bin_fraction': 0.25,         # bin side as a fraction of eps
    'max_cells': 2000000,         # materialized grid cells for explicit covers
    's_step': 0.05,
    's_span': 2.0,
    'order_tolerance': 0.3,
}

UNKNOWN = "unknown"


@dataclass
class DimensionEstimate:
    """Finite-scale dimension estimate labelled by its scale window."""
    value: float
    eps_grid: List[float]
    counts: List[Dict]
    fit_stderr: float
    method: str                  # "slope_fit" or "s_grid_scan"
    kind: str
    alpha: Optional[float] = None
    details: Dict = field(default_factory=dict)

    @property
    def window(self) -> Tuple[float, float]:
        return min(self.eps_grid), max(self.eps_grid)

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind,
            'value': self.value,
            'fit_stderr': self.fit_stderr,
            'method': self.method,
            'alpha': self.alpha,
            'eps_grid': list(self.eps_grid),
            'window': list(self.window),
            'counts': self.counts,
            'details': self.details,
        }


def check_eps_grid(eps_grid: Optional[Sequence[float]]) -> List[float]:
    """Validate a scale grid and return it sorted from coarse to fine."""
    grid = list(DIMENSION_CONFIG['default_eps_grid'] if eps_grid is None else eps_grid)
    if any(not (0.0 < e < 1.0) for e in grid):
        raise DegenerateGridError("scales must lie in (0, 1)")
    grid = sorted(set(float(e) for e in grid), reverse=True)
    if len(grid) < DIMENSION_CONFIG['min_scales']:
        raise DegenerateGridError(f"need at least {DIMENSION_CONFIG['min_scales']} distinct scales, got {len(grid)}")
    decades = math.log10(grid[0] / grid[-1])
    if decades < DIMENSION_CONFIG['min_decades'] - 1e-9:
        raise DegenerateGridError(f"scales span {decades:.2f} decades, need {DIMENSION_CONFIG['min_decades']}")
    return grid


# ---------------------------------------------------------------------------
# (eps, tau)-covers


def _floor_tau(tau: float) -> float:
    if not 0.0 <= tau < 1.0:
        raise ValidationError(f"tau must lie in [0,1), got {tau}")
    return max(tau, DIMENSION_CONFIG['tau_floor'])


def _bin_points(X: np.ndarray, w: np.ndarray, eps: float, metric: GroundMetric):
    """Merge points into cubic bins of side eps*bin_fraction; returns centers, weights, shrunk radius."""
    h = eps * DIMENSION_CONFIG['bin_fraction']
    cells = np.floor(X / h).astype(np.int64)
    occupied, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    weights = np.bincount(inverse, weights=w, minlength=occupied.shape[0])
    centers = (occupied + 0.5) * h
    half = h / 2.0 if metric is GroundMetric.LINF else h * math.sqrt(X.shape[1]) / 2.0
    return centers, weights, eps - half


def _atom_cover(spec: MeasureSpec, eps: float, taus: Sequence[float], metric: GroundMetric) -> Cover:
    if spec.kind in LATTICE_KINDS:
        dm = truncate(spec, min(taus) / 2.0)
        X, w, tail = dm.atoms, dm.weights * dm.captured_mass, dm.tail_mass
    else:
        X, w, tail = spec.atoms, spec.weights, 0.0
    merged = make_discrete(X, w)
    X, w = merged.atoms, merged.weights * math.fsum(w)

    radius = eps
    if X.shape[0] > DIMENSION_CONFIG['atom_bin_threshold']:
        X, w, radius = _bin_points(X, w, eps, metric)
    cover = greedy_cover(X, radius, metric, weights=w, outside_mass=tail,
                         stop_masses=[1.0 - t for t in taus])
    cover.radius = eps
    cover.method = "atom_greedy"
    return cover


def _sample_cover(spec: MeasureSpec, eps: float, taus: Sequence[float], metric: GroundMetric,
                  budget: int, seed: int) -> Cover:
    if min(taus) < 1.0 / budget:
        raise RegimeError(f"tau={min(taus):.3g} is below the resolution 1/{budget} of the sample budget")
    X = sample(spec, budget, seed=seed)
    centers, w, radius = _bin_points(X, np.full(budget, 1.0 / budget), eps, metric)
    cover = greedy_cover(centers, radius, metric, weights=w, stop_masses=[1.0 - t for t in taus])
    cover.radius = eps
    cover.method = "sample_greedy"
    return cover


def _cell_side(spec: MeasureSpec, eps: float, metric: GroundMetric) -> float:
    return 2.0 * eps if metric is GroundMetric.LINF else 2.0 * eps / math.sqrt(spec.dim)


def axis_cells(side: float) -> Tuple[np.ndarray, np.ndarray]:
    """Edges of the side-wide grid on [0,1] anchored at 0, last cell ending at 1."""
    k = max(1, math.ceil(1.0 / side - 1e-12))
    lo = np.arange(k) * side
    hi = np.minimum(lo + side, 1.0)
    hi[-1] = 1.0
    return lo, hi


def _significant(values: np.ndarray, digits: int = 12) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    nz = values > 0
    exp = np.floor(np.log10(values[nz]))
    out[nz] = np.round(values[nz] / 10.0 ** exp, digits - 1) * 10.0 ** exp
    return out


def _group_masses(values: np.ndarray, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse equal (to 12 significant digits) masses, dropping zeros."""
    keep = values > 0
    values, counts = values[keep], counts[keep]
    keys, inverse = np.unique(_significant(values), return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    total = np.bincount(inverse, weights=values * counts, minlength=keys.shape[0])
    mult = np.bincount(inverse, weights=counts, minlength=keys.shape[0])
    return total / mult, mult


def _cell_counts(spec: MeasureSpec, eps: float, taus: Sequence[float], metric: GroundMetric) -> List[int]:
    """
    Exact greedy-by-mass counts over the grid cells of a product measure,
    computed from per-axis mass multisets without materializing the grid.
    """
    side = _cell_side(spec, eps, metric)
    lo, hi = axis_cells(side)
    values, counts = np.ones(1), np.ones(1)
    for axis in range(spec.dim):
        axis_vals, axis_counts = _group_masses(axis_interval_masses(spec, axis, lo, hi),
                                               np.ones(lo.shape[0]))
        values, counts = _group_masses(np.outer(values, axis_vals).ravel(),
                                       np.outer(counts, axis_counts).ravel())

    order = np.argsort(-values, kind="stable")
    values, counts = values[order], counts[order]
    cum = np.cumsum(values * counts)
    before = np.concatenate([[0], np.cumsum(counts)])
    out = []
    for tau in taus:
        target = 1.0 - tau
        g = int(np.searchsorted(cum, target, side="left"))
        if g >= values.shape[0]:
            out.append(int(before[-1]))
            continue
        prior = cum[g - 1] if g > 0 else 0.0
        need = math.ceil((target - prior) / values[g] - 1e-9)
        out.append(int(before[g] + min(max(need, 1), counts[g])))
    return out


def _cell_cover(spec: MeasureSpec, eps: float, tau: float, metric: GroundMetric) -> Cover:
    side = _cell_side(spec, eps, metric)
    lo, hi = axis_cells(side)
    total_cells = lo.shape[0] ** spec.dim
    if total_cells > DIMENSION_CONFIG['max_cells']:
        raise CapExceededError(f"{total_cells} grid cells exceed the cap {DIMENSION_CONFIG['max_cells']}")
    axis_masses = [axis_interval_masses(spec, axis, lo, hi) for axis in range(spec.dim)]
    mids = (lo + hi) / 2.0
    idx = np.stack(np.meshgrid(*[np.arange(lo.shape[0])] * spec.dim, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    masses = np.ones(idx.shape[0])
    for axis in range(spec.dim):
        masses *= axis_masses[axis][idx[:, axis]]
    order = np.argsort(-masses, kind="stable")
    need = _cell_counts(spec, eps, [tau], metric)[0]
    chosen = order[:need]
    covered = float(math.fsum(masses[chosen]))
    return Cover(centers=mids[idx[chosen]], radius=eps, metric=metric, covered_mass=covered,
                 uncovered_mass=max(0.0, 1.0 - covered), method="product_cells")


def eps_tau_cover(spec: MeasureSpec, eps: float, tau: float, metric=GroundMetric.LINF,
                  budget: Optional[int] = None, seed: Optional[int] = None) -> Cover:
    """
    An eps-cover of a set carrying mass at least 1 - tau.

    Discrete kinds run a mass-weighted greedy over the (truncated) atom list,
    product kinds take whole grid cells in decreasing mass order, and
    pushforwards run the weighted greedy over a binned sample.
    """
    metric = as_metric(metric)
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    tau = _floor_tau(tau)
    if spec.kind in LATTICE_KINDS or spec.kind is MeasureKind.DISCRETE_ATOMS:
        return _atom_cover(spec, eps, [tau], metric)
    if spec.kind is MeasureKind.PUSHFORWARD:
        return _sample_cover(spec, eps, [tau], metric, budget or DIMENSION_CONFIG['sample_budget'],
                             DIMENSION_CONFIG['sample_seed'] if seed is None else seed)
    return _cell_cover(spec, eps, tau, metric)


def eps_tau_cover_counts(spec: MeasureSpec, eps: float, taus: Sequence[float], metric=GroundMetric.LINF,
                         budget: Optional[int] = None, seed: Optional[int] = None) -> List[int]:
    """Cover counts for several tau from a single greedy sequence, so counts never increase with tau."""
    metric = as_metric(metric)
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    floored = [_floor_tau(t) for t in taus]
    if spec.kind in LATTICE_KINDS or spec.kind is MeasureKind.DISCRETE_ATOMS:
        return list(_atom_cover(spec, eps, floored, metric).stop_counts)
    if spec.kind is MeasureKind.PUSHFORWARD:
        cover = _sample_cover(spec, eps, floored, metric, budget or DIMENSION_CONFIG['sample_budget'],
                              DIMENSION_CONFIG['sample_seed'] if seed is None else seed)
        return list(cover.stop_counts)
    return _cell_counts(spec, eps, floored, metric)


def eps_tau_cover_count(spec: MeasureSpec, eps: float, tau: float, budget: Optional[int] = None,
                        metric=GroundMetric.LINF, seed: Optional[int] = None) -> int:
    """Upper bound on the (eps, tau)-covering number of spec."""
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"tau must lie in (0,1), got {tau}")
    return eps_tau_cover_counts(spec, eps, [tau], metric, budget, seed)[0]


# ---------------------------------------------------------------------------
# Estimators


def _slope_estimate(kind: str, eps_grid: List[float], counts: List[int], rows: List[Dict],
                    alpha: Optional[float]) -> DimensionEstimate:
    fit = linear_regression([math.log(1.0 / e) for e in eps_grid], [math.log(c) for c in counts])
    return DimensionEstimate(value=max(0.0, fit['slope']), eps_grid=eps_grid, counts=rows,
                             fit_stderr=fit['stderr'], method="slope_fit", kind=kind, alpha=alpha,
                             details={'intercept': fit['intercept'], 'r_squared': fit['r_squared'],
                                      'raw_slope': fit['slope']})


def entropic_dim_estimate(spec: MeasureSpec, alpha: float, eps_grid: Optional[Sequence[float]] = None,
                          metric=GroundMetric.LINF, budget: Optional[int] = None,
                          seed: Optional[int] = None, threads: Optional[int] = None) -> DimensionEstimate:
    """Least-squares slope of log N(eps, eps^alpha) against log(1/eps)."""
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    grid = check_eps_grid(eps_grid)

    def count(eps: float) -> int:
        value = eps_tau_cover_count(spec, eps, eps ** alpha, budget, metric, seed)
        logger.info(f"entropic count eps={eps:.4g} tau={eps ** alpha:.3g}: {value}")
        return value

    counts = run_parallel(count, grid, threads, label="scale")
    rows = [{'eps': e, 'tau': e ** alpha, 'count': c} for e, c in zip(grid, counts)]
    return _slope_estimate("entropic", grid, counts, rows, alpha)


def default_s_grid(alpha: float, dim: int) -> List[float]:
    step = DIMENSION_CONFIG['s_step']
    top = max(dim, 2 * alpha) + DIMENSION_CONFIG['s_span']
    count = int(math.floor((top - 2 * alpha) / step + 1e-9))
    return [round(2 * alpha + step * k, 10) for k in range(1, count + 1)]


def wasserstein_upper_dim_estimate(spec: MeasureSpec, alpha: float, eps_grid: Optional[Sequence[float]] = None,
                                   s_grid: Optional[Sequence[float]] = None, metric=GroundMetric.LINF,
                                   budget: Optional[int] = None, seed: Optional[int] = None,
                                   threads: Optional[int] = None) -> DimensionEstimate:
    """
    Smallest s in s_grid (every candidate above 2 alpha) with
    N(eps, eps^(s alpha / (s - 2 alpha))) <= eps^-s at every grid scale;
    +inf when no candidate passes.
    """
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    grid = check_eps_grid(eps_grid)
    candidates = default_s_grid(alpha, spec.dim) if s_grid is None else sorted(float(s) for s in s_grid)
    admissible = [s for s in candidates if s > 2 * alpha]
    if not candidates:
        raise DegenerateGridError("empty candidate exponent grid")
    if len(admissible) < len(candidates):
        raise DegenerateGridError(f"candidate exponents must exceed 2*alpha = {2 * alpha}, "
                                  f"got {min(candidates)}")

    def counts_at(eps: float) -> List[int]:
        taus = [eps ** (s * alpha / (s - 2 * alpha)) for s in admissible]
        return eps_tau_cover_counts(spec, eps, taus, metric, budget, seed)

    per_scale = run_parallel(counts_at, grid, threads, label="scale")
    accepted = math.inf
    rows = []
    for i, s in enumerate(admissible):
        ok = all(per_scale[j][i] <= eps ** (-s) * (1 + 1e-9) for j, eps in enumerate(grid))
        rows.extend({'eps': eps, 's': s, 'tau': max(eps ** (s * alpha / (s - 2 * alpha)), DIMENSION_CONFIG['tau_floor']),
                     'count': per_scale[j][i], 'threshold': eps ** (-s)} for j, eps in enumerate(grid))
        if ok:
            accepted = round(s, 10)
            break
    logger.info(f"upper Wasserstein scan at alpha={alpha}: accepted s={accepted}")
    return DimensionEstimate(value=accepted, eps_grid=grid, counts=rows, fit_stderr=0.0,
                             method="s_grid_scan", kind="wupper", alpha=alpha,
                             details={'s_grid': admissible})


def support_cell_count(spec: MeasureSpec, eps: float) -> int:
    """Occupied side-2eps grid cells of the support of a product measure."""
    lo, hi = axis_cells(2.0 * eps)
    count = 1
    for axis in range(spec.dim):
        count *= int(np.count_nonzero(axis_interval_masses(spec, axis, lo, hi) > 0))
    return count


def minkowski_dim_estimate(points, eps_grid: Optional[Sequence[float]] = None,
                           threads: Optional[int] = None) -> DimensionEstimate:
    """Box-counting slope of a point cloud (full-support covers, tau = 0)."""
    grid = check_eps_grid(eps_grid)
    profile = covering_profile(points, grid, method="grid", threads=threads)
    counts = [row['count'] for row in profile]
    rows = [{'eps': row['eps'], 'tau': 0.0, 'count': row['count']} for row in profile]
    return _slope_estimate("minkowski", grid, counts, rows, None)


def support_minkowski_estimate(spec: MeasureSpec, eps_grid: Optional[Sequence[float]] = None,
                               budget: Optional[int] = None, seed: Optional[int] = None,
                               threads: Optional[int] = None) -> DimensionEstimate:
    """Minkowski estimate of a spec: exact occupied cells for product kinds, else a point cloud."""
    grid = check_eps_grid(eps_grid)
    if spec.kind in LATTICE_KINDS or spec.kind in (MeasureKind.UNIFORM_CUBE, MeasureKind.CANTOR_PRODUCT):
        counts = [support_cell_count(spec, e) for e in grid]
        rows = [{'eps': e, 'tau': 0.0, 'count': c} for e, c in zip(grid, counts)]
        return _slope_estimate("minkowski", grid, counts, rows, None)
    if spec.kind is MeasureKind.DISCRETE_ATOMS:
        return minkowski_dim_estimate(spec.atoms, grid, threads)
    points = sample(spec, budget or DIMENSION_CONFIG['sample_budget'],
                    seed=DIMENSION_CONFIG['sample_seed'] if seed is None else seed)
    return minkowski_dim_estimate(points, grid, threads)


def lower_wasserstein_dim_estimate(spec: MeasureSpec, tau_grid: Optional[Sequence[float]] = None,
                                   eps_grid: Optional[Sequence[float]] = None, metric=GroundMetric.LINF,
                                   budget: Optional[int] = None, seed: Optional[int] = None,
                                   threads: Optional[int] = None) -> DimensionEstimate:
    """Minimum over tau of the slope of log N(eps, tau) against log(1/eps)."""
    grid = check_eps_grid(eps_grid)
    taus = sorted(set(float(t) for t in (tau_grid or DIMENSION_CONFIG['default_tau_grid'])), reverse=True)
    if not taus or any(not 0.0 < t < 1.0 for t in taus):
        raise DegenerateGridError("tau grid must be nonempty with values in (0,1)")

    per_scale = run_parallel(lambda eps: eps_tau_cover_counts(spec, eps, taus, metric, budget, seed),
                             grid, threads, label="scale")
    best: Optional[DimensionEstimate] = None
    slopes = {}
    rows = []
    for i, tau in enumerate(taus):
        counts = [per_scale[j][i] for j in range(len(grid))]
        rows.extend({'eps': e, 'tau': tau, 'count': c} for e, c in zip(grid, counts))
        est = _slope_estimate("wlower", grid, counts, [], None)
        slopes[str(tau)] = est.value
        if best is None or est.value < best.value:
            best = est
    best.counts = rows
    best.details['per_tau_slopes'] = slopes
    best.details['tau_grid'] = taus
    return best


# ---------------------------------------------------------------------------
# Reference values


def oracle_dims(spec: MeasureSpec, alpha: float = 1.0) -> Dict:
    """Known analytic dimensions of zoo measures, "unknown" where none is asserted."""
    out = {'entropic': UNKNOWN, 'wupper': UNKNOWN, 'wlower': UNKNOWN, 'minkowski': UNKNOWN,
           'alpha': alpha, 'notes': []}
    if spec.kind is MeasureKind.GEOMETRIC_LATTICE:
        out.update({'entropic': 0.0, 'wupper': 2 * alpha, 'wlower': 0.0, 'minkowski': 0.0})
    elif spec.kind is MeasureKind.RECIPROCAL_LATTICE:
        out['minkowski'] = spec.dim / 2.0
        out['notes'].append("weights 2^-(n_1+...+n_d) chosen for an ambiguous definition; "
                            "only the support dimension is asserted")
    elif spec.kind is MeasureKind.DISCRETE_ATOMS:
        out.update({'entropic': 0.0, 'wupper': 2 * alpha, 'wlower': 0.0, 'minkowski': 0.0})
    elif spec.kind is MeasureKind.UNIFORM_CUBE:
        d = float(spec.dim)
        out.update({'entropic': d, 'wupper': max(d, 2 * alpha), 'wlower': d, 'minkowski': d})
    elif spec.kind is MeasureKind.CANTOR_PRODUCT:
        dstar = spec.cantor_factors * cantor_dimension(spec.alpha) + spec.uniform_factors
        out.update({'entropic': dstar, 'wupper': max(dstar, 2 * alpha), 'wlower': dstar,
                    'minkowski': dstar, 'dstar': dstar})
    else:
        out['notes'].append("no analytic values for pushforward measures")
    return out


def dimension_profile(spec: MeasureSpec, alpha: float = 1.0, eps_grid: Optional[Sequence[float]] = None,
                      tau_grid: Optional[Sequence[float]] = None, s_grid: Optional[Sequence[float]] = None,
                      metric=GroundMetric.LINF, budget: Optional[int] = None, seed: Optional[int] = None,
                      threads: Optional[int] = None, tolerance: Optional[float] = None) -> Dict:
    """
    All estimates on a shared grid plus the ordering checks
    lower <= entropic(alpha), entropic(alpha) <= entropic(2 alpha) and
    entropic <= Minkowski, each with a fit tolerance.
    """
    tol = DIMENSION_CONFIG['order_tolerance'] if tolerance is None else tolerance
    grid = check_eps_grid(eps_grid)
    kwargs = dict(metric=metric, budget=budget, seed=seed, threads=threads)

    estimates: Dict[str, Dict] = {}
    errors: Dict[str, str] = {}

    def attempt(name: str, fn, *args, **kw):
        try:
            est = fn(*args, **kw)
            estimates[name] = est.to_dict()
            return est.value
        except WassdimError as e:
            logger.warning(f"{name} estimate skipped: {str(e)}")
            errors[name] = str(e)
            return None

    ent = attempt('entropic', entropic_dim_estimate, spec, alpha, grid, **kwargs)
    ent2 = attempt('entropic_2alpha', entropic_dim_estimate, spec, 2 * alpha, grid, **kwargs)
    wup = attempt('wupper', wasserstein_upper_dim_estimate, spec, alpha, grid, s_grid, **kwargs)
    low = attempt('wlower', lower_wasserstein_dim_estimate, spec, tau_grid, grid, **kwargs)
    mink = attempt('minkowski', support_minkowski_estimate, spec, grid, budget, seed, threads)

    checks = {}
    if low is not None and ent is not None:
        checks['lower_le_entropic'] = bool(low <= ent + tol)
    if ent is not None and ent2 is not None:
        checks['entropic_monotone_in_alpha'] = bool(ent <= ent2 + tol)
    if ent is not None and mink is not None:
        checks['entropic_le_minkowski'] = bool(ent <= mink + tol)
    if ent is not None and wup is not None:
        checks['entropic_le_wupper'] = bool(ent <= wup + tol)

    return {
        'alpha': alpha,
        'eps_grid': grid,
        'estimates': estimates,
        'errors': errors,
        'oracle': oracle_dims(spec, alpha),
        'checks': checks,
        'tolerance': tol,
    }
