"""
Convergence-rate experiments
Monte-Carlo estimates of E d(empirical_n, mu) over a grid of n, log-log
slope fits and the one-sided comparison with -beta/d*
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dimension import oracle_dims
from geometry import GroundMetric, as_metric
from holder import HOLDER_CONFIG, HolderSpec, holder_ipm_lp
from measures import MeasureSpec, describe, empirical_measure, sample
from transport import TRANSPORT_CONFIG, reference_w1, resolve_reference
from utils import (SCHEMA_VERSION, CapExceededError, DegenerateGridError, ValidationError,
                   linear_regression, load_json, make_rng, run_parallel, save_json)

logger = logging.getLogger(__name__)

RATES_CONFIG = {
    'tolerance': 0.15,
    'min_trials': 10,
    'min_points': 4,
    'min_decades': 1.5,
    'ref_factor': 16,
    'n0': 128,                # fits use n >= n0
    'holder_beta': 1.0,
    'holder_C': 1.0,
    'monotone_sds': 2.0,
}

METRICS = ("w1", "holder_ipm")


def fit_loglog_slope(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """
    Least-squares slope of log(value) against log(n).

    Args:
        pairs: (n, value) with positive values, at least four of them

    Returns:
        (slope, standard error of the slope)
    """
    pairs = list(pairs)
    if len(pairs) < RATES_CONFIG['min_points']:
        raise DegenerateGridError(f"need at least {RATES_CONFIG['min_points']} points, got {len(pairs)}")
    for n, v in pairs:
        if not v > 0 or not n > 0:
            raise ValidationError(f"log-log fit needs positive values, got ({n}, {v})")
    fit = linear_regression([math.log(n) for n, _ in pairs], [math.log(v) for _, v in pairs])
    return fit['slope'], fit['stderr']


@dataclass
class RateReport:
    measure: Dict
    metric: str
    n_grid: List[int]
    trials: int
    seed: int
    ref_factor: int
    reference: Dict[str, str]
    values: List[List[float]]
    means: List[float]
    sds: List[float]
    slope: float
    slope_stderr: float
    intercept: float
    fit_window: List[int]
    config: Dict = field(default_factory=dict)
    theory: Optional[Dict] = None
    checks: Dict[str, bool] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'schema': SCHEMA_VERSION,
            'measure': self.measure,
            'metric': self.metric,
            'n_grid': self.n_grid,
            'trials': self.trials,
            'seed': self.seed,
            'ref_factor': self.ref_factor,
            'reference': self.reference,
            'values': self.values,
            'means': self.means,
            'sds': self.sds,
            'slope': self.slope,
            'slope_stderr': self.slope_stderr,
            'intercept': self.intercept,
            'fit_window': self.fit_window,
            'config': self.config,
            'theory': self.theory,
            'checks': self.checks,
            'notes': self.notes,
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "RateReport":
        if payload.get('schema') != SCHEMA_VERSION:
            raise ValidationError(f"unsupported report schema {payload.get('schema')!r}")
        keys = [f for f in cls.__dataclass_fields__]
        return cls(**{k: payload[k] for k in keys if k in payload})

    def raw_frame(self) -> pd.DataFrame:
        rows = []
        for n, vals in zip(self.n_grid, self.values):
            for t, v in enumerate(vals):
                rows.append({'n': n, 'trial': t, 'value': v, 'reference': self.reference[str(n)]})
        return pd.DataFrame(rows, columns=['n', 'trial', 'value', 'reference'])


def raw_csv_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".csv"


def save_report(path: str, report: RateReport) -> str:
    """Write the JSON report and its raw-values CSV next to it; returns the CSV path."""
    save_json(path, report.to_dict())
    csv_path = raw_csv_path(path)
    report.raw_frame().to_csv(csv_path, index=False)
    logger.info(f"Wrote {csv_path}")
    return csv_path


def load_report(path: str) -> RateReport:
    return RateReport.from_dict(load_json(path))


def load_raw_values(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def _check_grid(n_grid: Sequence[int], trials: int) -> List[int]:
    grid = [int(n) for n in n_grid]
    if any(n < 1 for n in grid):
        raise ValidationError("sample sizes must be positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError(f"n_grid must be strictly increasing, got {grid}")
    if len(grid) < RATES_CONFIG['min_points']:
        raise DegenerateGridError(f"n_grid needs at least {RATES_CONFIG['min_points']} sizes")
    if math.log10(grid[-1] / grid[0]) < RATES_CONFIG['min_decades'] - 1e-12:
        raise DegenerateGridError(f"n_grid spans fewer than {RATES_CONFIG['min_decades']} decades")
    if trials < RATES_CONFIG['min_trials']:
        raise ValidationError(f"need at least {RATES_CONFIG['min_trials']} trials, got {trials}")
    return grid


def run_rate_experiment(spec: MeasureSpec, n_grid: Sequence[int], trials: int = 20, seed: int = 0,
                        metric: str = "w1", ref_factor: Optional[int] = None, reference: str = "auto",
                        ground_metric=GroundMetric.LINF, beta: Optional[float] = None,
                        C: Optional[float] = None, n0: Optional[int] = None,
                        threads: Optional[int] = None) -> RateReport:
    """
    Estimate the mean distance between empirical and true measure across n.

    Each (n, trial) cell draws its sample from the seed stream [seed, n,
    trial, 0] and its reference from [seed, n, trial, 1], so the report does
    not depend on the thread count. The W1 reference mode is resolved once,
    at the largest n, so every size uses the same estimator. The slope is
    fitted on the n >= n0 window; every raw value is kept.
    """
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; choose from {METRICS}")
    grid = _check_grid(n_grid, trials)
    ground_metric = as_metric(ground_metric)
    ref_factor = int(ref_factor or RATES_CONFIG['ref_factor'])
    n0 = RATES_CONFIG['n0'] if n0 is None else int(n0)
    beta = RATES_CONFIG['holder_beta'] if beta is None else beta
    C = RATES_CONFIG['holder_C'] if C is None else C
    notes: List[str] = []

    ipm_cap = HOLDER_CONFIG['max_lp_atoms' if beta <= 1.0 else 'max_jet_atoms']
    modes: Dict[str, str] = {}
    ref_sizes: Dict[int, int] = {}
    # one estimator for the whole grid, chosen at the largest n
    w1_mode = resolve_reference(spec, grid[-1], ref_factor * grid[-1], reference) if metric == "w1" else None
    for n in grid:
        if metric == "w1":
            modes[str(n)] = w1_mode
            ref_sizes[n] = n if w1_mode == "twosample" else ref_factor * n
            continue
        modes[str(n)] = "sample"
        ref_sizes[n] = min(ref_factor * n, ipm_cap - n)
        if ref_sizes[n] < n:
            raise CapExceededError(f"n={n} leaves no room for a reference sample under the IPM program cap")
        if ref_sizes[n] < ref_factor * n:
            notes.append(f"IPM reference at n={n} reduced to {ref_sizes[n]} points by the program size cap")
    hs = HolderSpec(beta, C, spec.dim) if metric == "holder_ipm" else None

    def cell(item: Tuple[int, int]) -> float:
        n, t = item
        X = sample(spec, n, rng=make_rng([seed, n, t, 0]))
        ref_rng = make_rng([seed, n, t, 1])
        if metric == "w1":
            return reference_w1(spec, X, modes[str(n)], ref_sizes[n], ref_rng, ground_metric)
        Y = sample(spec, ref_sizes[n], rng=ref_rng)
        return holder_ipm_lp(empirical_measure(X), empirical_measure(Y), hs)['value']

    items = [(n, t) for n in grid for t in range(trials)]
    flat = run_parallel(cell, items, threads, label="cell")
    values = [[float(v) for v in flat[i * trials:(i + 1) * trials]] for i in range(len(grid))]
    means = [float(np.mean(v)) for v in values]
    sds = [float(np.std(v, ddof=1)) for v in values]
    for n, mean, sd in zip(grid, means, sds):
        logger.info(f"n={n}: mean {mean:.5g} sd {sd:.3g} ({modes[str(n)]})")

    window = [n for n in grid if n >= n0]
    if len(window) < RATES_CONFIG['min_points']:
        notes.append(f"fewer than {RATES_CONFIG['min_points']} sizes at or above n0={n0}; fitting all sizes")
        window = list(grid)
    pairs = [(n, m) for n, m in zip(grid, means) if n in window]
    if not all(m > 0 for _, m in pairs):
        raise ValidationError("a mean distance is zero; the log-log slope is undefined")
    fit = linear_regression([math.log(n) for n, _ in pairs], [math.log(m) for _, m in pairs])

    k = RATES_CONFIG['monotone_sds']
    monotone = all(b <= a + k * max(sa, sb) for a, b, sa, sb in zip(means, means[1:], sds, sds[1:]))
    if any(m == "twosample" for m in modes.values()):
        notes.append("two-sample surrogate lies between the target and twice the target in expectation")
    if any(m == "sample" for m in modes.values()) and metric == "w1":
        notes.append("reference-sample surrogate is biased upward by at most E W1(empirical_N, mu)")

    config = {
        'metric': metric, 'n_grid': grid, 'trials': trials, 'seed': seed, 'ref_factor': ref_factor,
        'reference': reference, 'ground_metric': ground_metric.value, 'n0': n0,
        'beta': beta, 'C': C, 'max_atoms': TRANSPORT_CONFIG['max_atoms'],
        'ref_sizes': {str(n): ref_sizes[n] for n in grid},
    }
    return RateReport(measure=describe(spec), metric=metric, n_grid=grid, trials=trials, seed=seed,
                      ref_factor=ref_factor, reference=modes, values=values, means=means, sds=sds,
                      slope=fit['slope'], slope_stderr=fit['stderr'], intercept=fit['intercept'],
                      fit_window=window, config=config, checks={'means_nonincreasing': bool(monotone)},
                      notes=notes)


def resolve_dstar(spec: MeasureSpec, beta: float, dstar: Union[str, float, None] = "auto") -> float:
    """'auto' gives max(reference upper Wasserstein dimension at alpha = beta, 2 beta)."""
    if dstar is None or dstar == "auto":
        ref = oracle_dims(spec, beta)['wupper']
        if isinstance(ref, str):
            raise ValidationError(f"no reference dimension for {spec.kind.value}; pass d* explicitly")
        return max(float(ref), 2.0 * beta)
    value = float(dstar)
    if not value > 0:
        raise ValidationError(f"d* must be positive, got {dstar}")
    return value


def compare_to_theory(report: RateReport, dstar: float, beta: float = 1.0,
                      tolerance: Optional[float] = None) -> Dict:
    """
    One-sided check: the fitted slope may be faster than -beta/d* but not
    slower by more than the tolerance.
    """
    if not dstar > 0:
        raise ValidationError(f"d* must be positive, got {dstar}")
    tol = RATES_CONFIG['tolerance'] if tolerance is None else tolerance
    theory = -beta / dstar
    margin = theory + tol - report.slope
    verdict = {
        'dstar': dstar,
        'beta': beta,
        'theory_slope': theory,
        'slope': report.slope,
        'tolerance': tol,
        'margin': margin,
        'verdict': "PASS" if margin >= 0 else "FAIL",
    }
    report.theory = verdict
    logger.info(f"slope {report.slope:.3f} vs theory {theory:.3f} (tol {tol}): {verdict['verdict']}")
    return verdict
