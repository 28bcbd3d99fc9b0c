"""
wassdim shared utilities
Errors, regression, seeding, thread pools and file formats used by every module
"""
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "wassdim/1"

THREAD_ENV_VAR = "WASSDIM_THREADS"


class WassdimError(Exception):
    """Base class for every error raised by the library."""


class ValidationError(WassdimError):
    """Input or precondition check failed."""


class DimensionMismatchError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class CapExceededError(ValidationError):
    """A configured size cap (atoms, cells, members) would be exceeded."""


class DegenerateGridError(ValidationError):
    pass


class RegimeError(ValidationError):
    """Parameters fall outside the regime a construction is valid for."""


class UnbalancedMassError(ValidationError):
    pass


class DomainError(ValidationError):
    """Points, boxes or supports leave the unit cube."""


class RetryBudgetError(WassdimError):
    """A randomized construction used up its attempts."""


def linear_regression(x: Sequence[float], y: Sequence[float]) -> Dict:
    """
    Ordinary least squares fit of y on x via scipy.stats.linregress.

    Returns dict with slope, intercept, r_squared and the standard error of
    the slope (0 for two points).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 2 or len(y) != n:
        raise ValidationError(f"need at least 2 paired values, got {n}")
    if np.ptp(x) == 0:
        raise DegenerateGridError("regressor has zero spread")

    fit = stats.linregress(x, y)
    # constant responses are fitted exactly by a flat line
    r_squared = 1.0 if np.ptp(y) == 0 else float(fit.rvalue) ** 2
    return {
        'slope': float(fit.slope),
        'intercept': float(fit.intercept),
        'r_squared': r_squared,
        'stderr': float(fit.stderr) if n > 2 else 0.0,
        'n_points': n,
    }


def resolve_threads(threads: Optional[int] = None) -> int:
    """Thread budget: explicit value, else WASSDIM_THREADS, else 1."""
    if threads is None:
        raw = os.environ.get(THREAD_ENV_VAR, "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ValidationError(f"{THREAD_ENV_VAR} must be an integer, got {raw!r}")
        else:
            threads = 1
    if threads < 1:
        raise ValidationError(f"thread count must be >= 1, got {threads}")
    return threads


def run_parallel(func: Callable[[Any], Any], items: Sequence[Any],
                 threads: Optional[int] = None, label: str = "task") -> List[Any]:
    """
    Apply func to every item, optionally on a thread pool.

    Results come back in item order whatever the completion order, so serial
    and parallel runs produce identical output.
    """
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]

    results: List[Any] = [None] * len(items)
    errors: List[Tuple[int, BaseException]] = []
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        futures = {executor.submit(func, item): idx for idx, item in enumerate(items)}
        for future in as_completed(futures):
            idx = futures[future]
            try:
                results[idx] = future.result()
            except Exception as e:
                logger.error(f"{label} {idx} failed: {str(e)}")
                errors.append((idx, e))

    if errors:
        errors.sort(key=lambda pair: pair[0])
        raise errors[0][1]
    return results


def make_rng(seed: Any) -> np.random.Generator:
    """Generator from an int seed or a sequence of ints (SeedSequence entropy)."""
    if isinstance(seed, (list, tuple)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(int(seed))


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy containers and scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(payload: Dict) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2)


def save_json(path: str, payload: Dict) -> None:
    with open(path, 'w') as f:
        f.write(dump_json(payload))
        f.write("\n")
    logger.info(f"Wrote {path}")


def load_json(path: str) -> Dict:
    with open(path, 'r') as f:
        return json.load(f)


def load_point_cloud_csv(path: str, header: bool = False) -> np.ndarray:
    """Read one point per row, numeric columns only."""
    try:
        frame = pd.read_csv(path, header=0 if header else None)
    except FileNotFoundError:
        raise ValidationError(f"point file not found: {path}")
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"point file is empty: {path}")

    try:
        points = frame.to_numpy(dtype=float)
    except ValueError:
        raise ValidationError(f"non-numeric entries in {path} (use --header for a header row)")
    if points.ndim != 2 or points.shape[0] == 0:
        raise EmptyInputError(f"no points in {path}")
    return points


def save_point_cloud_csv(path: str, points: np.ndarray) -> None:
    pd.DataFrame(np.asarray(points, dtype=float)).to_csv(path, header=False, index=False)


_POWER_RE = re.compile(r"^\s*([0-9.]+)\s*\^\s*(-?[0-9.]+)\s*$")


def parse_number(text: str) -> float:
    """Parse '0.25', '1e-3' or a power such as '2^-6'."""
    match = _POWER_RE.match(text)
    if match:
        return float(match.group(1)) ** float(match.group(2))
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"cannot parse number {text!r}")


def parse_scale_grid(text: str) -> List[float]:
    """
    Scales from 'b^i..b^j' (every integer exponent between i and j, in the
    written order) or a comma list.
    """
    if ".." in text:
        left, right = text.split("..", 1)
        a, b = _POWER_RE.match(left), _POWER_RE.match(right)
        if not a or not b or float(a.group(1)) != float(b.group(1)):
            raise ValidationError(f"range {text!r} must look like 2^-3..2^-10")
        base = float(a.group(1))
        lo, hi = int(float(a.group(2))), int(float(b.group(2)))
        step = 1 if hi >= lo else -1
        return [base ** e for e in range(lo, hi + step, step)]
    return [parse_number(part) for part in text.split(",") if part.strip()]


def parse_int_range(text: str) -> Tuple[int, int]:
    """'2..5' -> (2, 5); a single integer gives a one-level range."""
    if ".." in text:
        left, right = text.split("..", 1)
        return int(left), int(right)
    return int(text), int(text)


def parse_int_list(text: str) -> List[int]:
    """
    Comma list of integers; '128,256,...,8192' continues the ratio of the
    first two entries up to the last one.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." not in parts:
        return [int(p) for p in parts]
    idx = parts.index("...")
    head = [int(p) for p in parts[:idx]]
    tail = [int(p) for p in parts[idx + 1:]]
    if len(head) < 2 or len(tail) != 1:
        raise ValidationError(f"cannot expand {text!r}")
    ratio = head[1] / head[0]
    values = list(head)
    while values[-1] * ratio < tail[0] * (1 + 1e-9):
        values.append(int(round(values[-1] * ratio)))
    if values[-1] != tail[0]:
        raise ValidationError(f"{tail[0]} is not reached by ratio {ratio} in {text!r}")
    return values
