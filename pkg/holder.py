"""
Hölder-class machinery
Quantized piecewise-Taylor covers, Hölder IPM estimates, bump witnesses,
Varshamov-Gilbert codes, minimax families and the multilevel cell hierarchy
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import pdist

from geometry import GroundMetric, grid_cells, pairwise_distances
from measures import (Box, DiscreteMeasure, MeasureKind, MeasureSpec, box_masses,
                      make_discrete, points_in_box, sample)
from utils import (CapExceededError, DimensionMismatchError, DomainError, RegimeError,
                   RetryBudgetError, ValidationError, linear_regression, make_rng,
                   run_parallel)

logger = logging.getLogger(__name__)

HOLDER_CONFIG = {
    'max_cells': 200000,          # cells of a piecewise-Taylor class
    'max_beta_ipm': 2.0,
    'cover_c': 4.0,               # cover members sit within c eps^beta of the optimizer on the support
    'max_lp_atoms': 400,          # union support size for the values LP
    'max_jet_atoms': 150,         # union support size for the jet relaxation
    'fd_step': 1e-5,
    'bump_grid': 20001,
    'bump_seminorm_grid': 1501,
    'bump_safety': 0.9,
    'vg_attempts': 200,
    'vg_draws_factor': 64,
    'hierarchy_margin': 1.0,      # d' = max(reference upper dimension, 2 beta) + margin
    'max_boxes': 200000,
    'mc_draws': 100000,
}


@dataclass(frozen=True)
class HolderSpec:
    """
    Hölder ball H^beta(C) on [0,1]^dim.

    The norm sums the sup norms of all partial derivatives of order at most
    floor(beta) and the (beta - floor(beta))-Hölder seminorms (ℓ∞ distance) of
    the top-order ones. For beta <= 1 this is ||f||_inf + |f|_beta.
    """
    beta: float
    C: float
    dim: int

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if not self.C > 0:
            raise ValidationError(f"C must be positive, got {self.C}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValidationError(f"dim must be a positive integer, got {self.dim}")

    @property
    def degree(self) -> int:
        return int(math.floor(self.beta))

    @property
    def gamma(self) -> float:
        return self.beta - self.degree

    def to_dict(self) -> Dict:
        return {'beta': self.beta, 'C': self.C, 'dim': self.dim}


def multi_indices(dim: int, degree: int) -> List[Tuple[int, ...]]:
    """Multi-indices s with |s| <= degree, by total order then lexicographic."""
    out = []
    for total in range(degree + 1):
        for s in itertools.product(range(total + 1), repeat=dim):
            if sum(s) == total:
                out.append(tuple(s))
    return out


def multi_factorial(s: Sequence[int]) -> float:
    return float(np.prod([math.factorial(k) for k in s]))


# ---------------------------------------------------------------------------
# Target functions with derivative oracles


@dataclass
class SmoothFunction:
    """A function on [0,1]^dim with an optional exact partial-derivative oracle."""
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray, Tuple[int, ...]], np.ndarray]] = None

    @property
    def exact(self) -> bool:
        return self.derivative is not None

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"{self.name} takes {self.dim} inputs, got {X.shape[1]}")
        return np.asarray(self.value(X), dtype=float).ravel()

    def partial(self, X, s: Sequence[int]) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        s = tuple(int(k) for k in s)
        if sum(s) == 0:
            return self(X)
        if self.derivative is not None:
            return np.asarray(self.derivative(X, s), dtype=float).ravel()
        return self._finite_difference(X, s)

    def _finite_difference(self, X: np.ndarray, s: Tuple[int, ...]) -> np.ndarray:
        h = HOLDER_CONFIG['fd_step']
        axis = next(i for i, k in enumerate(s) if k > 0)
        lower = list(s)
        lower[axis] -= 1
        step = np.zeros(self.dim)
        step[axis] = h
        return (self.partial(X + step, lower) - self.partial(X - step, lower)) / (2.0 * h)


def _xy_derivative(X: np.ndarray, s: Tuple[int, ...]) -> np.ndarray:
    if s == (1, 0):
        return X[:, 1]
    if s == (0, 1):
        return X[:, 0]
    if s == (1, 1):
        return np.ones(X.shape[0])
    return np.zeros(X.shape[0])


def coordinate_function(k: int, dim: int) -> SmoothFunction:
    def derivative(X, s):
        unit = tuple(1 if i == k else 0 for i in range(dim))
        return np.ones(X.shape[0]) if s == unit else np.zeros(X.shape[0])
    return SmoothFunction(f"x{k + 1}", dim, lambda X: X[:, k], derivative)


def square_function(k: int, dim: int) -> SmoothFunction:
    def derivative(X, s):
        if sum(s) == 1 and s[k] == 1:
            return 2.0 * X[:, k]
        if sum(s) == 2 and s[k] == 2:
            return np.full(X.shape[0], 2.0)
        return np.zeros(X.shape[0])
    return SmoothFunction(f"x{k + 1}^2", dim, lambda X: X[:, k] ** 2, derivative)


def builtin_function(name: str, dim: int = 2, constant: float = 0.5) -> SmoothFunction:
    """
    Named target functions with exact derivatives: xy (x1*x2), const, sum,
    sin (sin of the coordinate sum), identity (x1), square (x1^2).
    """
    if name == "xy":
        return SmoothFunction("xy", 2, lambda X: X[:, 0] * X[:, 1], _xy_derivative)
    if name == "const":
        return SmoothFunction("const", dim, lambda X: np.full(X.shape[0], constant),
                              lambda X, s: np.zeros(X.shape[0]))
    if name == "sum":
        return SmoothFunction("sum", dim, lambda X: X.sum(axis=1),
                              lambda X, s: np.ones(X.shape[0]) if sum(s) == 1 else np.zeros(X.shape[0]))
    if name == "sin":
        return SmoothFunction("sin", dim, lambda X: np.sin(X.sum(axis=1)),
                              lambda X, s: np.sin(X.sum(axis=1) + sum(s) * math.pi / 2.0))
    if name == "identity":
        return coordinate_function(0, dim)
    if name == "square":
        return square_function(0, dim)
    raise ValidationError(f"unknown builtin function {name!r}")


def parse_function(text: str, dim: int = 2) -> SmoothFunction:
    """'builtin:xy' style names for the command line."""
    prefix, _, name = text.partition(":")
    if prefix != "builtin" or not name:
        raise ValidationError(f"functions are given as builtin:<name>, got {text!r}")
    return builtin_function(name, dim)


# ---------------------------------------------------------------------------
# Quantized piecewise-Taylor cover


@dataclass
class PiecewiseTaylorClass:
    """
    Functions that on each grid cell (side 2 eps, centers theta) equal a
    clipped Taylor polynomial of degree floor(beta) with derivative
    coefficients on the grid delta*Z, and vanish off the cells.
    """
    hs: HolderSpec
    eps: float
    delta: float
    cell_index: np.ndarray
    centers: np.ndarray
    monomials: List[Tuple[int, ...]]
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        self._per_axis = max(1, math.ceil(1.0 / (2.0 * self.eps) - 1e-12))
        keys = self._linear(self.cell_index)
        self._order = np.argsort(keys)
        self._keys = keys[self._order]
        self._fact = np.array([multi_factorial(s) for s in self.monomials])

    @property
    def n_cells(self) -> int:
        return int(self.cell_index.shape[0])

    @property
    def degree(self) -> int:
        return self.hs.degree

    @property
    def levels(self) -> int:
        """Size of the coefficient grid delta*Z within [-C, C]."""
        return 2 * int(math.floor(self.hs.C / self.delta + 1e-12)) + 1

    @property
    def log_members(self) -> float:
        return self.n_cells * len(self.monomials) * math.log(self.levels)

    @property
    def stated_log_bound(self) -> float:
        """log of (C/delta)^(|I| floor(beta)^d), the bound quoted for this construction."""
        return self.n_cells * (self.degree ** self.hs.dim) * math.log(self.hs.C / self.delta)

    def _linear(self, idx: np.ndarray) -> np.ndarray:
        weights = self._per_axis ** np.arange(idx.shape[1], dtype=np.int64)
        return idx.astype(np.int64) @ weights

    def locate(self, X: np.ndarray) -> np.ndarray:
        """Row of the class cell holding each point, -1 off the cells."""
        X = np.atleast_2d(X)
        keys = self._linear(grid_cells(X, self.eps))
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, self._keys.shape[0] - 1)
        hit = self._keys[pos] == keys
        inside = np.all((X >= 0.0) & (X <= 1.0), axis=1)
        return np.where(hit & inside, self._order[pos], -1)

    def quantize(self, values: np.ndarray) -> np.ndarray:
        top = (self.levels - 1) // 2 * self.delta
        return np.clip(np.trunc(np.asarray(values, dtype=float) / self.delta) * self.delta, -top, top)

    def member(self, func: SmoothFunction) -> np.ndarray:
        """Coefficients of the member closest to func: quantized derivatives at the cell centers."""
        if func.dim != self.hs.dim:
            raise DimensionMismatchError(f"function has {func.dim} inputs, class has {self.hs.dim}")
        coeffs = np.column_stack([func.partial(self.centers, s) for s in self.monomials])
        return self.quantize(coeffs)

    def evaluate(self, coeffs: np.ndarray, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rows = self.locate(X)
        out = np.zeros(X.shape[0])
        inside = rows >= 0
        if not inside.any():
            return out
        r = rows[inside]
        D = X[inside] - self.centers[r]
        total = np.zeros(r.shape[0])
        for k, s in enumerate(self.monomials):
            total += coeffs[r, k] / self._fact[k] * np.prod(D ** np.asarray(s), axis=1)
        out[inside] = np.clip(total, -self.hs.C, self.hs.C)
        return out

    def to_dict(self) -> Dict:
        return {
            'holder': self.hs.to_dict(),
            'eps': self.eps,
            'delta': self.delta,
            'degree': self.degree,
            'cells': self.n_cells,
            'coefficients_per_cell': len(self.monomials),
            'coefficient_levels': self.levels,
            'log_members': self.log_members,
            'stated_log_bound': self.stated_log_bound,
            'flags': self.flags,
        }


def holder_cover(hs: HolderSpec, eps: float, support=None, max_cells: Optional[int] = None) -> PiecewiseTaylorClass:
    """
    Quantized-Taylor cover of H^beta(C) at scale eps with delta = eps^beta.

    support is a point array (cells occupied by the points) or a Box (every
    cell meeting it); the whole cube when omitted.
    """
    if not 0.0 < eps < 1.0:
        raise ValidationError(f"eps must lie in (0,1), got {eps}")
    cap = max_cells or HOLDER_CONFIG['max_cells']
    per_axis = max(1, math.ceil(1.0 / (2.0 * eps) - 1e-12))
    if support is None:
        support = Box.unit(hs.dim)
    if isinstance(support, Box):
        if support.dim != hs.dim:
            raise DimensionMismatchError("support box dimension differs from the Hölder spec")
        lo = grid_cells(support.lo.reshape(1, -1), eps)[0]
        hi = grid_cells(np.minimum(support.hi, 1.0).reshape(1, -1), eps)[0]
        count = int(np.prod(hi - lo + 1))
        if count > cap:
            raise CapExceededError(f"{count} cells exceed the cap {cap}")
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, hs.dim)
    else:
        X = np.atleast_2d(np.asarray(support, dtype=float))
        if X.shape[1] != hs.dim:
            raise DimensionMismatchError("support points dimension differs from the Hölder spec")
        if X.min() < 0.0 or X.max() > 1.0:
            raise DomainError("support escapes [0,1]^d")
        cells = np.unique(grid_cells(X, eps), axis=0)
        if cells.shape[0] > cap:
            raise CapExceededError(f"{cells.shape[0]} cells exceed the cap {cap}")

    centers = (2.0 * cells + 1.0) * eps
    monomials = multi_indices(hs.dim, hs.degree)
    flags = []
    if len(monomials) > hs.degree ** hs.dim:
        flags.append("member count exceeds (C/delta)^(|I| floor(beta)^d): that bound ignores "
                     "the lower-order coefficients")
    logger.info(f"Taylor cover eps={eps:.4g}: {cells.shape[0]} cells of {per_axis}^{hs.dim}, "
                f"{len(monomials)} coefficients each")
    return PiecewiseTaylorClass(hs=hs, eps=eps, delta=eps ** hs.beta, cell_index=cells,
                                centers=centers, monomials=monomials, flags=flags)


def holder_entropy_profile(hs: HolderSpec, eps_grid: Sequence[float], support=None) -> Dict:
    """log |F(eps)| per scale with its growth exponents in 1/eps and in 1/eps^beta."""
    rows = []
    for eps in sorted(eps_grid, reverse=True):
        cls = holder_cover(hs, eps, support)
        rows.append({'eps': eps, 'cells': cls.n_cells, 'log_members': cls.log_members,
                     'stated_log_bound': cls.stated_log_bound})
    out: Dict = {'holder': hs.to_dict(), 'rows': rows}
    if len(rows) >= 2:
        x = [math.log(1.0 / r['eps']) for r in rows]
        y = [math.log(r['log_members']) for r in rows]
        fit = linear_regression(x, y)
        out['slope_in_inverse_eps'] = fit['slope']
        out['slope_in_inverse_accuracy'] = fit['slope'] / hs.beta
        out['r_squared'] = fit['r_squared']
    return out


# ---------------------------------------------------------------------------
# Hölder IPM


def _union_support(P: DiscreteMeasure, Q: DiscreteMeasure):
    if P.dim != Q.dim:
        raise DimensionMismatchError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    X = np.vstack([P.atoms, Q.atoms])
    atoms, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    p = np.bincount(inverse[:P.size], weights=P.weights, minlength=atoms.shape[0])
    q = np.bincount(inverse[P.size:], weights=Q.weights, minlength=atoms.shape[0])
    return atoms, p, q


def _pairs(n: int) -> Tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n, k=1)
    return i, j


def _values_lp(atoms, diff, hs: HolderSpec) -> Dict:
    """max sum diff_i g_i  s.t. |g_i| <= t0, |g_i - g_j| <= L rho_ij^beta, t0 + L <= C."""
    N = atoms.shape[0]
    rho = pairwise_distances(atoms, atoms, GroundMetric.LINF)
    i, j = _pairs(N)
    P = i.shape[0]
    t0, L = N, N + 1
    nvar = N + 2

    rows, cols, vals = [], [], []
    r = np.arange(P)
    w = rho[i, j] ** hs.beta
    for sign, base in ((1.0, 0), (-1.0, P)):
        rows += [base + r, base + r, base + r]
        cols += [i, j, np.full(P, L)]
        vals += [np.full(P, sign), np.full(P, -sign), -w]
    base = 2 * P
    k = np.arange(N)
    for sign, off in ((1.0, 0), (-1.0, N)):
        rows += [base + off + k, base + off + k]
        cols += [k, np.full(N, t0)]
        vals += [np.full(N, sign), np.full(N, -1.0)]
    norm_row = 2 * P + 2 * N
    rows += [np.array([norm_row, norm_row])]
    cols += [np.array([t0, L])]
    vals += [np.array([1.0, 1.0])]
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(norm_row + 1, nvar))
    b = np.zeros(norm_row + 1)
    b[-1] = hs.C
    c = np.zeros(nvar)
    c[:N] = -diff
    bounds = [(-hs.C, hs.C)] * N + [(0, hs.C), (0, hs.C)]
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise ValidationError(f"Hölder IPM program failed: {res.message}")
    x = res.x
    return {'value': float(-res.fun), 'values': x[:N], 't0': float(x[t0]), 'L': float(x[L]),
            'gradients': None, 'method': "values_lp"}


def _jet_lp(atoms, diff, hs: HolderSpec) -> Dict:
    """
    Whitney-jet relaxation for 1 < beta <= 2 over values g_i and gradients V_i:
    |g_j - g_i - V_i.(x_j - x_i)| <= rho^(beta-1) sum_k H_k |Δ_k| / beta,
    |V_jk - V_ik| <= H_k rho^(beta-1), |g| <= t0, |V_.k| <= t1_k,
    t0 + sum t1 + sum H <= C.
    """
    N, d = atoms.shape
    rho = pairwise_distances(atoms, atoms, GroundMetric.LINF)
    gamma = hs.beta - 1.0
    V0 = N
    t0 = N + N * d
    t1 = t0 + 1
    H0 = t1 + d
    nvar = H0 + d

    rows, cols, vals = [], [], []
    row = 0

    def add(r_idx, c_idx, v):
        rows.append(np.asarray(r_idx))
        cols.append(np.asarray(c_idx))
        vals.append(np.asarray(v, dtype=float))

    k = np.arange(N)
    for sign in (1.0, -1.0):
        add(row + k, k, np.full(N, sign))
        add(row + k, np.full(N, t0), np.full(N, -1.0))
        row += N
    for axis in range(d):
        for sign in (1.0, -1.0):
            add(row + k, V0 + k * d + axis, np.full(N, sign))
            add(row + k, np.full(N, t1 + axis), np.full(N, -1.0))
            row += N

    src, dst = np.nonzero(~np.eye(N, dtype=bool))
    P = src.shape[0]
    r = np.arange(P)
    delta = atoms[dst] - atoms[src]
    scale = rho[src, dst] ** gamma / hs.beta
    for sign in (1.0, -1.0):
        add(row + r, dst, np.full(P, sign))
        add(row + r, src, np.full(P, -sign))
        for axis in range(d):
            add(row + r, V0 + src * d + axis, -sign * delta[:, axis])
            add(row + r, np.full(P, H0 + axis), -scale * np.abs(delta[:, axis]))
        row += P

    i, j = _pairs(N)
    Pu = i.shape[0]
    ru = np.arange(Pu)
    w = rho[i, j] ** gamma
    for axis in range(d):
        for sign in (1.0, -1.0):
            add(row + ru, V0 + j * d + axis, np.full(Pu, sign))
            add(row + ru, V0 + i * d + axis, np.full(Pu, -sign))
            add(row + ru, np.full(Pu, H0 + axis), -w)
            row += Pu

    add([row] * (1 + 2 * d), [t0] + [t1 + a for a in range(d)] + [H0 + a for a in range(d)],
        np.ones(1 + 2 * d))
    row += 1

    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(row, nvar))
    b = np.zeros(row)
    b[-1] = hs.C
    c = np.zeros(nvar)
    c[:N] = -diff
    bounds = [(-hs.C, hs.C)] * (N + N * d) + [(0, hs.C)] * (1 + 2 * d)
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise ValidationError(f"Hölder IPM program failed: {res.message}")
    x = res.x
    return {'value': float(-res.fun), 'values': x[:N], 'gradients': x[V0:t0].reshape(N, d),
            't0': float(x[t0]), 'H': x[H0:H0 + d].tolist(), 'method': "jet_relaxation"}


def holder_ipm_lp(P, Q, hs: HolderSpec) -> Dict:
    """
    Hölder IPM between two discrete measures by linear programming.

    Exact for beta <= 1 (any feasible value vector extends by McShane's
    formula); for 1 < beta <= 2 a relaxation over first-order jets whose
    optimum bounds the IPM from above.
    """
    P = P if isinstance(P, DiscreteMeasure) else make_discrete(P)
    Q = Q if isinstance(Q, DiscreteMeasure) else make_discrete(Q)
    atoms, p, q = _union_support(P, Q)
    if atoms.shape[1] != hs.dim:
        raise DimensionMismatchError(f"measures live in dimension {atoms.shape[1]}, Hölder spec in {hs.dim}")
    if hs.beta > 2.0:
        raise RegimeError("the IPM program covers beta <= 2")
    diff = p - q
    if hs.beta <= 1.0:
        if atoms.shape[0] > HOLDER_CONFIG['max_lp_atoms']:
            raise CapExceededError(f"{atoms.shape[0]} support points exceed {HOLDER_CONFIG['max_lp_atoms']}")
        out = _values_lp(atoms, diff, hs)
    else:
        if atoms.shape[0] > HOLDER_CONFIG['max_jet_atoms']:
            raise CapExceededError(f"{atoms.shape[0]} support points exceed {HOLDER_CONFIG['max_jet_atoms']}")
        out = _jet_lp(atoms, diff, hs)
    out['atoms'] = atoms
    out['diff'] = diff
    return out


def mcshane_extension(atoms: np.ndarray, values: np.ndarray, L: float, t0: float, beta: float,
                      X: np.ndarray) -> np.ndarray:
    """min_i (g_i + L |x - x_i|^beta), clipped to [-t0, t0]."""
    D = pairwise_distances(np.atleast_2d(X), atoms, GroundMetric.LINF) ** beta
    return np.clip(np.min(values[None, :] + L * D, axis=1), -t0, t0)


@dataclass
class IPMEstimate:
    value: float
    lp_value: float
    witness: np.ndarray
    measured_c: float
    eps: float
    delta: float
    method: str
    cover: PiecewiseTaylorClass

    @property
    def gap_bound(self) -> float:
        """|value - lp_value| <= 2 c eps^beta with the measured c."""
        return 2.0 * self.measured_c * self.eps ** self.cover.hs.beta

    @property
    def prior_gap_bound(self) -> float:
        """The same bound with the configured constant c in place of the measured one."""
        return 2.0 * HOLDER_CONFIG['cover_c'] * self.eps ** self.cover.hs.beta

    def to_dict(self) -> Dict:
        return {
            'value': self.value,
            'lp_value': self.lp_value,
            'measured_c': self.measured_c,
            'gap_bound': self.gap_bound,
            'prior_gap_bound': self.prior_gap_bound,
            'eps': self.eps,
            'delta': self.delta,
            'method': self.method,
            'cover': self.cover.to_dict(),
        }


def ipm_cover_estimate(P, Q, hs: HolderSpec, eps: float, allow_high_beta: bool = False) -> IPMEstimate:
    """
    Hölder IPM seen through the eps-cover class.

    The optimal Hölder function from holder_ipm_lp is quantized into a cover
    member (the witness); the returned value is |∫ witness d(P - Q)| and c is
    the measured sup gap between witness and optimizer on the support over
    eps^beta.

    Only that one member is evaluated: the class is never enumerated, so
    there is no maximum over members and no index tie-break between equal
    members. The value still lies within 2 c eps^beta of the exact program.
    """
    if hs.beta > HOLDER_CONFIG['max_beta_ipm'] and not allow_high_beta:
        raise RegimeError(f"cover IPM limited to beta <= {HOLDER_CONFIG['max_beta_ipm']}")
    P = P if isinstance(P, DiscreteMeasure) else make_discrete(P)
    Q = Q if isinstance(Q, DiscreteMeasure) else make_discrete(Q)
    for M in (P, Q):
        if M.atoms.min() < 0.0 or M.atoms.max() > 1.0:
            raise DomainError("measure support escapes [0,1]^d")

    lp = holder_ipm_lp(P, Q, hs)
    atoms, diff, g = lp['atoms'], lp['diff'], lp['values']
    cover = holder_cover(hs, eps, atoms)
    coeffs = np.zeros((cover.n_cells, len(cover.monomials)))
    if lp['gradients'] is None:
        coeffs[:, 0] = mcshane_extension(atoms, g, lp['L'], lp['t0'], hs.beta, cover.centers)
    else:
        nearest = np.argmin(pairwise_distances(cover.centers, atoms, GroundMetric.LINF), axis=1)
        V = lp['gradients'][nearest]
        coeffs[:, 0] = g[nearest] + np.sum(V * (cover.centers - atoms[nearest]), axis=1)
        for k, s in enumerate(cover.monomials):
            if sum(s) == 1:
                coeffs[:, k] = V[:, s.index(1)]
    coeffs = cover.quantize(coeffs)

    m = cover.evaluate(coeffs, atoms)
    value = abs(math.fsum((diff * m).tolist()))
    gap = float(np.max(np.abs(m - g))) if atoms.shape[0] else 0.0
    c = gap / eps ** hs.beta
    if c > HOLDER_CONFIG['cover_c']:
        logger.warning(f"cover member sits {c:.3g} eps^beta from the optimizer, above c={HOLDER_CONFIG['cover_c']}")
    logger.info(f"IPM cover estimate eps={eps:.4g}: {value:.6g} (program {lp['value']:.6g}, c={c:.3g})")
    return IPMEstimate(value=value, lp_value=lp['value'], witness=coeffs, measured_c=c, eps=eps,
                       delta=cover.delta, method=lp['method'], cover=cover)


# ---------------------------------------------------------------------------
# Bump witnesses


def _bump(x: np.ndarray) -> np.ndarray:
    """exp(1/(x^2 - 1)) on |x| < 1 divided by its peak value, 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(1.0 / (x[inside] ** 2 - 1.0) + 1.0)
    return out


def grid_seminorm(values: np.ndarray, xs: np.ndarray, gamma: float, chunk: int = 512) -> float:
    """sup |g(x) - g(y)| / |x - y|^gamma over grid pairs; oscillation when gamma = 0."""
    if gamma <= 0:
        return float(values.max() - values.min())
    best = 0.0
    for start in range(0, xs.shape[0], chunk):
        a = slice(start, start + chunk)
        dx = np.abs(xs[a, None] - xs[None, :])
        dv = np.abs(values[a, None] - values[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dx > 0, dv / dx ** gamma, 0.0)
        best = max(best, float(ratio.max()))
    return best


def grid_holder_norm_1d(values: np.ndarray, xs: np.ndarray, beta: float) -> float:
    """Hölder norm of a sampled function of one variable, derivatives by finite differences."""
    degree = int(math.floor(beta))
    derivs = [values]
    for _ in range(degree):
        derivs.append(np.gradient(derivs[-1], xs))
    step = max(1, xs.shape[0] // HOLDER_CONFIG['bump_seminorm_grid'])
    total = sum(float(np.max(np.abs(g))) for g in derivs)
    return total + grid_seminorm(derivs[-1][::step], xs[::step], beta - degree)


def bump_profile_norm(beta: float, dim: int) -> Dict:
    """
    Upper bound on the Hölder norm of the product bump prod_j b(x_j)/b(0).

    Sup norms of mixed partials factor over coordinates; the top seminorm
    uses the product rule (one coordinate varies at a time under ℓ∞) and is
    at least twice the sup norm, which covers pairs of points in two
    different bumps.
    """
    xs = np.linspace(-1.5, 1.5, HOLDER_CONFIG['bump_grid'])
    degree = int(math.floor(beta))
    gamma = beta - degree
    derivs = [_bump(xs)]
    for _ in range(degree):
        derivs.append(np.gradient(derivs[-1], xs))
    sup = [float(np.max(np.abs(g))) for g in derivs]
    step = max(1, xs.shape[0] // HOLDER_CONFIG['bump_seminorm_grid'])
    semi = [grid_seminorm(g[::step], xs[::step], gamma) for g in derivs]

    total = 0.0
    for s in multi_indices(dim, degree):
        total += float(np.prod([sup[k] for k in s]))
    for s in multi_indices(dim, degree):
        if sum(s) != degree:
            continue
        prod_sup = float(np.prod([sup[k] for k in s]))
        rule = sum(semi[s[j]] * prod_sup / sup[s[j]] for j in range(dim))
        total += max(rule, 2.0 * prod_sup)
    return {'norm': total, 'sup': sup, 'seminorm': semi}


@dataclass
class BumpWitness:
    """h*(x) = sum_i alpha_i a delta^beta prod_j b((x_j - xi_ij)/delta) / b(0)."""
    atoms: np.ndarray
    signs: np.ndarray
    amplitude: float
    delta: float
    beta: float
    profile_norm: float
    value: float
    tv: float
    separation: float

    @property
    def peak(self) -> float:
        return self.amplitude * self.delta ** self.beta

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for xi, sign in zip(self.atoms, self.signs):
            out += sign * self.peak * np.prod(_bump((X - xi) / self.delta), axis=1)
        return out

    def to_dict(self) -> Dict:
        return {
            'value': self.value,
            'tv': self.tv,
            'amplitude': self.amplitude,
            'delta': self.delta,
            'beta': self.beta,
            'separation': self.separation,
            'peak': self.peak,
            'profile_norm': self.profile_norm,
            'identity_value': 2.0 * self.peak * self.tv,
        }


def separation(atoms: np.ndarray) -> float:
    atoms = np.atleast_2d(atoms)
    if atoms.shape[0] < 2:
        return math.inf
    return float(pdist(atoms, metric="chebyshev").min())


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * math.fsum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).tolist())


def bump_witness(Xi, P, Q, hs: HolderSpec, delta: Optional[float] = None) -> BumpWitness:
    """
    Separated-bump lower bound on the Hölder IPM between P and Q on Xi.

    P and Q are weight vectors aligned with the rows of Xi. With
    delta = sep(Xi)/3 the bumps have disjoint supports and
    ∫h* d(P - Q) = 2 a delta^beta TV(P, Q).
    """
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    if Xi.shape[0] == 1 and Xi.shape[1] != hs.dim:
        Xi = Xi.reshape(-1, 1)
    p = np.asarray(P, dtype=float).ravel()
    q = np.asarray(Q, dtype=float).ravel()
    if p.shape[0] != Xi.shape[0] or q.shape[0] != Xi.shape[0]:
        raise DimensionMismatchError("P and Q need one weight per atom of Xi")
    if Xi.shape[1] != hs.dim:
        raise DimensionMismatchError(f"atoms live in dimension {Xi.shape[1]}, Hölder spec in {hs.dim}")
    sep = separation(Xi)
    if sep == 0.0:
        raise ValidationError("atoms of Xi must be distinct (bumps would overlap)")
    limit = sep / 3.0 if math.isfinite(sep) else 1.0
    delta = min(limit, 1.0) if delta is None else float(delta)
    if delta > limit * (1 + 1e-12) or delta <= 0:
        raise ValidationError(f"bump radius {delta} exceeds sep/3 = {limit}: bumps would overlap")

    profile = bump_profile_norm(hs.beta, hs.dim)
    amplitude = HOLDER_CONFIG['bump_safety'] * hs.C / profile['norm']
    signs = np.where(p >= q, 1.0, -1.0)
    witness = BumpWitness(atoms=Xi, signs=signs, amplitude=amplitude, delta=delta, beta=hs.beta,
                          profile_norm=profile['norm'], value=0.0, tv=total_variation(p, q),
                          separation=sep)
    heights = witness(Xi)
    witness.value = math.fsum((heights * (p - q)).tolist())
    return witness


# ---------------------------------------------------------------------------
# Varshamov-Gilbert codes and minimax families


def vg_code(m: int, seed: int = 0, attempts: Optional[int] = None) -> np.ndarray:
    """
    Binary code of length m containing the zero word, with pairwise Hamming
    distance at least ceil(m/8) and at least ceil(2^(m/8)) words.

    Randomized greedy: uniform candidate words join when far enough from
    every accepted word; each attempt uses its own seed stream.
    """
    if int(m) != m or m < 8:
        raise ValidationError(f"block length must be an integer >= 8, got {m}")
    m = int(m)
    min_dist = math.ceil(m / 8)
    target = math.ceil(2.0 ** (m / 8.0))
    attempts = attempts or HOLDER_CONFIG['vg_attempts']
    draws = HOLDER_CONFIG['vg_draws_factor'] * target + 1000

    for attempt in range(attempts):
        rng = make_rng([seed, attempt])
        code = np.zeros((target, m), dtype=np.int8)
        size = 1
        candidates = rng.integers(0, 2, size=(draws, m), dtype=np.int8)
        for word in candidates:
            dist = np.count_nonzero(code[:size] != word, axis=1)
            if dist.min() >= min_dist:
                code[size] = word
                size += 1
                if size == target:
                    logger.info(f"VG code m={m}: {size} words after attempt {attempt + 1}")
                    return code.astype(int)
    raise RetryBudgetError(f"no VG code of length {m} with {target} words after {attempts} attempts")


def check_vg_code(code: np.ndarray, m: int) -> Dict:
    code = np.asarray(code, dtype=int)
    dist = int(np.min(pdist(code, metric="hamming")) * m + 0.5) if code.shape[0] > 1 else m
    return {
        'size': int(code.shape[0]),
        'required_size': math.ceil(2.0 ** (m / 8.0)),
        'min_distance': dist,
        'required_distance': math.ceil(m / 8),
        'contains_zero': bool(np.any(np.all(code == 0, axis=1))),
    }


@dataclass
class MinimaxFamily:
    """P_w(theta_i) = 1/k + (delta_k/k) sum_j w_j phi_j(theta_i) for codewords w."""
    theta: np.ndarray
    n: int
    delta_k: float
    codewords: np.ndarray
    probs: np.ndarray
    separation: float

    @property
    def k(self) -> int:
        return int(self.theta.shape[0])

    @property
    def half(self) -> int:
        return self.k // 2

    def measure(self, index: int) -> DiscreteMeasure:
        return DiscreteMeasure(atoms=self.theta, weights=self.probs[index])

    def tv(self, a: int, b: int) -> float:
        return total_variation(self.probs[a], self.probs[b])

    def to_dict(self) -> Dict:
        return {
            'k': self.k, 'n': self.n, 'delta_k': self.delta_k, 'half': self.half,
            'codewords': int(self.codewords.shape[0]), 'separation': self.separation,
        }


def family_probabilities(k: int, delta_k: float, codewords: np.ndarray) -> np.ndarray:
    half = k // 2
    probs = np.full((codewords.shape[0], k), 1.0 / k)
    shift = (delta_k / k) * codewords[:, :half]
    probs[:, :half] += shift
    probs[:, half:2 * half] -= shift
    return probs


def minimax_family(Theta, n: int, seed: int = 0, codewords: Optional[np.ndarray] = None) -> MinimaxFamily:
    """Packing family over a separated set with delta_k = (1/16) sqrt(k log 2 / n)."""
    theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if theta.shape[0] == 1:
        theta = theta.reshape(-1, 1)
    k = theta.shape[0]
    if k < 64:
        raise RegimeError(f"need k >= 64 atoms, got {k}")
    if n < 64 * k:
        raise RegimeError(f"need n >= 64k = {64 * k}, got {n}")
    sep = separation(theta)
    if sep == 0.0:
        raise ValidationError("atoms of Theta must be distinct")
    delta_k = math.sqrt(k * math.log(2.0) / n) / 16.0
    if codewords is None:
        codewords = vg_code(k // 2, seed)
    codewords = np.asarray(codewords, dtype=int)
    if codewords.shape[1] != k // 2:
        raise DimensionMismatchError(f"codewords must have length {k // 2}")
    probs = family_probabilities(k, delta_k, codewords)
    return MinimaxFamily(theta=theta, n=int(n), delta_k=delta_k, codewords=codewords,
                         probs=probs, separation=sep)


def family_separation(family: MinimaxFamily, hs: HolderSpec, max_pairs: int = 5000) -> Dict:
    """Smallest bump-witness lower bound over pairs of family members."""
    pairs = list(itertools.combinations(range(family.codewords.shape[0]), 2))[:max_pairs]
    if not pairs:
        raise ValidationError("family needs at least two codewords")
    best = None
    for a, b in pairs:
        w = bump_witness(family.theta, family.probs[a], family.probs[b], hs)
        if best is None or w.value < best[0]:
            best = (w.value, a, b, w)
    value, a, b, w = best
    hamming = int(np.sum(family.codewords[a] != family.codewords[b]))
    return {
        'min_value': value,
        'pair': [a, b],
        'hamming': hamming,
        'tv': w.tv,
        'predicted': 2.0 * w.peak * family.delta_k / family.k * hamming,
        'pairs_checked': len(pairs),
    }


# ---------------------------------------------------------------------------
# Unions of boxes


@dataclass
class BoxSet:
    """Finite union of pairwise disjoint half-open boxes [lo, hi)."""
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "BoxSet":
        return cls(np.zeros((0, d)), np.zeros((0, d)))

    @classmethod
    def from_box(cls, lo, hi) -> "BoxSet":
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        return cls(lo, hi)._drop_empty()

    @property
    def dim(self) -> int:
        return int(self.lo.shape[1])

    @property
    def n_boxes(self) -> int:
        return int(self.lo.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.n_boxes == 0

    def _drop_empty(self) -> "BoxSet":
        keep = np.all(self.hi > self.lo, axis=1)
        return BoxSet(self.lo[keep], self.hi[keep])

    def volume(self) -> float:
        return math.fsum(np.prod(self.hi - self.lo, axis=1).tolist())

    def bounding_diameter(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.max(self.hi.max(axis=0) - self.lo.min(axis=0)))

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.zeros(X.shape[0], dtype=bool)
        for lo, hi in zip(self.lo, self.hi):
            out |= points_in_box(X, lo, hi)
        return out

    def intersect_box(self, lo: np.ndarray, hi: np.ndarray) -> "BoxSet":
        return BoxSet(np.maximum(self.lo, lo), np.minimum(self.hi, hi))._drop_empty()

    def intersect(self, other: "BoxSet") -> "BoxSet":
        parts = [self.intersect_box(lo, hi) for lo, hi in zip(other.lo, other.hi)]
        return BoxSet.union_disjoint(parts, self.dim)

    def meets(self, other: "BoxSet") -> bool:
        for lo, hi in zip(other.lo, other.hi):
            if np.any(np.all((np.maximum(self.lo, lo) < np.minimum(self.hi, hi)), axis=1)):
                return True
        return False

    def subtract_box(self, lo: np.ndarray, hi: np.ndarray) -> "BoxSet":
        """self minus [lo, hi), splitting only the boxes that overlap it."""
        overlap = np.all(np.maximum(self.lo, lo) < np.minimum(self.hi, hi), axis=1)
        if not overlap.any():
            return self
        keep_lo, keep_hi = [self.lo[~overlap]], [self.hi[~overlap]]
        cur_lo, cur_hi = self.lo[overlap].copy(), self.hi[overlap].copy()
        for axis in range(self.dim):
            below_hi = cur_hi.copy()
            below_hi[:, axis] = np.minimum(cur_hi[:, axis], lo[axis])
            keep_lo.append(cur_lo.copy())
            keep_hi.append(below_hi)
            above_lo = cur_lo.copy()
            above_lo[:, axis] = np.maximum(cur_lo[:, axis], hi[axis])
            keep_lo.append(above_lo)
            keep_hi.append(cur_hi.copy())
            cur_lo[:, axis] = np.maximum(cur_lo[:, axis], lo[axis])
            cur_hi[:, axis] = np.minimum(cur_hi[:, axis], hi[axis])
        out = BoxSet(np.vstack(keep_lo), np.vstack(keep_hi))._drop_empty()
        if out.n_boxes > HOLDER_CONFIG['max_boxes']:
            raise CapExceededError(f"box representation exceeds {HOLDER_CONFIG['max_boxes']} boxes")
        return out

    def subtract(self, other: "BoxSet") -> "BoxSet":
        out = self
        for lo, hi in zip(other.lo, other.hi):
            if out.is_empty:
                break
            out = out.subtract_box(lo, hi)
        return out

    @staticmethod
    def union_disjoint(parts: Sequence["BoxSet"], d: int) -> "BoxSet":
        parts = [p for p in parts if not p.is_empty]
        if not parts:
            return BoxSet.empty(d)
        return BoxSet(np.vstack([p.lo for p in parts]), np.vstack([p.hi for p in parts]))

    def mass(self, spec: MeasureSpec, draws: Optional[int] = None, seed: int = 0) -> Tuple[float, float]:
        """(mass, standard error); exact for product and discrete kinds."""
        if self.is_empty:
            return 0.0, 0.0
        if spec.kind is MeasureKind.PUSHFORWARD:
            draws = draws or HOLDER_CONFIG['mc_draws']
            X = sample(spec, draws, seed=seed)
            p = float(np.mean(self.contains(X)))
            return p, math.sqrt(max(p * (1 - p), 0.0) / draws)
        return math.fsum(box_masses(spec, self.lo, self.hi).tolist()), 0.0


def boxes_pairwise_disjoint(sets: Sequence[BoxSet], chunk: int = 2048) -> bool:
    """No two boxes from different sets overlap with positive volume."""
    sets = [s for s in sets if not s.is_empty]
    if len(sets) < 2:
        return True
    lo = np.vstack([s.lo for s in sets])
    hi = np.vstack([s.hi for s in sets])
    owner = np.concatenate([np.full(s.n_boxes, i) for i, s in enumerate(sets)])
    for start in range(0, lo.shape[0], chunk):
        a = slice(start, start + chunk)
        inter = np.all(np.maximum(lo[a, None, :], lo[None, :, :]) < np.minimum(hi[a, None, :], hi[None, :, :]), axis=2)
        inter &= owner[a, None] != owner[None, :]
        if inter.any():
            return False
    return True


# ---------------------------------------------------------------------------
# Multilevel cell hierarchy


@dataclass
class DyadicHierarchy:
    """
    Cells Q^l_j for levels s..t built from covers at eps_r = 3^-(r+2).

    base[r] lists the disjoint cells S_{r,1..m_r}; residual[r] is the mass of
    S_{r,0}, the complement of their union; cells[l] lists Q^l_j; parent[l]
    maps each cell of level l to its parent index at level l - 1.
    """
    spec: MeasureSpec
    levels: Tuple[int, int]
    beta: float
    dprime: float
    eps: Dict[int, float]
    tau: Dict[int, float]
    base: Dict[int, List[BoxSet]]
    residual: Dict[int, float]
    residual_bound: Dict[int, float]
    cells: Dict[int, List[BoxSet]]
    parent: Dict[int, List[int]]
    checks: Dict[str, bool] = field(default_factory=dict)

    def m(self, level: int) -> int:
        return len(self.cells[level])

    def to_dict(self) -> Dict:
        s, t = self.levels
        return {
            'levels': [s, t],
            'beta': self.beta,
            'dprime': self.dprime,
            'per_level': [{
                'level': r,
                'eps': self.eps[r],
                'tau': self.tau[r],
                'base_cells': len(self.base[r]),
                'cells': self.m(r),
                'cell_bound': 3.0 ** (self.dprime * (r + 2)),
                'residual_mass': self.residual[r],
                'residual_bound': self.residual_bound[r],
                'max_diameter': max([c.bounding_diameter() for c in self.cells[r]] or [0.0]),
                'diameter_bound': 3.0 ** (-r),
            } for r in range(s, t + 1)],
            'checks': self.checks,
        }


def default_dprime(spec: MeasureSpec, beta: float) -> float:
    from dimension import oracle_dims
    ref = oracle_dims(spec, beta)['wupper']
    base = float(spec.dim) if isinstance(ref, str) else float(ref)
    return max(base, 2.0 * beta) + HOLDER_CONFIG['hierarchy_margin']


def _ball_boxes(centers: np.ndarray, eps: float, snap: bool) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.maximum(centers - eps, 0.0)
    hi = centers + eps
    if snap:
        hi = np.nextafter(hi, np.inf)
    return lo, np.minimum(hi, 1.0)


def dyadic_hierarchy(spec: MeasureSpec, levels: Tuple[int, int], beta: float = 1.0,
                     dprime: Optional[float] = None, threads: Optional[int] = None) -> DyadicHierarchy:
    """
    Disjoint multilevel cells with diameters at most 3^-l.

    Level r starts from an (eps_r, tau_r)-cover with eps_r = 3^-(r+2) and
    tau_r = eps_r^(d' beta / (d' - 2 beta)); S_{r,j} is the j-th ball minus
    the earlier ones. Cells of level t are the S_{t,j}; a level-(l+1) cell
    joins the first S_{l,j} it meets, minus S_{l,0}.
    """
    from dimension import DIMENSION_CONFIG, eps_tau_cover

    s, t = int(levels[0]), int(levels[1])
    if s < 0 or t < s:
        raise ValidationError(f"levels must satisfy 0 <= s <= t, got {s}..{t}")
    if beta <= 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    dprime = default_dprime(spec, beta) if dprime is None else float(dprime)
    if dprime <= 2 * beta:
        raise RegimeError(f"d' = {dprime} must exceed 2 beta = {2 * beta}")
    exponent = dprime * beta / (dprime - 2 * beta)
    d = spec.dim
    unit_lo, unit_hi = np.zeros(d), np.ones(d)

    eps_map, tau_map, base, residual, bound = {}, {}, {}, {}, {}

    def build_level(r: int):
        eps = 3.0 ** -(r + 2)
        tau = eps ** exponent
        if tau < DIMENSION_CONFIG['tau_floor']:
            raise RegimeError(f"level {r} needs tau={tau:.3g}, below the resolvable {DIMENSION_CONFIG['tau_floor']}")
        cover = eps_tau_cover(spec, eps, tau)
        lo, hi = _ball_boxes(cover.centers, eps, snap=cover.method != "product_cells")
        taken = BoxSet.empty(d)
        cells = []
        for j in range(cover.cardinality):
            cell = BoxSet.from_box(lo[j], hi[j]).subtract(taken)
            if not cell.is_empty:
                cells.append(cell)
                taken = BoxSet.union_disjoint([taken, cell], d)
        covered = math.fsum(c.mass(spec)[0] for c in cells)
        return r, eps, tau, cells, max(0.0, 1.0 - covered)

    for r, eps, tau, cells, res in run_parallel(build_level, list(range(s, t + 1)), threads, label="level"):
        eps_map[r], tau_map[r], base[r], residual[r] = eps, tau, cells, res
        bound[r] = 3.0 ** (-(dprime * (r + 2) * beta) / (dprime - 2 * beta))
        logger.info(f"level {r}: {len(cells)} base cells, residual mass {res:.3g}")

    cells: Dict[int, List[BoxSet]] = {t: list(base[t])}
    parent: Dict[int, List[int]] = {}
    for level in range(t - 1, s - 1, -1):
        union_base = BoxSet.union_disjoint(base[level], d)
        groups: Dict[int, List[BoxSet]] = {}
        assignment = []
        for Q in cells[level + 1]:
            owner = next((j for j, S in enumerate(base[level]) if Q.meets(S)), None)
            assignment.append(owner)
            if owner is None:
                continue
            kept = Q.intersect(union_base)
            groups.setdefault(owner, []).append(kept)
        order = sorted(groups)
        index = {j: i for i, j in enumerate(order)}
        cells[level] = [BoxSet.union_disjoint(groups[j], d) for j in order]
        parent[level + 1] = [index[j] if j is not None else -1 for j in assignment]

    checks = {
        'disjoint': all(boxes_pairwise_disjoint(cells[r]) for r in cells),
        'diameter': all(c.bounding_diameter() <= 3.0 ** (-r) * (1 + 1e-9) for r in cells for c in cells[r]),
        'containment': True,
        'cell_count': all(len(base[r]) <= 3.0 ** (dprime * (r + 2)) for r in base),
        'residual': all(residual[r] <= max(bound[r], tau_map[r]) * (1 + 1e-9) + 1e-15 for r in base),
    }
    for level in range(s + 1, t + 1):
        union_residual_free = BoxSet.union_disjoint(base[level - 1], d)
        for Q, p in zip(cells[level], parent[level]):
            outside = Q.intersect(union_residual_free)
            if p >= 0:
                outside = outside.subtract(cells[level - 1][p])
            if outside.volume() > 1e-15 and not outside.is_empty:
                checks['containment'] = False
    h = DyadicHierarchy(spec=spec, levels=(s, t), beta=beta, dprime=dprime, eps=eps_map, tau=tau_map,
                        base=base, residual=residual, residual_bound=bound, cells=cells,
                        parent=parent, checks=checks)
    if not (checks['cell_count'] and checks['residual']):
        raise RegimeError(f"level range {s}..{t} is infeasible for this measure with d' = {dprime}: {checks}")
    return h


def mass_defect(h: DyadicHierarchy, sample_points: np.ndarray, spec: MeasureSpec, level: int) -> Dict:
    """
    M_r = sum_j |empirical(Q^r_j) - mu(Q^r_j)| with its bound sqrt(m mu(T) / n).
    """
    if level not in h.cells:
        raise ValidationError(f"level {level} outside {h.levels}")
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    n = X.shape[0]
    total, stderr2, mu_T = 0.0, 0.0, 0.0
    for cell in h.cells[level]:
        mu, se = cell.mass(spec)
        emp = float(np.mean(cell.contains(X)))
        total += abs(emp - mu)
        stderr2 += se ** 2
        mu_T += mu
    m = h.m(level)
    return {'value': total, 'stderr': math.sqrt(stderr2), 'cells': m, 'mu_T': mu_T, 'n': n,
            'bound': math.sqrt(m * mu_T / n)}


def mass_defect_trials(h: DyadicHierarchy, spec: MeasureSpec, level: int, n: int, trials: int,
                       seed: int = 0, threads: Optional[int] = None) -> Dict:
    """Per-trial M_r over fresh samples (trial t uses seed + t)."""
    runs = run_parallel(lambda t: mass_defect(h, sample(spec, n, seed=seed + t), spec, level),
                        list(range(trials)), threads, label="trial")
    values = [r['value'] for r in runs]
    return {
        'level': level, 'n': n, 'trials': trials, 'values': values,
        'mean': float(np.mean(values)),
        'sd': float(np.std(values, ddof=1)) if trials > 1 else 0.0,
        'bound': runs[0]['bound'], 'cells': runs[0]['cells'],
    }


def hierarchy_rate_bound(h: DyadicHierarchy, n: int, hs: HolderSpec) -> Dict:
    """C 3^(-t beta) + 2C sum_r mu(S_r0) + C sqrt(m_s/n) + 4C sum_r 3^(-beta r) sqrt(m_r log n / n)."""
    s, t = h.levels
    C, beta = hs.C, hs.beta
    terms = {
        'approximation': C * 3.0 ** (-t * beta),
        'residual': 2 * C * math.fsum(h.residual[r] for r in range(s, t + 1)),
        'coarse': C * math.sqrt(h.m(s) / n),
        'chaining': 4 * C * math.fsum(3.0 ** (-beta * r) * math.sqrt(h.m(r) * math.log(n) / n)
                                      for r in range(s, t + 1)),
    }
    terms['total'] = math.fsum(terms.values())
    return terms
