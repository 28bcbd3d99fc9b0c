"""
ReLU network representation and constructive approximators
Exact size accounting, assembly operators, the squaring/product/bump
building blocks and the Taylor-approximation pipeline
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from geometry import grid_cells
from holder import (HolderSpec, PiecewiseTaylorClass, SmoothFunction,
                    coordinate_function, multi_factorial, multi_indices, square_function)
from measures import MeasureSpec, sample
from utils import (SCHEMA_VERSION, DimensionMismatchError, RegimeError, ValidationError,
                   load_json, save_json)

logger = logging.getLogger(__name__)

RELUNET_CONFIG = {
    'eval_chunk': 4096,
    'dense_json_limit': 250000,   # entries per matrix written densely
    'error_draws': 20000,
    'error_seed': 0,
    'grid_factor': 0.5,           # grid scale h = (grid_factor * eps)^(1/alpha)
    'entropic_margin': 0.3,       # default s = entropic dimension + margin
}


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "id"


@dataclass
class Layer:
    weight: sparse.csr_matrix
    bias: np.ndarray
    activation: Activation

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


def make_layer(weight, bias, activation=Activation.RELU) -> Layer:
    W = sparse.csr_matrix(weight, dtype=float)
    W.eliminate_zeros()
    W.sort_indices()
    b = np.asarray(bias, dtype=float).ravel()
    if b.shape[0] != W.shape[0]:
        raise DimensionMismatchError(f"bias of length {b.shape[0]} for {W.shape[0]} units")
    return Layer(W, b, Activation(activation))


@dataclass
class NetStats:
    depth: int
    weights: int
    max_magnitude: float
    width: int
    range_bound: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            'L': self.depth,
            'W': self.weights,
            'B': self.max_magnitude,
            'width': self.width,
            'R': self.range_bound if self.range_bound is not None else "unknown",
        }


@dataclass
class ReluNetwork:
    """
    Affine maps alternating with component-wise ReLU; the last layer has
    the identity activation.
    """
    layers: List[Layer]
    range_bound: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatchError(f"layer widths do not compose: {prev.out_dim} -> {nxt.in_dim}")
        if self.layers[-1].activation is not Activation.IDENTITY:
            raise ValidationError("the final layer must use the identity activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def eval(self, X) -> np.ndarray:
        """Forward pass; a single point gives a vector, a (n, in) array gives (n, out)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim <= 1
        if single:
            X = X.reshape(1, -1)
        if X.shape[1] != self.input_dim:
            raise DimensionMismatchError(f"network takes {self.input_dim} inputs, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.output_dim))
        chunk = RELUNET_CONFIG['eval_chunk']
        for start in range(0, X.shape[0], chunk):
            H = X[start:start + chunk].T
            for layer in self.layers:
                H = layer.weight @ H + layer.bias[:, None]
                if layer.activation is Activation.RELU:
                    H = np.maximum(H, 0.0)
            out[start:start + chunk] = H.T
        return out[0] if single else out

    __call__ = eval

    def stats(self) -> NetStats:
        nnz = sum(int(np.count_nonzero(l.weight.data)) + int(np.count_nonzero(l.bias)) for l in self.layers)
        mags = [float(np.max(np.abs(l.weight.data))) for l in self.layers if l.weight.nnz]
        mags += [float(np.max(np.abs(l.bias))) for l in self.layers if l.bias.size]
        return NetStats(depth=self.depth, weights=nnz, max_magnitude=max(mags, default=0.0),
                        width=max(l.out_dim for l in self.layers), range_bound=self.range_bound)


# ---------------------------------------------------------------------------
# Assembly


def affine_network(weight, bias=None) -> ReluNetwork:
    W = np.atleast_2d(np.asarray(weight, dtype=float))
    b = np.zeros(W.shape[0]) if bias is None else bias
    return ReluNetwork([make_layer(W, b, Activation.IDENTITY)])


def identity_net(n: int, depth: int = 1) -> ReluNetwork:
    """x = ReLU(x) - ReLU(-x) carried through depth - 1 ReLU layers."""
    if depth < 1:
        raise ValidationError(f"depth must be positive, got {depth}")
    I = sparse.identity(n, format="csr")
    if depth == 1:
        return ReluNetwork([make_layer(I, np.zeros(n), Activation.IDENTITY)])
    layers = [make_layer(sparse.vstack([I, -I]), np.zeros(2 * n))]
    for _ in range(depth - 2):
        layers.append(make_layer(sparse.identity(2 * n, format="csr"), np.zeros(2 * n)))
    layers.append(make_layer(sparse.hstack([I, -I]), np.zeros(n), Activation.IDENTITY))
    return ReluNetwork(layers, name=f"identity{n}")


def compose(f: ReluNetwork, g: ReluNetwork) -> ReluNetwork:
    """f after g; g's output map is merged into f's first layer."""
    if g.output_dim != f.input_dim:
        raise DimensionMismatchError(f"cannot feed {g.output_dim} outputs into {f.input_dim} inputs")
    last, first = g.layers[-1], f.layers[0]
    merged = make_layer(first.weight @ last.weight, first.weight @ last.bias + first.bias, first.activation)
    return ReluNetwork(g.layers[:-1] + [merged] + f.layers[1:], range_bound=f.range_bound,
                       name=f"{f.name}∘{g.name}")


def identity_embed(net: ReluNetwork, target_depth: int) -> ReluNetwork:
    """Same function at exactly target_depth layers."""
    if target_depth < net.depth:
        raise ValidationError(f"cannot shrink depth {net.depth} to {target_depth}")
    if target_depth == net.depth:
        return net
    return compose(identity_net(net.output_dim, target_depth - net.depth + 1), net)


def _synchronize(nets: Sequence[ReluNetwork]) -> List[ReluNetwork]:
    depth = max(n.depth for n in nets)
    return [identity_embed(n, depth) for n in nets]


def parallel_stack(nets: Sequence[ReluNetwork], shared_input: bool = True) -> ReluNetwork:
    """
    Outputs concatenated. With shared_input all nets read the same input;
    otherwise the input is the concatenation of their inputs.
    """
    nets = list(nets)
    if not nets:
        raise ValidationError("nothing to stack")
    if shared_input and len({n.input_dim for n in nets}) > 1:
        raise DimensionMismatchError("shared-input stacking needs equal input dimensions")
    nets = _synchronize(nets)
    layers = []
    for k in range(nets[0].depth):
        parts = [n.layers[k] for n in nets]
        if k == 0 and shared_input:
            W = sparse.vstack([p.weight for p in parts], format="csr")
        else:
            W = sparse.block_diag([p.weight for p in parts], format="csr")
        layers.append(make_layer(W, np.concatenate([p.bias for p in parts]), parts[0].activation))
    bounds = [n.range_bound for n in nets]
    rb = None if any(b is None for b in bounds) else max(bounds)
    return ReluNetwork(layers, range_bound=rb, name="stack")


def affine_combine(nets: Sequence[ReluNetwork], coeffs: Sequence[float], bias: float = 0.0) -> ReluNetwork:
    """sum_i coeffs[i] * nets[i](x) + bias over a shared input."""
    nets = list(nets)
    if len(nets) != len(coeffs):
        raise DimensionMismatchError("one coefficient per network")
    if len({n.output_dim for n in nets}) > 1:
        raise DimensionMismatchError("combined networks need equal output dimensions")
    stacked = parallel_stack(nets, shared_input=True)
    out = nets[0].output_dim
    mix = sparse.hstack([c * sparse.identity(out, format="csr") for c in coeffs], format="csr")
    return compose(affine_network(mix.toarray(), np.full(out, bias)), stacked)


def translated_sum(net: ReluNetwork, shifts: np.ndarray, coeffs: np.ndarray) -> ReluNetwork:
    """sum_t coeffs[t] * net(x - shifts[t]) assembled without copying per term."""
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    T = shifts.shape[0]
    if T == 0:
        return affine_network(np.zeros((net.output_dim, net.input_dim)))
    first = net.layers[0]
    offsets = (first.bias[None, :] - (first.weight @ shifts.T).T).ravel()
    if net.depth == 1:
        W = coeffs.sum() * first.weight
        return ReluNetwork([make_layer(W, float(coeffs.sum()) * first.bias - first.weight @ (shifts.T @ coeffs),
                                       Activation.IDENTITY)])
    ones = sparse.csr_matrix(np.ones((T, 1)))
    layers = [make_layer(sparse.kron(ones, first.weight, format="csr"), offsets, first.activation)]
    eye = sparse.identity(T, format="csr")
    for layer in net.layers[1:-1]:
        layers.append(make_layer(sparse.kron(eye, layer.weight, format="csr"), np.tile(layer.bias, T),
                                 layer.activation))
    last = net.layers[-1]
    row = sparse.csr_matrix(coeffs.reshape(1, -1))
    layers.append(make_layer(sparse.kron(row, last.weight, format="csr"), coeffs.sum() * last.bias,
                             Activation.IDENTITY))
    return ReluNetwork(layers, name=f"sum[{T}]")


# ---------------------------------------------------------------------------
# Building blocks


def build_sq(m: int) -> ReluNetwork:
    """
    x -> x^2 on [0,1] as x - sum_{s<=m} g_s(x)/4^s, g the tent map.

    Exact at the dyadic points k/2^m, sup error at most 2^-(2m+2), all
    parameters bounded by 4.
    """
    if int(m) != m or m < 1:
        raise ValidationError(f"m must be a positive integer, got {m}")
    m = int(m)
    layers = [make_layer([[1.0], [1.0], [1.0]], [0.0, -0.5, 0.0])]
    for s in range(1, m):
        q = 4.0 ** -s
        layers.append(make_layer([[2.0, -4.0, 0.0], [2.0, -4.0, 0.0], [-2.0 * q, 4.0 * q, 1.0]],
                                 [0.0, -0.5, 0.0]))
    q = 4.0 ** -m
    layers.append(make_layer([[-2.0 * q, 4.0 * q, 1.0]], [0.0]))
    layers.append(make_layer([[1.0]], [0.0], Activation.IDENTITY))
    return ReluNetwork(layers, range_bound=1.0, name=f"sq{m}")


def build_prod2(m: int, M: float = 1.0) -> ReluNetwork:
    """xy on [-M,M]^2 as M^2 (sq(|x+y|/2M) - sq(|x-y|/2M)); exactly 0 when xy = 0."""
    if M < 1:
        raise ValidationError(f"M must be at least 1, got {M}")
    w = 1.0 / (2.0 * M)
    folds = ReluNetwork([
        make_layer([[w, w], [-w, -w], [w, -w], [-w, w]], np.zeros(4)),
        make_layer([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]], np.zeros(2), Activation.IDENTITY),
    ], name="fold")
    sq = build_sq(m)
    squares = parallel_stack([sq, sq], shared_input=False)
    diff = compose(affine_network([[M * M, -M * M]]), squares)
    net = compose(diff, folds)
    net.name = f"prod2_{m}"
    return net


def prodd_threshold(d: int) -> float:
    return 0.5 * (math.log2(4 * d) - 1.0)


def build_prodd(m: int, d: int) -> ReluNetwork:
    """
    Product of d numbers in [-1,1] as a left-nested chain of prod2 (M = 2).

    Sup error at most d / 2^(2m-1) on [-1,1]^d.
    """
    if d < 1:
        raise ValidationError(f"d must be positive, got {d}")
    if m < prodd_threshold(d):
        raise ValidationError(f"m={m} is below the threshold {prodd_threshold(d):.3g} for d={d}")
    if d == 1:
        return identity_net(1, 1)
    p2 = build_prod2(m, 2.0)
    net = None
    for k in range(1, d):
        rest = d - k - 1
        stage = p2 if rest == 0 else parallel_stack([p2, identity_net(rest, p2.depth)], shared_input=False)
        net = stage if net is None else compose(stage, net)
    net.name = f"prod{d}_{m}"
    return net


def build_bump_xi(a: float, b: float) -> ReluNetwork:
    """
    Trapezoid: 1 on [-b, b], 0 outside (-a, a), linear in between.

    ReLU((x+a)/(a-b)) - ReLU((x+b)/(a-b)) - ReLU((x-b)/(a-b)) + ReLU((x-a)/(a-b)).
    """
    if not 0 < b < a:
        raise ValidationError(f"need 0 < b < a, got a={a}, b={b}")
    w = 1.0 / (a - b)
    return ReluNetwork([
        make_layer([[w], [w], [w], [w]], [a * w, b * w, -b * w, -a * w]),
        make_layer([[1.0, -1.0, -1.0, 1.0]], [0.0], Activation.IDENTITY),
    ], range_bound=1.0, name="xi")


def build_clip(level: float, dim: int = 1) -> ReluNetwork:
    """y -> min(max(y, -level), level) coordinate-wise."""
    if level <= 0:
        raise ValidationError(f"clip level must be positive, got {level}")
    I = sparse.identity(dim, format="csr")
    return ReluNetwork([
        make_layer(sparse.vstack([I, I]), np.concatenate([np.full(dim, level), np.full(dim, -level)])),
        make_layer(sparse.hstack([I, -I]), np.full(dim, -level), Activation.IDENTITY),
    ], range_bound=level, name="clip")


def _check_grid(centers: np.ndarray, eps: float) -> None:
    steps = (centers / eps - 1.0) / 2.0
    if np.max(np.abs(steps - np.round(steps)), initial=0.0) > 1e-9:
        raise ValidationError(f"centers are not on the grid (2i+1)*{eps}")


def _partition_scales(eps: float, delta: Optional[float]) -> Tuple[float, float]:
    delta = eps / 2.0 if delta is None else float(delta)
    if not 0.0 < delta < eps:
        raise ValidationError(f"delta must lie in (0, eps), got {delta}")
    return eps + delta, delta


def build_partition_unity(eps: float, centers, delta: Optional[float] = None,
                          m: Optional[int] = None) -> List[ReluNetwork]:
    """
    Networks for zeta(x - theta_i) = prod_l xi(x_l - theta_il) with
    xi = xi_{eps+delta, delta}; products through build_prodd.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    _check_grid(centers, eps)
    a, b = _partition_scales(eps, delta)
    d = centers.shape[1]
    xi = build_bump_xi(a, b)
    per_axis = []
    for l in range(d):
        sel = np.zeros((1, d))
        sel[0, l] = 1.0
        per_axis.append(compose(xi, affine_network(sel)))
    factors = parallel_stack(per_axis, shared_input=True)
    if d > 1:
        m = m or max(8, math.ceil(prodd_threshold(d)))
        factors = compose(build_prodd(m, d), factors)
    return [translated_sum(factors, theta.reshape(1, -1), [1.0]) for theta in centers]


def partition_sum(eps: float, centers, X, delta: Optional[float] = None, exact_product: bool = True,
                  m: Optional[int] = None) -> np.ndarray:
    """sum_i zeta(x - theta_i); exact_product multiplies the per-axis xi values in floating point."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not exact_product:
        return sum(net.eval(X)[:, 0] for net in build_partition_unity(eps, centers, delta, m))
    _check_grid(centers, eps)
    a, b = _partition_scales(eps, delta)
    xi = build_bump_xi(a, b)
    total = np.zeros(X.shape[0])
    for theta in centers:
        vals = xi.eval((X - theta).reshape(-1, 1))[:, 0].reshape(X.shape)
        total += np.prod(vals, axis=1)
    return total


def unity_defect(eps: float, centers, X, delta: Optional[float] = None, exact_product: bool = True) -> float:
    return float(np.max(np.abs(partition_sum(eps, centers, X, delta, exact_product) - 1.0)))


# ---------------------------------------------------------------------------
# Taylor approximation pipeline


def _factor_net(s: Tuple[int, ...], a: float, b: float) -> ReluNetwork:
    """x -> (xi(x_1), ..., xi(x_d), x_j repeated s_j times) for the template at theta = 0."""
    d = len(s)
    w = 1.0 / (a - b)
    rows, bias = [], []
    for l in range(d):
        for off in (a, b, -b, -a):
            row = np.zeros(d)
            row[l] = w
            rows.append(row)
            bias.append(off * w)
    carried = [j for j in range(d) if s[j] > 0]
    for j in carried:
        for sign in (1.0, -1.0):
            row = np.zeros(d)
            row[j] = sign
            rows.append(row)
            bias.append(0.0)
    out_rows = []
    width = len(rows)
    for l in range(d):
        row = np.zeros(width)
        row[4 * l:4 * l + 4] = [1.0, -1.0, -1.0, 1.0]
        out_rows.append(row)
    for k, j in enumerate(carried):
        base = 4 * d + 2 * k
        for _ in range(s[j]):
            row = np.zeros(width)
            row[base], row[base + 1] = 1.0, -1.0
            out_rows.append(row)
    return ReluNetwork([make_layer(np.array(rows), bias),
                        make_layer(np.array(out_rows), np.zeros(len(out_rows)), Activation.IDENTITY)])


def expanded_cells(cover_centers: np.ndarray, h: float, dim: int) -> np.ndarray:
    """
    Grid cells (side 2h) meeting some cover ball of radius h, grown by their
    ℓ∞ neighbours. Neighbours may sit in the ring of cells just outside the
    cube so the bumps still sum to one up to its faces.
    """
    K = max(1, math.ceil(1.0 / (2.0 * h) - 1e-12))
    lo = grid_cells(np.clip(cover_centers - h, 0.0, 1.0), h)
    hi = grid_cells(np.clip(cover_centers + h, 0.0, 1.0), h)
    cells = set()
    for a, b in zip(lo, hi):
        for idx in np.ndindex(*(b - a + 1)):
            cells.add(tuple(a + np.asarray(idx)))
    grown = set()
    for c in cells:
        for off in np.ndindex(*([3] * dim)):
            n = tuple(int(ci + oi - 1) for ci, oi in zip(c, off))
            if all(-1 <= v <= K for v in n):
                grown.add(n)
    return np.array(sorted(grown), dtype=int).reshape(-1, dim)


@dataclass
class TaylorApproximation:
    net: ReluNetwork
    eps: float
    grid_scale: float
    m: int
    cells: int
    terms: int
    s: float
    error: float
    error_stderr: float
    alpha: float
    flags: List[str] = field(default_factory=list)

    def constants(self) -> Dict:
        """Measured a in L <= a log(1/eps), W <= a log(1/eps) eps^(-s/alpha), B <= a eps^(-1/alpha)."""
        st = self.net.stats()
        log_inv = math.log(1.0 / self.eps)
        return {
            'a_depth': st.depth / log_inv,
            'a_weights': st.weights / (log_inv * self.eps ** (-self.s / self.alpha)),
            'a_magnitude': st.max_magnitude / self.eps ** (-1.0 / self.alpha),
        }

    def to_dict(self) -> Dict:
        return {
            'eps': self.eps,
            'grid_scale': self.grid_scale,
            'm': self.m,
            'cells': self.cells,
            'terms': self.terms,
            's': self.s,
            'error': self.error,
            'error_stderr': self.error_stderr,
            'stats': self.net.stats().to_dict(),
            'constants': self.constants(),
            'flags': self.flags,
        }


def _choose_m(hs: HolderSpec, eps: float, n_monomials: int) -> int:
    k = hs.degree
    d = hs.dim
    need = math.log2(4.0 * 2 ** d * n_monomials * max(hs.C, 1.0) * (d + k) / eps)
    return max(1, math.ceil(prodd_threshold(d + k)), math.ceil((need + 1.0) / 2.0))


def build_taylor_approximator(func: SmoothFunction, hs: HolderSpec, eps: float, spec: MeasureSpec,
                              p: float = 1.0, s: Optional[float] = None, m: Optional[int] = None,
                              allow_finite_differences: bool = False,
                              error_draws: Optional[int] = None) -> TaylorApproximation:
    """
    ReLU network with L_p(spec) error about eps.

    Grid scale h = (eps/2)^(1/alpha); cells meeting an (h, h^(p alpha))-cover
    of spec and their neighbours carry quantized Taylor coefficients; each
    monomial-times-bump term is a prodd network and the sum is clipped to
    [-2C, 2C].
    """
    from dimension import eps_tau_cover, oracle_dims

    if func.dim != hs.dim or spec.dim != hs.dim:
        raise DimensionMismatchError(f"function ({func.dim}), measure ({spec.dim}) and Hölder spec "
                                     f"({hs.dim}) dimensions differ")
    flags = []
    if not func.exact:
        if not allow_finite_differences:
            raise ValidationError(f"{func.name} has no derivative oracle")
        flags.append("derivatives from central finite differences (approximate)")
    h = (RELUNET_CONFIG['grid_factor'] * eps) ** (1.0 / hs.beta)
    if not 0.0 < eps < 1.0 or h > 0.25:
        raise RegimeError(f"eps={eps} gives grid scale {h:.3g}; need at most 1/4")
    if s is None:
        ref = oracle_dims(spec, hs.beta)['entropic']
        base = float(spec.dim) if isinstance(ref, str) else float(ref)
        s = base + RELUNET_CONFIG['entropic_margin']

    cover = eps_tau_cover(spec, h, h ** (p * hs.beta))
    cells = expanded_cells(cover.centers, h, hs.dim)
    monomials = multi_indices(hs.dim, hs.degree)
    cls = PiecewiseTaylorClass(hs=hs, eps=h, delta=h ** hs.beta, cell_index=cells,
                               centers=(2.0 * cells + 1.0) * h, monomials=monomials)
    coeffs = cls.member(func)
    m = m or _choose_m(hs, eps, len(monomials))
    a, b = _partition_scales(h, None)

    groups, terms = [], 0
    for k, mono in enumerate(monomials):
        weights = coeffs[:, k] / multi_factorial(mono)
        keep = weights != 0.0
        if not keep.any():
            continue
        n_factors = hs.dim + sum(mono)
        template = _factor_net(mono, a, b)
        if n_factors > 1:
            template = compose(build_prodd(m, n_factors), template)
        groups.append(translated_sum(template, cls.centers[keep], weights[keep]))
        terms += int(keep.sum())
    if groups:
        body = affine_combine(groups, [1.0] * len(groups))
    else:
        body = affine_network(np.zeros((1, hs.dim)))
    net = compose(build_clip(2.0 * hs.C), body)
    net.name = f"taylor[{func.name}]"

    draws = error_draws or RELUNET_CONFIG['error_draws']
    X = sample(spec, draws, seed=RELUNET_CONFIG['error_seed'])
    err = np.abs(func(X) - net.eval(X)[:, 0]) ** p
    error = float(np.mean(err)) ** (1.0 / p)
    stderr = float(np.std(err, ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    logger.info(f"Taylor approximator {func.name} eps={eps:.4g}: h={h:.4g}, {cells.shape[0]} cells, "
                f"{terms} terms, m={m}, L_{p:g} error {error:.4g}")
    return TaylorApproximation(net=net, eps=eps, grid_scale=h, m=m, cells=int(cells.shape[0]), terms=terms,
                               s=s, error=error, error_stderr=stderr, alpha=hs.beta, flags=flags)


def builtin_generator(name: str, latent_dim: int = 1) -> List[SmoothFunction]:
    """Coordinate functions: identity (z), square_identity (z^2, z), parabola (z, z^2)."""
    if name == "identity":
        return [coordinate_function(k, latent_dim) for k in range(latent_dim)]
    if name == "square_identity":
        return [square_function(0, 1), coordinate_function(0, 1)]
    if name == "parabola":
        return [coordinate_function(0, 1), square_function(0, 1)]
    raise ValidationError(f"unknown builtin generator {name!r}")


@dataclass
class GeneratorApproximation:
    net: ReluNetwork
    coordinates: List[TaylorApproximation]
    eps: float

    def to_dict(self) -> Dict:
        return {
            'eps': self.eps,
            'outputs': self.net.output_dim,
            'stats': self.net.stats().to_dict(),
            'coordinates': [c.to_dict() for c in self.coordinates],
        }


def build_pushforward_generator(G: Sequence[SmoothFunction], alpha: float, C: float, eps: float,
                                latent: MeasureSpec, allow_finite_differences: bool = False) -> GeneratorApproximation:
    """Coordinate-wise Taylor approximators of G stacked over the shared latent input."""
    G = list(G)
    if not G:
        raise ValidationError("generator needs at least one coordinate")
    for g in G:
        if g.dim != latent.dim:
            raise DimensionMismatchError(f"coordinate {g.name} takes {g.dim} inputs, latent has {latent.dim}")
    hs = HolderSpec(alpha, C, latent.dim)
    parts = [build_taylor_approximator(g, hs, eps, latent, allow_finite_differences=allow_finite_differences)
             for g in G]
    net = parallel_stack([p.net for p in parts], shared_input=True)
    net.name = "generator"
    return GeneratorApproximation(net=net, coordinates=parts, eps=eps)


def generator_w1_gap(approx: GeneratorApproximation, G: Sequence[SmoothFunction], latent: MeasureSpec,
                     n: int, seed: int = 0) -> Dict:
    """W1 between G and the network pushforwards of n shared latent draws."""
    from transport import w1_exact

    Z = sample(latent, n, seed=seed)
    true = np.column_stack([g(Z) for g in G])
    fake = approx.net.eval(Z)
    value, _ = w1_exact(true, fake)
    coupled = float(np.mean(np.max(np.abs(true - fake), axis=1)))
    return {'w1': value, 'shared_coupling_bound': coupled, 'n': n,
            'bound': len(G) * approx.eps}


# ---------------------------------------------------------------------------
# Serialization


def to_json(net: ReluNetwork) -> Dict:
    layers = []
    for layer in net.layers:
        entry = {'b': layer.bias.tolist(), 'act': layer.activation.value}
        rows, cols = layer.weight.shape
        if rows * cols <= RELUNET_CONFIG['dense_json_limit']:
            entry['w'] = layer.weight.toarray().tolist()
        else:
            coo = layer.weight.tocoo()
            entry['w_sparse'] = {'shape': [rows, cols], 'rows': coo.row.tolist(),
                                 'cols': coo.col.tolist(), 'vals': coo.data.tolist()}
        layers.append(entry)
    return {'schema': SCHEMA_VERSION, 'name': net.name, 'input_dim': net.input_dim,
            'output_dim': net.output_dim, 'range_bound': net.range_bound, 'layers': layers}


def from_json(payload: Dict) -> ReluNetwork:
    layers = []
    for entry in payload['layers']:
        if 'w' in entry:
            W = np.asarray(entry['w'], dtype=float)
        else:
            sp = entry['w_sparse']
            W = sparse.csr_matrix((sp['vals'], (sp['rows'], sp['cols'])), shape=tuple(sp['shape']))
        layers.append(make_layer(W, entry['b'], entry['act']))
    return ReluNetwork(layers, range_bound=payload.get('range_bound'), name=payload.get('name', ""))


def save_network(path: str, net: ReluNetwork) -> None:
    save_json(path, to_json(net))


def load_network(path: str) -> ReluNetwork:
    return from_json(load_json(path))


def parse_generator(text: str, latent_dim: int = 1) -> List[SmoothFunction]:
    prefix, _, name = text.partition(":")
    if prefix != "builtin" or not name:
        raise ValidationError(f"generators are given as builtin:<name>, got {text!r}")
    return builtin_generator(name, latent_dim)

