"""
Synthetic measure zoo
Exact sampling, box-mass queries and mass truncation for the reference measures
"""
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from utils import (CapExceededError, DimensionMismatchError, DomainError,
                   EmptyInputError, ValidationError, load_point_cloud_csv,
                   make_rng)

logger = logging.getLogger(__name__)

MEASURE_CONFIG = {
    'cantor_depth': 40,              # digits per Cantor coordinate
    'pushforward_mc_draws': 100000,  # Monte-Carlo draws for pushforward box masses
    'mc_seed': 0,
    'max_atoms': 200000,             # truncation and surrogate cap
    'weight_tolerance': 1e-12,
}

# Top box faces at or beyond this value are closed so that [0,1]^d has full mass
ONE_PLUS = float(np.nextafter(1.0, 2.0))


class MeasureKind(str, Enum):
    DISCRETE_ATOMS = "atoms"
    GEOMETRIC_LATTICE = "geomlattice"
    RECIPROCAL_LATTICE = "reciplattice"
    CANTOR_PRODUCT = "cantor"
    UNIFORM_CUBE = "uniform"
    PUSHFORWARD = "pushforward"


LATTICE_KINDS = (MeasureKind.GEOMETRIC_LATTICE, MeasureKind.RECIPROCAL_LATTICE)
PRODUCT_KINDS = LATTICE_KINDS + (MeasureKind.CANTOR_PRODUCT, MeasureKind.UNIFORM_CUBE)
DISCRETE_KINDS = LATTICE_KINDS + (MeasureKind.DISCRETE_ATOMS,)


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """
    Analytic description of a probability measure on [0,1]^d.

    Cantor products order their coordinates as Cantor factors, then uniform
    factors, then coordinates pinned at 0 (padding).
    """
    kind: MeasureKind
    dim: int
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    alpha: float = 1.0 / 3.0
    cantor_factors: int = 0
    uniform_factors: int = 0
    generator: Optional[Callable[[np.ndarray], np.ndarray]] = None
    generator_name: str = ""
    latent: Optional["MeasureSpec"] = None
    surrogate_depth: Optional[int] = None
    source: str = ""

    @property
    def padding(self) -> int:
        if self.kind is MeasureKind.CANTOR_PRODUCT:
            return self.dim - self.cantor_factors - self.uniform_factors
        return 0

    @property
    def cantor_ratio(self) -> float:
        """Scale of each of the two pieces kept at every Cantor step."""
        return (1.0 - self.alpha) / 2.0

    def axis_role(self, axis: int) -> str:
        if self.kind is MeasureKind.CANTOR_PRODUCT:
            if axis < self.cantor_factors:
                return "cantor"
            if axis < self.cantor_factors + self.uniform_factors:
                return "uniform"
            return "zero"
        if self.kind is MeasureKind.UNIFORM_CUBE:
            return "uniform"
        return self.kind.value


@dataclass
class DiscreteMeasure:
    """Finitely many distinct atoms with weights summing to one."""
    atoms: np.ndarray
    weights: np.ndarray
    captured_mass: float = 1.0
    tail_mass: float = 0.0
    renormalization: float = 1.0

    @property
    def size(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[1])

    def to_dict(self, include_atoms: bool = True) -> Dict:
        out = {
            'size': self.size,
            'dim': self.dim,
            'captured_mass': self.captured_mass,
            'tail_mass': self.tail_mass,
            'renormalization': self.renormalization,
        }
        if include_atoms:
            out['atoms'] = self.atoms.tolist()
            out['weights'] = self.weights.tolist()
        return out


def make_discrete(atoms, weights=None, merge: bool = True) -> DiscreteMeasure:
    """
    Build a normalized DiscreteMeasure, merging repeated atoms.

    Args:
        atoms: (k, d) array, or a 1-D array of points on the line
        weights: nonnegative weights (uniform when omitted)
        merge: sum the weights of identical atoms

    Returns:
        DiscreteMeasure whose weights sum to one
    """
    X = np.asarray(atoms, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("discrete measure needs at least one atom")
    if weights is None:
        w = np.full(X.shape[0], 1.0 / X.shape[0])
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != X.shape[0]:
            raise DimensionMismatchError(f"{X.shape[0]} atoms but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
    total = math.fsum(w)
    if total <= 0:
        raise ValidationError("weights sum to zero")
    w = w / total

    if merge:
        uniq, inverse = np.unique(X, axis=0, return_inverse=True)
        if uniq.shape[0] < X.shape[0]:
            inverse = np.asarray(inverse).ravel()
            merged = np.bincount(inverse, weights=w, minlength=uniq.shape[0])
            # keep first-appearance order
            first = np.full(uniq.shape[0], X.shape[0], dtype=np.int64)
            np.minimum.at(first, inverse, np.arange(X.shape[0]))
            order = np.argsort(first, kind="stable")
            X, w = uniq[order], merged[order]
    return DiscreteMeasure(atoms=X, weights=w)


def empirical_measure(points) -> DiscreteMeasure:
    """Uniform weights 1/n on a sample, repeated points merged."""
    return make_discrete(points)


# ---------------------------------------------------------------------------
# Constructors


def uniform_cube(d: int, surrogate_depth: Optional[int] = None) -> MeasureSpec:
    _check_dim(d)
    return MeasureSpec(kind=MeasureKind.UNIFORM_CUBE, dim=d, surrogate_depth=surrogate_depth)


def geometric_lattice(d: int) -> MeasureSpec:
    """Atoms 1 - 2^-n per coordinate (n >= 1) with weight 2^-(n_1+...+n_d)."""
    _check_dim(d)
    return MeasureSpec(kind=MeasureKind.GEOMETRIC_LATTICE, dim=d)


def reciprocal_lattice(d: int) -> MeasureSpec:
    """Atoms 1/n per coordinate with weight 2^-(n_1+...+n_d)."""
    _check_dim(d)
    return MeasureSpec(kind=MeasureKind.RECIPROCAL_LATTICE, dim=d)


def cantor_product(alpha: float, cantor: int = 1, unif: int = 0, pad: int = 0,
                   surrogate_depth: Optional[int] = None) -> MeasureSpec:
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"Cantor removal fraction must lie in [0,1), got {alpha}")
    if cantor < 0 or unif < 0 or pad < 0 or cantor + unif + pad == 0:
        raise ValidationError("Cantor product needs nonnegative factor counts and at least one coordinate")
    return MeasureSpec(kind=MeasureKind.CANTOR_PRODUCT, dim=cantor + unif + pad, alpha=float(alpha),
                       cantor_factors=cantor, uniform_factors=unif, surrogate_depth=surrogate_depth)


def discrete_atoms(atoms, weights=None, source: str = "") -> MeasureSpec:
    dm = make_discrete(atoms, weights)
    _check_unit_cube(dm.atoms, "atoms")
    return MeasureSpec(kind=MeasureKind.DISCRETE_ATOMS, dim=dm.dim, atoms=dm.atoms,
                       weights=dm.weights, source=source)


def point_mass(x) -> MeasureSpec:
    return discrete_atoms(np.asarray(x, dtype=float).reshape(1, -1))


def pushforward(generator: Callable[[np.ndarray], np.ndarray], latent: MeasureSpec,
                dim: int, name: str = "custom") -> MeasureSpec:
    _check_dim(dim)
    return MeasureSpec(kind=MeasureKind.PUSHFORWARD, dim=dim, generator=generator,
                       generator_name=name, latent=latent)


def _parabola(Z: np.ndarray) -> np.ndarray:
    z = Z[:, 0]
    return np.column_stack([z, z * z])


def _segment(d: int) -> Callable[[np.ndarray], np.ndarray]:
    def generator(Z: np.ndarray) -> np.ndarray:
        return np.repeat(Z[:, :1], d, axis=1)
    return generator


def builtin_pushforward(name: str, d: int = 2) -> MeasureSpec:
    """Named generators on a Uniform[0,1] latent: parabola z -> (z, z^2), segment z -> (z,...,z)."""
    if name == "parabola":
        return pushforward(_parabola, uniform_cube(1), 2, "parabola")
    if name == "segment":
        return pushforward(_segment(d), uniform_cube(1), d, f"segment{d}")
    raise ValidationError(f"unknown pushforward generator {name!r} (use parabola or segment)")


def cantor_alpha_for_dimension(frac: float) -> float:
    """Removal fraction whose symmetric Cantor set has dimension frac in (0, 1]."""
    if not 0.0 < frac <= 1.0:
        raise ValidationError(f"Cantor dimension must lie in (0,1], got {frac}")
    return 1.0 - math.exp((1.0 - 1.0 / frac) * math.log(2.0))


def cantor_dimension(alpha: float) -> float:
    return math.log(2.0) / (math.log(2.0) - math.log(1.0 - alpha))


def cantor_product_for_dimension(dstar: float, ambient: Optional[int] = None) -> MeasureSpec:
    """One Cantor factor carrying the fractional part, floor(dstar) uniform factors, zero padding."""
    if dstar <= 0:
        raise ValidationError(f"target dimension must be positive, got {dstar}")
    unif = int(math.floor(dstar + 1e-12))
    frac = dstar - unif
    cantor = 1 if frac > 1e-12 else 0
    alpha = cantor_alpha_for_dimension(frac) if cantor else 1.0 / 3.0
    used = cantor + unif
    pad = 0 if ambient is None else ambient - used
    if pad < 0:
        raise ValidationError(f"ambient dimension {ambient} below the {used} coordinates needed")
    return cantor_product(alpha, cantor, unif, pad)


def _check_dim(d: int) -> None:
    if int(d) != d or d < 1:
        raise ValidationError(f"dimension must be a positive integer, got {d}")


def _check_unit_cube(X: np.ndarray, what: str) -> None:
    if X.min() < 0.0 or X.max() > 1.0:
        raise DomainError(f"{what} must lie in [0,1]^d")


# ---------------------------------------------------------------------------
# Mini-language


def parse_measure(text: str) -> MeasureSpec:
    """
    Parse the CLI measure mini-language.

    Forms: uniform:d=2, geomlattice:d=1, reciplattice:d=2,
    cantor:alpha=0.3333,cantor=1,unif=2[,pad=1], cantor:dim=2.5[,ambient=4],
    atoms:file=path.csv[,weights=w.csv], pushforward:gen=parabola,
    pushforward:gen=segment,d=5. Continuous kinds accept depth=k to set a
    truncation surrogate.
    """
    kind_text, _, rest = text.strip().partition(":")
    params: Dict[str, str] = {}
    for part in rest.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValidationError(f"malformed measure parameter {part!r} in {text!r}")
        key, value = part.split("=", 1)
        params[key.strip()] = value.strip()

    try:
        kind = MeasureKind(kind_text.strip().lower())
    except ValueError:
        raise ValidationError(f"unknown measure kind {kind_text!r}")

    def get_int(key: str, default: Optional[int] = None) -> int:
        if key not in params:
            if default is None:
                raise ValidationError(f"measure {kind.value} needs {key}=")
            return default
        try:
            return int(params[key])
        except ValueError:
            raise ValidationError(f"{key} must be an integer in {text!r}")

    depth = get_int('depth', 0) or None
    if kind is MeasureKind.UNIFORM_CUBE:
        return uniform_cube(get_int('d'), surrogate_depth=depth)
    if kind is MeasureKind.GEOMETRIC_LATTICE:
        return geometric_lattice(get_int('d'))
    if kind is MeasureKind.RECIPROCAL_LATTICE:
        return reciprocal_lattice(get_int('d'))
    if kind is MeasureKind.CANTOR_PRODUCT:
        if 'dim' in params:
            spec = cantor_product_for_dimension(float(params['dim']),
                                                get_int('ambient') if 'ambient' in params else None)
            if depth:
                spec = cantor_product(spec.alpha, spec.cantor_factors, spec.uniform_factors,
                                      spec.padding, surrogate_depth=depth)
            return spec
        return cantor_product(float(params.get('alpha', 1.0 / 3.0)), get_int('cantor', 1),
                              get_int('unif', 0), get_int('pad', 0), surrogate_depth=depth)
    if kind is MeasureKind.DISCRETE_ATOMS:
        if 'file' not in params:
            raise ValidationError("atoms measure needs file=")
        atoms = load_point_cloud_csv(params['file'])
        weights = None
        if 'weights' in params:
            weights = load_point_cloud_csv(params['weights']).ravel()
        return discrete_atoms(atoms, weights, source=params['file'])
    return builtin_pushforward(params.get('gen', 'parabola'), get_int('d', 2))


def describe(spec: MeasureSpec) -> Dict:
    """JSON-ready record of a spec, including its coordinate map and flags."""
    out: Dict = {'kind': spec.kind.value, 'dim': spec.dim, 'flags': []}
    if spec.kind is MeasureKind.GEOMETRIC_LATTICE:
        out['coordinate_map'] = "n -> 1 - 2^-n on each coordinate of N^d"
        out['weights'] = "2^-(n_1+...+n_d)"
    elif spec.kind is MeasureKind.RECIPROCAL_LATTICE:
        out['coordinate_map'] = "n -> 1/n on each coordinate of N^d"
        out['weights'] = "2^-(n_1+...+n_d)"
        out['flags'].append("reciprocal lattice weights taken as 2^-(n_1+...+n_d); "
                            "dimension values other than Minkowski are not asserted")
    elif spec.kind is MeasureKind.CANTOR_PRODUCT:
        out.update({
            'alpha': spec.alpha,
            'cantor_factors': spec.cantor_factors,
            'uniform_factors': spec.uniform_factors,
            'padding': spec.padding,
            'cantor_dimension': cantor_dimension(spec.alpha),
            'coordinate_map': "identity",
        })
    elif spec.kind is MeasureKind.DISCRETE_ATOMS:
        out.update({'atoms': int(spec.atoms.shape[0]), 'source': spec.source,
                    'coordinate_map': "identity"})
    elif spec.kind is MeasureKind.PUSHFORWARD:
        out.update({'generator': spec.generator_name, 'latent': describe(spec.latent),
                    'coordinate_map': "identity"})
    else:
        out['coordinate_map'] = "identity"
    if spec.surrogate_depth:
        out['surrogate_depth'] = spec.surrogate_depth
    return out


# ---------------------------------------------------------------------------
# Sampling


def lattice_coordinates(kind: MeasureKind, n: np.ndarray) -> np.ndarray:
    """Map positive integer indices to their coordinates in [0,1]."""
    n = np.asarray(n, dtype=float)
    if kind is MeasureKind.GEOMETRIC_LATTICE:
        return 1.0 - np.power(2.0, -n)
    return 1.0 / n


def cantor_digits_to_points(bits: np.ndarray, ratio: float) -> np.ndarray:
    """Points x = sum_k b_k (1 - r) r^(k-1) from 0/1 digits on the last axis."""
    depth = bits.shape[-1]
    scale = (1.0 - ratio) * np.power(ratio, np.arange(depth))
    return bits @ scale


def sample(spec: MeasureSpec, n: int, seed=0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Draw n i.i.d. points from spec as an (n, d) array.

    The generator is built from seed unless rng is passed; equal seeds give
    equal samples.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"sample size must be a positive integer, got {n}")
    n = int(n)
    rng = rng if rng is not None else make_rng(seed)

    if spec.kind is MeasureKind.UNIFORM_CUBE:
        return rng.random((n, spec.dim))
    if spec.kind in LATTICE_KINDS:
        levels = rng.geometric(0.5, size=(n, spec.dim))
        return lattice_coordinates(spec.kind, levels)
    if spec.kind is MeasureKind.CANTOR_PRODUCT:
        out = np.zeros((n, spec.dim))
        c, u = spec.cantor_factors, spec.uniform_factors
        if c:
            depth = MEASURE_CONFIG['cantor_depth']
            bits = rng.integers(0, 2, size=(n, c, depth)).astype(float)
            out[:, :c] = cantor_digits_to_points(bits, spec.cantor_ratio)
        if u:
            out[:, c:c + u] = rng.random((n, u))
        return out
    if spec.kind is MeasureKind.DISCRETE_ATOMS:
        idx = rng.choice(spec.atoms.shape[0], size=n, p=spec.weights)
        return spec.atoms[idx].copy()
    if spec.kind is MeasureKind.PUSHFORWARD:
        Z = sample(spec.latent, n, rng=rng)
        X = np.asarray(spec.generator(Z), dtype=float).reshape(n, -1)
        if X.shape[1] != spec.dim:
            raise DimensionMismatchError(f"generator returned {X.shape[1]} coordinates, expected {spec.dim}")
        _check_unit_cube(X, "generator outputs")
        return X
    raise ValidationError(f"unknown measure kind {spec.kind}")


# ---------------------------------------------------------------------------
# Boxes and masses


@dataclass
class Box:
    """
    Axis-aligned box [lo, hi) in [0,1]^d; faces with hi >= 1 are closed.
    """
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise DimensionMismatchError("box corners differ in dimension")

    @classmethod
    def unit(cls, d: int) -> "Box":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return int(self.lo.shape[0])

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.hi <= self.lo))

    def volume(self) -> float:
        return float(np.prod(np.maximum(self.hi - self.lo, 0.0)))

    def diameter(self, metric: str = "linf") -> float:
        side = np.maximum(self.hi - self.lo, 0.0)
        return float(side.max()) if metric == "linf" else float(np.sqrt(np.sum(side ** 2)))

    def contains(self, X: np.ndarray) -> np.ndarray:
        return points_in_box(X, self.lo, self.hi)

    def validate(self) -> "Box":
        if np.any(self.lo < 0.0) or np.any(self.hi > 1.0) or np.any(self.hi < self.lo):
            raise DomainError(f"box [{self.lo.tolist()}, {self.hi.tolist()}) is not inside [0,1]^d")
        return self

    def to_dict(self) -> Dict:
        return {'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


def points_in_box(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    upper = np.where(hi >= 1.0, ONE_PLUS, hi)
    return np.all((X >= lo) & (X < upper), axis=1)


def _lattice_axis(kind: MeasureKind) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distinct float coordinates of one lattice axis with their masses.

    Geometric coordinates collapse to 1.0 from n = 54 on, so that tail is
    folded into a final bucket.
    """
    if kind is MeasureKind.GEOMETRIC_LATTICE:
        ns = np.arange(1, 54)
        xs = lattice_coordinates(kind, ns)
        masses = np.power(2.0, -ns.astype(float))
        xs = np.append(xs, 1.0)
        masses = np.append(masses, 2.0 ** -53)
        return xs, masses
    ns = np.arange(1, 1100)
    return lattice_coordinates(kind, ns), np.power(2.0, -ns.astype(float))


def cantor_cdf(x, ratio: float, depth: int = 64) -> np.ndarray:
    """Distribution function of the symmetric Cantor measure with piece ratio r."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel().copy()
    out = np.zeros_like(flat)
    scale = np.ones_like(flat)
    active = (flat > 0.0) & (flat < 1.0)
    out[flat >= 1.0] = 1.0
    for _ in range(depth):
        if not active.any():
            break
        left = active & (flat < ratio)
        right = active & (flat >= 1.0 - ratio)
        gap = active & ~left & ~right
        half = scale / 2.0
        out[gap] += half[gap]
        out[right] += half[right]
        flat[left] = flat[left] / ratio
        flat[right] = (flat[right] - (1.0 - ratio)) / ratio
        scale = np.where(left | right, half, scale)
        active = left | right
    out[active] += scale[active] * np.clip(flat[active], 0.0, 1.0)
    return out.reshape(x.shape)


def axis_interval_masses(spec: MeasureSpec, axis: int, lo, hi) -> np.ndarray:
    """
    Marginal masses of [lo, hi) along one axis of a product measure.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    role = spec.axis_role(axis)
    if role == "uniform":
        return np.maximum(np.minimum(hi, 1.0) - np.maximum(lo, 0.0), 0.0)
    if role == "cantor":
        r = spec.cantor_ratio
        return np.maximum(cantor_cdf(np.minimum(hi, 1.0), r) - cantor_cdf(np.maximum(lo, 0.0), r), 0.0)
    if role == "zero":
        return ((lo <= 0.0) & (hi > 0.0)).astype(float)
    if spec.kind in LATTICE_KINDS:
        xs, masses = _lattice_axis(spec.kind)
        upper = np.where(hi >= 1.0, ONE_PLUS, hi)
        inside = (xs[None, :] >= lo[:, None]) & (xs[None, :] < upper[:, None])
        return inside.astype(float) @ masses
    raise ValidationError(f"{spec.kind.value} is not a product measure")


def box_mass_with_error(spec: MeasureSpec, box: Box, draws: Optional[int] = None,
                        seed: Optional[int] = None) -> Tuple[float, float]:
    """
    Mass of a box and its standard error (zero for exact kinds).

    Pushforward masses are Monte-Carlo frequencies over `draws` latent draws.
    """
    if box.dim != spec.dim:
        raise DimensionMismatchError(f"box has dimension {box.dim}, measure has {spec.dim}")
    box.validate()
    if box.is_empty:
        return 0.0, 0.0

    if spec.kind in PRODUCT_KINDS:
        mass = 1.0
        for axis in range(spec.dim):
            mass *= float(axis_interval_masses(spec, axis, box.lo[axis], box.hi[axis])[0])
        return mass, 0.0
    if spec.kind is MeasureKind.DISCRETE_ATOMS:
        inside = box.contains(spec.atoms)
        return float(math.fsum(spec.weights[inside])), 0.0

    draws = draws or MEASURE_CONFIG['pushforward_mc_draws']
    seed = MEASURE_CONFIG['mc_seed'] if seed is None else seed
    X = sample(spec, draws, seed=seed)
    p = float(np.mean(box.contains(X)))
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / draws)


def box_mass(spec: MeasureSpec, box: Box, draws: Optional[int] = None,
             seed: Optional[int] = None) -> float:
    return box_mass_with_error(spec, box, draws, seed)[0]


def box_masses(spec: MeasureSpec, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """Exact masses of many boxes at once (product and discrete kinds)."""
    los = np.atleast_2d(np.asarray(los, dtype=float))
    his = np.atleast_2d(np.asarray(his, dtype=float))
    if spec.kind in PRODUCT_KINDS:
        out = np.ones(los.shape[0])
        for axis in range(spec.dim):
            out *= axis_interval_masses(spec, axis, los[:, axis], his[:, axis])
        return out
    if spec.kind is MeasureKind.DISCRETE_ATOMS:
        return np.array([math.fsum(spec.weights[points_in_box(spec.atoms, lo, hi)])
                         for lo, hi in zip(los, his)])
    raise ValidationError("batch box masses need an exact measure kind")


# ---------------------------------------------------------------------------
# Truncation


def _compositions(total: int, parts: int):
    """Positive integer vectors of the given length summing to total, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def lattice_tail_numerator(level: int, d: int) -> int:
    """
    2^level times the lattice mass above `level`.

    The index sum of d independent Geometric(1/2) coordinates exceeds
    `level` exactly when `level` fair coin flips show fewer than d heads.
    """
    return sum(math.comb(level, j) for j in range(d))


def _truncate_lattice(spec: MeasureSpec, tau: float, max_atoms: int) -> DiscreteMeasure:
    d = spec.dim
    levels: List[Tuple[int, ...]] = []
    weights: List[float] = []
    level = d
    # uncovered mass is remaining * 2^-level, kept in integers
    remaining = 2 * lattice_tail_numerator(level - 1, d)
    while remaining * 2.0 ** -level > tau:
        w = 2.0 ** -level
        for comp in _compositions(level, d):
            levels.append(comp)
            weights.append(w)
            remaining -= 1
            if len(levels) > max_atoms:
                raise CapExceededError(f"truncation at tau={tau} needs more than {max_atoms} atoms")
            if remaining * w <= tau:
                break
        if remaining * w > tau:
            level += 1
            remaining *= 2

    tail = remaining * 2.0 ** -level
    idx = np.asarray(levels, dtype=float)
    atoms = lattice_coordinates(spec.kind, idx)
    original = np.asarray(weights)
    captured = math.fsum(original)
    return DiscreteMeasure(atoms=atoms, weights=original / captured, captured_mass=captured,
                           tail_mass=tail, renormalization=1.0 / captured)


def _truncate_atoms(spec: MeasureSpec, tau: float) -> DiscreteMeasure:
    order = np.argsort(-spec.weights, kind="stable")
    running = np.cumsum(spec.weights[order])
    keep = int(np.searchsorted(running, 1.0 - tau - 1e-15) + 1)
    keep = min(keep, order.shape[0])
    idx = order[:keep]
    original = spec.weights[idx]
    captured = math.fsum(original)
    return DiscreteMeasure(atoms=spec.atoms[idx], weights=original / captured, captured_mass=captured,
                           tail_mass=max(0.0, 1.0 - captured), renormalization=1.0 / captured)


def _axis_surrogate(spec: MeasureSpec, axis: int, depth: int) -> Tuple[np.ndarray, np.ndarray]:
    role = spec.axis_role(axis)
    if role == "zero":
        return np.zeros(1), np.ones(1)
    if role == "cantor":
        r = spec.cantor_ratio
        bits = np.array(list(itertools.product((0.0, 1.0), repeat=depth)))
        left = cantor_digits_to_points(bits, r)
        centers = left + (r ** depth) / 2.0
        return centers, np.full(centers.shape[0], 2.0 ** -depth)
    k = 2 ** depth
    return (np.arange(k) + 0.5) / k, np.full(k, 1.0 / k)


def surrogate(spec: MeasureSpec, depth: int, max_atoms: Optional[int] = None) -> DiscreteMeasure:
    """
    Finite-depth discretization of a continuous spec: cell centers of the
    level-`depth` dyadic (or Cantor) partition, each carrying its cell mass.
    """
    max_atoms = max_atoms or MEASURE_CONFIG['max_atoms']
    if spec.kind is MeasureKind.PUSHFORWARD:
        base = surrogate(spec.latent, depth, max_atoms)
        X = np.asarray(spec.generator(base.atoms), dtype=float).reshape(base.size, -1)
        return make_discrete(X, base.weights)
    axes = [_axis_surrogate(spec, axis, depth) for axis in range(spec.dim)]
    size = int(np.prod([a[0].shape[0] for a in axes]))
    if size > max_atoms:
        raise CapExceededError(f"surrogate of depth {depth} has {size} atoms (cap {max_atoms})")
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    masses = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    atoms = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([m.ravel() for m in masses]), axis=1)
    return make_discrete(atoms, weights)


def truncate(spec: MeasureSpec, tau: float, surrogate_depth: Optional[int] = None,
             max_atoms: Optional[int] = None) -> DiscreteMeasure:
    """
    Finite discrete measure carrying original mass at least 1 - tau.

    Countable kinds keep their heaviest atoms; continuous kinds need a
    surrogate depth (argument or spec.surrogate_depth).
    """
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"tau must lie in (0,1), got {tau}")
    max_atoms = max_atoms or MEASURE_CONFIG['max_atoms']
    if spec.kind in LATTICE_KINDS:
        out = _truncate_lattice(spec, tau, max_atoms)
    elif spec.kind is MeasureKind.DISCRETE_ATOMS:
        out = _truncate_atoms(spec, tau)
    else:
        depth = surrogate_depth or spec.surrogate_depth
        if not depth:
            raise ValidationError(f"{spec.kind.value} has no atoms; configure a surrogate depth to truncate it")
        out = surrogate(spec, depth, max_atoms)
    logger.info(f"truncated {spec.kind.value} at tau={tau:.3g}: {out.size} atoms, "
                f"captured mass {out.captured_mass:.12g}")
    return out
