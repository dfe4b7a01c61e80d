"""Finite dyadic lattices with exact weighted rectangle calculus.

Everything in the package lives on the half-open unit box [0,1)^d sliced
into 2^(d*L) congruent cells.  Weights and grid functions are piecewise
constant on cells, so every integral that appears anywhere downstream is
a finite sum, and prefix tables evaluate it in O(2^d) per rectangle.
Prefix tables are accumulated and queried in extended precision so that
rectangle masses remain trustworthy deep into the cell budget; results
are rounded to float64 at the API boundary.

Besides the integration core this module owns the weight generators, the
doubling / reverse-doubling / strong-reverse-doubling scans with their
witnesses, and the explicit doubling bound implied by a strong
reverse-doubling constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as _iproduct

import numpy as np

from .errors import (
    AlignmentError,
    DomainError,
    ResourceError,
    ShapeError,
)

CELL_BUDGET_LOG2 = 24
MAX_DIM = 4
INFINITE = math.inf
MAX_BOUND_EXPONENT = 1 << 20

_LD = np.longdouble


@dataclass(frozen=True)
class Lattice:
    """Unit box [0,1)^dim cut into 2^depth cells per axis."""

    dim: int
    depth: int

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.depth

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def cell_count(self) -> int:
        return 1 << (self.dim * self.depth)

    @property
    def cell_side(self) -> float:
        return 2.0 ** -self.depth

    @property
    def cell_volume(self) -> float:
        return 2.0 ** -(self.dim * self.depth)

    def cell_centers(self) -> np.ndarray:
        """Centers along one axis (all axes are congruent)."""
        n = self.cells_per_axis
        return (np.arange(n) + 0.5) * self.cell_side


def make_lattice(dim: int, depth: int) -> Lattice:
    if not isinstance(dim, int) or not 1 <= dim <= MAX_DIM:
        raise DomainError(f"dim must be an integer in [1, {MAX_DIM}], got {dim!r}")
    if not isinstance(depth, int) or depth < 0:
        raise DomainError(f"depth must be a nonnegative integer, got {depth!r}")
    if dim * depth > CELL_BUDGET_LOG2:
        raise ResourceError(
            f"cell budget exceeded: 2^{dim * depth} cells, limit 2^{CELL_BUDGET_LOG2}"
        )
    return Lattice(dim, depth)


@dataclass(frozen=True)
class Rect:
    """Cell-aligned half-open rectangle, bounds in cell units per axis."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ShapeError("lo and hi must have the same length")
        for a, b in zip(self.lo, self.hi):
            if a > b:
                raise DomainError(f"inverted rectangle bounds {self.lo}..{self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def cells(self) -> int:
        out = 1
        for a, b in zip(self.lo, self.hi):
            out *= b - a
        return out


def full_rect(lat: Lattice) -> Rect:
    return Rect((0,) * lat.dim, (lat.cells_per_axis,) * lat.dim)


def rect_volume(lat: Lattice, rect: Rect) -> float:
    return rect.cells * lat.cell_volume


def rect_from_bounds(lat: Lattice, lo, hi) -> Rect:
    """Exactly cell-aligned box coordinates -> Rect, else alignment error."""
    n = lat.cells_per_axis
    ilo, ihi = [], []
    for a, b in zip(lo, hi):
        fa, fb = a * n, b * n
        ra, rb = round(fa), round(fb)
        if abs(fa - ra) > 1e-12 * n or abs(fb - rb) > 1e-12 * n:
            raise AlignmentError(f"bounds ({a}, {b}) are not aligned to 2^-{lat.depth} cells")
        if ra < 0 or rb > n:
            raise DomainError(f"bounds ({a}, {b}) leave the unit box")
        ilo.append(int(ra))
        ihi.append(int(rb))
    return Rect(tuple(ilo), tuple(ihi))


def _check_rect(lat: Lattice, rect: Rect) -> None:
    if rect.dim != lat.dim:
        raise ShapeError(f"rectangle dim {rect.dim} != lattice dim {lat.dim}")
    n = lat.cells_per_axis
    for a, b in zip(rect.lo, rect.hi):
        if a < 0 or b > n:
            raise DomainError(f"rectangle {rect.lo}..{rect.hi} leaves the box (n={n})")


class Weight:
    """Nonnegative piecewise-constant density with cached mass prefix tables.

    prefix(theta) holds cumulative sums of density**theta * cell_volume in
    extended precision, one table per requested theta.  Tables are built on
    demand; the object is otherwise immutable.
    """

    __slots__ = ("lattice", "density", "_prefix")

    def __init__(self, lattice: Lattice, density) -> None:
        arr = np.asarray(density, dtype=np.float64)
        if arr.shape != lattice.shape:
            if arr.size == lattice.cell_count:
                arr = arr.reshape(lattice.shape)
            else:
                raise ShapeError(
                    f"density shape {arr.shape} incompatible with lattice shape {lattice.shape}"
                )
        if not np.all(np.isfinite(arr)):
            raise DomainError("density must be finite")
        if np.any(arr < 0):
            bad = np.argwhere(arr < 0)[0]
            raise DomainError(
                f"density must be nonnegative, cell {tuple(int(i) for i in bad)} is not"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        self.lattice = lattice
        self.density = arr
        self._prefix: dict[float, np.ndarray] = {}

    def prefix(self, theta: float = 1.0) -> np.ndarray:
        theta = float(theta)
        if theta < 1.0:
            raise DomainError(f"theta must be >= 1, got {theta}")
        tab = self._prefix.get(theta)
        if tab is None:
            tab = _build_table(self.lattice, self.density, theta)
            self._prefix[theta] = tab
        return tab

    def total_mass(self) -> float:
        return float(self.prefix(1.0).flat[-1])


class GridFunction:
    """Nonnegative piecewise-constant function on the lattice cells."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice: Lattice, values) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != lattice.shape:
            if arr.size == lattice.cell_count:
                arr = arr.reshape(lattice.shape)
            else:
                raise ShapeError(
                    f"values shape {arr.shape} incompatible with lattice shape {lattice.shape}"
                )
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("grid function values must be finite and nonnegative")
        arr = arr.copy()
        arr.flags.writeable = False
        self.lattice = lattice
        self.values = arr


def _accumulate(lat: Lattice, cellwise: np.ndarray) -> np.ndarray:
    n = lat.cells_per_axis
    tab = np.zeros((n + 1,) * lat.dim, dtype=_LD)
    inner = tab[(slice(1, None),) * lat.dim]
    inner[...] = cellwise
    for ax in range(lat.dim):
        np.cumsum(inner, axis=ax, out=inner)
    tab.flags.writeable = False
    return tab


def _build_table(lat: Lattice, density: np.ndarray, theta: float) -> np.ndarray:
    base = density.astype(_LD)
    if theta != 1.0:
        base = base ** _LD(theta)
    return _accumulate(lat, base * _LD(2.0) ** (-(lat.dim * lat.depth)))


def weighted_mass_prefix(f: GridFunction, w: Weight) -> np.ndarray:
    """Prefix table of the measure f * density * cell_volume."""
    if f.lattice != w.lattice:
        raise ShapeError("function and weight live on different lattices")
    lat = w.lattice
    cellwise = f.values.astype(_LD) * w.density.astype(_LD)
    return _accumulate(lat, cellwise * _LD(2.0) ** (-(lat.dim * lat.depth)))


def _corner_terms(d: int):
    for corners in _iproduct((0, 1), repeat=d):
        sign = -1.0 if (d - sum(corners)) % 2 else 1.0
        yield corners, sign


def gather_boxes(tab: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Masses of integer cell boxes, shape (N, d, 2), from a prefix table."""
    d = boxes.shape[1]
    out = np.zeros(boxes.shape[0], dtype=_LD)
    for corners, sign in _corner_terms(d):
        idx = tuple(boxes[:, k, corners[k]] for k in range(d))
        out += sign * tab[idx]
    return out


def prefix_at(tab: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear prefix values at fractional cell coordinates (N, d).

    Exact for piecewise-constant densities, which is the only thing the
    tables ever store.
    """
    n = tab.shape[0] - 1
    d = pts.shape[1]
    pts = np.clip(np.asarray(pts, dtype=np.float64), 0.0, float(n))
    i = np.minimum(np.floor(pts).astype(np.int64), n - 1)
    f = pts.astype(_LD) - i
    out = np.zeros(pts.shape[0], dtype=_LD)
    for corners in _iproduct((0, 1), repeat=d):
        wgt = np.ones(pts.shape[0], dtype=_LD)
        for k in range(d):
            wgt = wgt * (f[:, k] if corners[k] else (1 - f[:, k]))
        idx = tuple(i[:, k] + corners[k] for k in range(d))
        out += wgt * tab[idx]
    return out


def gather_boxes_frac(tab: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Masses of fractional boxes (N, d, 2) in cell units, clipped to the box."""
    d = boxes.shape[1]
    out = np.zeros(boxes.shape[0], dtype=_LD)
    for corners, sign in _corner_terms(d):
        pts = np.stack([boxes[:, k, corners[k]] for k in range(d)], axis=1)
        out += sign * prefix_at(tab, pts)
    return out


def _as_box(rect: Rect) -> np.ndarray:
    return np.array([[[a, b] for a, b in zip(rect.lo, rect.hi)]], dtype=np.int64)


def integrate(w: Weight, rect: Rect) -> float:
    """Mass of the rectangle: sum of density * cell_volume over its cells."""
    _check_rect(w.lattice, rect)
    return float(gather_boxes(w.prefix(1.0), _as_box(rect))[0])


def power_integrate(w: Weight, rect: Rect, theta: float) -> float:
    """Integral of density**theta over the rectangle."""
    _check_rect(w.lattice, rect)
    return float(gather_boxes(w.prefix(theta), _as_box(rect))[0])


def box_mass(w: Weight, lo, hi, theta: float = 1.0) -> float:
    """Exact mass of an arbitrary (not necessarily aligned) box in [0,1]^d."""
    n = w.lattice.cells_per_axis
    box = np.empty((1, w.lattice.dim, 2), dtype=np.float64)
    for k, (a, b) in enumerate(zip(lo, hi)):
        box[0, k, 0] = a * n
        box[0, k, 1] = b * n
    box = np.clip(box, 0.0, float(n))
    box[:, :, 1] = np.maximum(box[:, :, 1], box[:, :, 0])
    return float(gather_boxes_frac(w.prefix(theta), box)[0])


def lp_norm(f: GridFunction, w: Weight, p: float) -> float:
    """(sum f^p * density * cell_volume)^(1/p)."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if f.lattice != w.lattice:
        raise ShapeError("function and weight live on different lattices")
    acc = (f.values.astype(_LD) ** _LD(p)) * w.density.astype(_LD)
    total = acc.sum(dtype=_LD) * _LD(2.0) ** (-(w.lattice.dim * w.lattice.depth))
    return float(total ** (_LD(1.0) / _LD(p)))


def _refine_array(a: np.ndarray, extra: int) -> np.ndarray:
    out = a
    for axis in range(a.ndim):
        out = np.repeat(out, 1 << extra, axis=axis)
    return out


def refine_weight(w: Weight, extra: int) -> Weight:
    """Same measure on a lattice `extra` levels deeper.

    Densities are piecewise constant, so every box mass is preserved exactly.
    """
    if extra < 0:
        raise DomainError(f"extra levels must be >= 0, got {extra}")
    if extra == 0:
        return w
    lat = make_lattice(w.lattice.dim, w.lattice.depth + extra)
    return Weight(lat, _refine_array(w.density, extra))


def refine_function(f: GridFunction, extra: int) -> GridFunction:
    """Same piecewise-constant function viewed on a deeper lattice."""
    if extra < 0:
        raise DomainError(f"extra levels must be >= 0, got {extra}")
    if extra == 0:
        return f
    lat = make_lattice(f.lattice.dim, f.lattice.depth + extra)
    return GridFunction(lat, _refine_array(f.values, extra))


# ---------------------------------------------------------------------------
# weight generators


def substream(seed: int, *path: int) -> np.random.Generator:
    """Counter-based stream from one config seed and a fixed integer path.

    Philox keys do not depend on draw order, so shard scheduling can never
    change results.
    """
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))


def _centers_grid(lat: Lattice) -> list[np.ndarray]:
    c = lat.cell_centers()
    return np.meshgrid(*([c] * lat.dim), indexing="ij")


def _axis_cascade(depth: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    # 1D multiplicative cascade: each split sends fraction beta of the mass
    # to one side chosen by coin flip and 1-beta to the other.
    masses = np.array([1.0])
    for _ in range(depth):
        heavy_left = rng.integers(0, 2, size=masses.size).astype(bool)
        left = np.where(heavy_left, beta, 1.0 - beta) * masses
        right = masses - left
        masses = np.empty(masses.size * 2)
        masses[0::2] = left
        masses[1::2] = right
    return masses


def gen_weight(lat: Lattice, spec: dict) -> Weight:
    """Deterministic weight from a descriptor dict (same spec -> same array).

    Kinds: constant(value), power(exponent, center), halfspace_cutoff(base),
    checkerboard(levels), random_lognormal(seed, roughness),
    cascade(beta, seed).
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise DomainError("weight spec must be a dict with a 'kind' key")
    kind = spec["kind"]
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        if c < 0 or not math.isfinite(c):
            raise DomainError(f"constant value must be finite and >= 0, got {c}")
        return Weight(lat, np.full(lat.shape, c))
    if kind == "power":
        a = float(spec["exponent"])
        if a <= -1.0:
            raise DomainError(f"power exponent {a} <= -1 gives a non-integrable density")
        center = spec.get("center", 0.5)
        if np.isscalar(center):
            center = (float(center),) * lat.dim
        grids = _centers_grid(lat)
        dist2 = np.zeros(lat.shape)
        for k in range(lat.dim):
            dist2 += (grids[k] - center[k]) ** 2
        dist = np.sqrt(dist2)
        if a < 0 and np.any(dist == 0):
            raise DomainError("power center sits on a cell center; negative exponent diverges")
        return Weight(lat, dist**a)
    if kind == "halfspace_cutoff":
        base = gen_weight(lat, spec.get("base", {"kind": "constant", "value": 1.0}))
        grids = _centers_grid(lat)
        mask = np.ones(lat.shape, dtype=bool)
        for k in range(lat.dim):
            mask &= grids[k] >= 0.5
        return Weight(lat, base.density * mask)
    if kind == "checkerboard":
        levels = int(spec.get("levels", 1))
        if not 0 <= levels <= lat.depth:
            raise DomainError(f"checkerboard levels must be in [0, {lat.depth}], got {levels}")
        grids = _centers_grid(lat)
        parity = np.zeros(lat.shape, dtype=np.int64)
        for k in range(lat.dim):
            parity += np.floor(grids[k] * (1 << levels)).astype(np.int64)
        return Weight(lat, np.where(parity % 2 == 0, 2.0, 1.0))
    if kind == "random_lognormal":
        seed = int(spec.get("seed", 0))
        rough = float(spec.get("roughness", 0.5))
        if rough < 0:
            raise DomainError(f"roughness must be >= 0, got {rough}")
        rng = substream(seed, 101)
        return Weight(lat, np.exp(rough * rng.standard_normal(lat.shape)))
    if kind == "cascade":
        beta = float(spec["beta"])
        if not 0.5 <= beta < 1.0:
            raise DomainError(f"cascade beta must be in [0.5, 1), got {beta}")
        seed = int(spec.get("seed", 0))
        dens = np.ones(())
        for k in range(lat.dim):
            axis = _axis_cascade(lat.depth, beta, substream(seed, 202, k))
            axis = axis * lat.cells_per_axis  # axis masses -> axis density factor
            dens = np.multiply.outer(dens, axis)
        return Weight(lat, dens.reshape(lat.shape))
    raise DomainError(f"unknown weight kind {kind!r}")


# ---------------------------------------------------------------------------
# doubling scans


@dataclass(frozen=True)
class Witness:
    """Extremal configuration of a scan; reevaluate() reproduces the value."""

    kind: str
    rect: Rect
    other: Rect
    axis: int | None
    shrink: int | None
    value: float

    def reevaluate(self, w: Weight) -> float:
        num = integrate(w, self.other)
        den = integrate(w, self.rect)
        if den == 0.0:
            return INFINITE if num > 0 else 0.0
        return num / den


@dataclass
class DoublingReport:
    """Measured extremal constants of one scan mode, with witnesses."""

    mode: str
    constant: float | None = None
    infinite: bool = False
    rev_C: float | None = None
    rev_eps: tuple[float, ...] | None = None
    rev_eps_cube: float | None = None
    strong_beta: float | None = None
    strong_absent: bool = False
    per_scale: dict | None = None
    witnesses: dict = field(default_factory=dict)

    @property
    def passes_reverse(self) -> bool:
        if self.rev_eps is None:
            return False
        return all(e > 0 for e in self.rev_eps)


def _position_boxes(n: int, sizes: tuple[int, ...]) -> np.ndarray:
    """All placements of a sizes-shaped rectangle, as (N, d, 2) int boxes."""
    axes = [np.arange(n - m + 1, dtype=np.int64) for m in sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    lo = np.stack([g.ravel() for g in mesh], axis=1)
    hi = lo + np.array(sizes, dtype=np.int64)
    return np.stack([lo, hi], axis=2)


def _rect_of(box_row: np.ndarray) -> Rect:
    return Rect(tuple(int(v) for v in box_row[:, 0]), tuple(int(v) for v in box_row[:, 1]))


def _masses64(tab: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    # Round once to float64 so scan ratios match Witness.reevaluate bit for bit.
    return gather_boxes(tab, boxes).astype(np.float64)


def _scan_doubling(w: Weight, per_axis_sizes: bool) -> tuple[float, bool, Witness | None]:
    """Max ratio mass(2R clipped to box)/mass(R) over even-sided cell boxes."""
    lat = w.lattice
    n = lat.cells_per_axis
    tab = w.prefix(1.0)
    best = -1.0
    witness = None
    even = range(2, n + 1, 2)
    size_tuples = (
        _iproduct(even, repeat=lat.dim) if per_axis_sizes else ((m,) * lat.dim for m in even)
    )
    for sizes in size_tuples:
        boxes = _position_boxes(n, sizes)
        base = _masses64(tab, boxes)
        dbl = boxes.copy()
        for k in range(lat.dim):
            half = sizes[k] // 2
            dbl[:, k, 0] = np.maximum(boxes[:, k, 0] - half, 0)
            dbl[:, k, 1] = np.minimum(boxes[:, k, 1] + half, n)
        big = _masses64(tab, dbl)
        zero = base == 0.0
        inf_here = zero & (big > 0.0)
        if inf_here.any():
            i = int(np.argmax(inf_here))
            wit = Witness("double", _rect_of(boxes[i]), _rect_of(dbl[i]), None, None, INFINITE)
            return INFINITE, True, wit
        if (~zero).any():
            ratios = np.where(zero, -1.0, big / np.where(zero, 1.0, base))
            i = int(np.argmax(ratios))
            if float(ratios[i]) > best:
                best = float(ratios[i])
                witness = Witness("double", _rect_of(boxes[i]), _rect_of(dbl[i]), None, None, best)
    return (best if best >= 0 else 0.0), False, witness


def _shrink_axis(boxes: np.ndarray, axis: int, s: int) -> np.ndarray:
    out = boxes.copy()
    width = boxes[:, axis, 1] - boxes[:, axis, 0]
    inner = width >> s
    margin = (width - inner) // 2
    out[:, axis, 0] = boxes[:, axis, 0] + margin
    out[:, axis, 1] = out[:, axis, 0] + inner
    return out


def _eps_from_per_scale(per_s: dict[int, tuple]) -> tuple[float | None, Witness | None]:
    """per_s: s -> (max ratio, base box, inner box).  The exponent is the
    worst decay rate over tested scales; the witness attains it."""
    best_eps = INFINITE
    wit = None
    for s, (ratio, bbox, ibox) in sorted(per_s.items()):
        if ratio <= 0.0:
            continue
        e = -math.log2(ratio) / s
        if e < best_eps:
            best_eps = e
            wit = Witness("shrink", _rect_of(bbox), _rect_of(ibox), None, s, ratio)
    if wit is None:
        return None, None
    return max(best_eps, 0.0), wit


def _scan_product_reverse(w: Weight) -> DoublingReport:
    """Dyadic rectangles, exactly cell-aligned concentric shrinks.

    A concentric shrink by 2^-s of a level-l dyadic edge stays cell-aligned
    exactly for s <= L - l - 1; those are the tested scales.  Per-axis
    shrinks give the product exponents, shrinking all axes of a dyadic cube
    at once gives the cube exponent.
    """
    lat = w.lattice
    n = lat.cells_per_axis
    tab = w.prefix(1.0)
    rep = DoublingReport(mode="product_reverse", rev_C=1.0)
    axis_per_s: list[dict[int, tuple]] = [dict() for _ in range(lat.dim)]
    cube_per_s: dict[int, tuple] = {}
    per_scale: dict = {}

    for levels in _iproduct(*([range(lat.depth + 1)] * lat.dim)):
        axes_pos = [np.arange(1 << lv, dtype=np.int64) * (n >> lv) for lv in levels]
        mesh = np.meshgrid(*axes_pos, indexing="ij")
        lo = np.stack([g.ravel() for g in mesh], axis=1)
        hi = lo + np.array([n >> lv for lv in levels], dtype=np.int64)
        boxes = np.stack([lo, hi], axis=2)
        base = _masses64(tab, boxes)
        ok = base > 0.0
        if not ok.any():
            continue
        safe = np.where(ok, base, 1.0)
        for axis in range(lat.dim):
            for s in range(1, lat.depth - levels[axis]):
                inner = _shrink_axis(boxes, axis, s)
                small = _masses64(tab, inner)
                ratios = np.where(ok, small / safe, -1.0)
                i = int(np.argmax(ratios))
                r = float(ratios[i])
                cur = axis_per_s[axis].get(s)
                if cur is None or r > cur[0]:
                    axis_per_s[axis][s] = (r, boxes[i], inner[i])
        if len(set(levels)) == 1:
            for s in range(1, lat.depth - levels[0]):
                inner = boxes
                for axis in range(lat.dim):
                    inner = _shrink_axis(inner, axis, s)
                small = _masses64(tab, inner)
                ratios = np.where(ok, small / safe, -1.0)
                i = int(np.argmax(ratios))
                r = float(ratios[i])
                cur = cube_per_s.get(s)
                if cur is None or r > cur[0]:
                    cube_per_s[s] = (r, boxes[i], inner[i])

    eps_list = []
    for axis in range(lat.dim):
        for s, (r, _, _) in axis_per_s[axis].items():
            per_scale[("axis", axis, s)] = r
        eps, wit = _eps_from_per_scale(axis_per_s[axis])
        if eps is None:
            eps = 0.0
        else:
            rep.witnesses[f"reverse_axis_{axis}"] = wit
        eps_list.append(eps)
    rep.rev_eps = tuple(eps_list)

    for s, (r, _, _) in cube_per_s.items():
        per_scale[("cube", s)] = r
    eps_cube, wit_cube = _eps_from_per_scale(cube_per_s)
    if eps_cube is None:
        rep.rev_eps_cube = 0.0
    else:
        rep.rev_eps_cube = eps_cube
        rep.witnesses["reverse_cube"] = wit_cube
    rep.per_scale = per_scale
    return rep


def _scan_strong(w: Weight) -> DoublingReport:
    """Max half-to-whole mass fraction over axis-halved even-edged boxes."""
    lat = w.lattice
    n = lat.cells_per_axis
    tab = w.prefix(1.0)
    rep = DoublingReport(mode="strong")
    best = -1.0
    wit = None
    for axis in range(lat.dim):
        size_ranges = [
            range(2, n + 1, 2) if k == axis else range(1, n + 1) for k in range(lat.dim)
        ]
        for sizes in _iproduct(*size_ranges):
            boxes = _position_boxes(n, sizes)
            base = _masses64(tab, boxes)
            ok = base > 0.0
            if not ok.any():
                continue
            half = sizes[axis] // 2
            left = boxes.copy()
            left[:, axis, 1] = left[:, axis, 0] + half
            right = boxes.copy()
            right[:, axis, 0] = right[:, axis, 0] + half
            lm = _masses64(tab, left)
            rm = _masses64(tab, right)
            frac = np.where(ok, np.maximum(lm, rm) / np.where(ok, base, 1.0), -1.0)
            i = int(np.argmax(frac))
            if float(frac[i]) > best:
                best = float(frac[i])
                side = left[i] if lm[i] >= rm[i] else right[i]
                wit = Witness("half", _rect_of(boxes[i]), _rect_of(side), axis, None, best)
    if best < 0.0:
        rep.strong_absent = True
        return rep
    rep.witnesses["strong"] = wit
    if best >= 1.0:
        rep.strong_absent = True
    else:
        rep.strong_beta = best
    return rep


def doubling_report(w: Weight, mode: str) -> DoublingReport:
    """Scan for the extremal ratios that define each weight-class constant.

    cube | rectangle: max mass(2R)/mass(R) over even-sided cubes or boxes
    at every position, doubles clipped to the unit box; a massless box
    with a massive double flags INFINITE.  0/0 placements are skipped.
    product_reverse: per-axis concentric-shrink decay exponents (C fixed
    at 1) plus the simultaneous cube exponent, dyadic rectangles only.
    strong: worst half-to-whole fraction, ABSENT when it reaches 1.
    """
    if w.lattice.depth < 2:
        raise DomainError("doubling scans need depth >= 2")
    if mode == "cube":
        constant, infinite, wit = _scan_doubling(w, per_axis_sizes=False)
    elif mode == "rectangle":
        constant, infinite, wit = _scan_doubling(w, per_axis_sizes=True)
    elif mode == "product_reverse":
        return _scan_product_reverse(w)
    elif mode == "strong":
        return _scan_strong(w)
    else:
        raise DomainError(f"unknown doubling mode {mode!r}")
    rep = DoublingReport(mode=mode, constant=constant, infinite=infinite)
    if wit is not None:
        rep.witnesses["doubling"] = wit
    return rep


@dataclass(frozen=True)
class StrongRdBound:
    """Explicit doubling-bound chain from a strong reverse-doubling beta."""

    n_steps: int
    gamma: float
    m_steps: int
    doubling_constant: int

    def as_tuple(self):
        return (self.n_steps, self.gamma, self.m_steps, self.doubling_constant)


def strong_rd_doubling_bound(beta: float) -> StrongRdBound:
    """Smallest N >= 2 with beta^N < 1/4, gamma = 2^(N-1)/(2^(N-1)-1),
    smallest M with gamma^M >= 2, doubling constant 2^M (exact integer).

    The exponent M grows like ln2 * 2^(N-1), so betas close to 1 demand
    integers far beyond any memory; those raise ResourceError instead of
    attempting the materialization.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must be in (0, 1), got {beta}")
    N = 2
    while beta**N >= 0.25:
        N += 1
    half = (1 << (N - 1)) - 1
    # ln(gamma) = -log1p(-2^-(N-1)); the log1p form stays accurate when
    # gamma hugs 1, where float(gamma) would round the gap away
    if N - 1 >= 40 or math.log(2.0) / math.log1p(1.0 / half) > MAX_BOUND_EXPONENT:
        raise ResourceError(
            f"beta={beta:.6g} gives cover ratio 1 + 2^-{N - 1}; the doubling "
            f"constant exponent is near ln2 * 2^{N - 1}, past the "
            f"{MAX_BOUND_EXPONENT}-bit budget"
        )
    gamma = Fraction(half + 1, half)
    # float estimate of M, then exact Fraction fixup in both directions
    M = max(1, math.ceil(math.log(2.0) / math.log1p(1.0 / half)) - 2)
    power = gamma**M
    while power < 2:
        power *= gamma
        M += 1
    while M > 1 and power / gamma >= 2:
        power /= gamma
        M -= 1
    return StrongRdBound(N, float(gamma), M, 1 << M)
