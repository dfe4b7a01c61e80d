"""Bump functionals on cubes and rectangles, and the four characteristics.

The theta-bump of a box Q under a weight with density u is

    vol(Q)^(1 - 1/theta) * (integral of u^theta over Q)^(1/theta)

with theta = 1 reducing to the plain mass.  Characteristics are suprema of
kernel-weighted bump products over finite rectangle families; scans run
coarsest-first and keep the first maximizer, and every per-rectangle value
is computed in extended precision and rounded to float64 once, so a
reported witness re-evaluates to the reported value bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as _iproduct

import numpy as np

from .errors import DomainError, ShapeError
from .grids import Cube, DyadicGrid, DyadicRect, onethird_grids, standard_grid
from .lattice import (
    Rect,
    Weight,
    gather_boxes,
    gather_boxes_frac,
    make_lattice,
    rect_volume,
    substream,
)

_LD = np.longdouble


@dataclass(frozen=True)
class Exponents:
    """Integrability and smoothing exponents shared by the characteristics.

    r and s are only needed by the embedding machinery; leave them None
    elsewhere.
    """

    p: float
    q: float
    alpha: float
    beta: float
    m: int = 1
    n: int = 1
    theta: float = 1.0
    r: float | None = None
    s: float | None = None

    def __post_init__(self):
        if not 1.0 < self.p < self.q < math.inf:
            raise DomainError(f"need 1 < p < q < inf, got p={self.p}, q={self.q}")
        if self.theta < 1.0:
            raise DomainError(f"theta must be >= 1, got {self.theta}")
        if self.m < 1 or self.n < 1:
            raise DomainError("dimensions must be positive integers")
        if not 0.0 < self.alpha < self.m:
            raise DomainError(f"need 0 < alpha < m, got alpha={self.alpha}, m={self.m}")
        if not 0.0 < self.beta < self.n:
            raise DomainError(f"need 0 < beta < n, got beta={self.beta}, n={self.n}")
        if (self.r is None) != (self.s is None):
            raise DomainError("r and s come as a pair")
        if self.r is not None and not 1.0 < self.s < self.r < math.inf:
            raise DomainError(f"need 1 < s < r < inf, got s={self.s}, r={self.r}")

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def q_prime(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def inv_theta_prime(self) -> float:
        # 1/theta' = 1 - 1/theta; exactly 0 at theta = 1
        return 1.0 - 1.0 / self.theta


@dataclass(frozen=True)
class PowerKernel:
    """Rectangle kernel vol(I)^i_exp * vol(J)^j_exp."""

    i_exp: float
    j_exp: float

    @classmethod
    def from_exponents(cls, exps: Exponents) -> "PowerKernel":
        return cls(exps.alpha / exps.m - 1.0, exps.beta / exps.n - 1.0)


def _box_of_rect(rect: Rect) -> np.ndarray:
    out = np.empty((1, rect.dim, 2), dtype=np.int64)
    for k in range(rect.dim):
        out[0, k, 0] = rect.lo[k]
        out[0, k, 1] = rect.hi[k]
    return out


def _bump_of_masses(vols: np.ndarray, masses: np.ndarray, theta: float) -> np.ndarray:
    """Elementwise bump from extended-precision volumes and masses.

    Returns float64 after a single rounding; all suprema and witness
    re-evaluations go through here so the values agree exactly.
    """
    vols = np.asarray(vols, dtype=_LD)
    masses = np.maximum(np.asarray(masses, dtype=_LD), _LD(0.0))
    inv_tp = _LD(1.0) - _LD(1.0) / _LD(theta)
    vals = np.power(vols, inv_tp) * np.power(masses, _LD(1.0) / _LD(theta))
    return np.asarray(vals, dtype=np.float64)


def bump_cube(rect: Rect, w: Weight, theta: float) -> float:
    """Theta-bump of a cell-aligned box; theta = 1 gives the plain mass."""
    if theta < 1.0:
        raise DomainError(f"theta must be >= 1, got {theta}")
    if rect.dim != w.lattice.dim:
        raise ShapeError(f"box has {rect.dim} axes, lattice has {w.lattice.dim}")
    vol = rect_volume(w.lattice, rect)
    mass = gather_boxes(w.prefix(theta), _box_of_rect(rect))
    return float(_bump_of_masses(np.array([vol]), mass, theta)[0])


def bump_rect(i_rect: Rect, j_rect: Rect, w: Weight, theta: float) -> float:
    """Theta-bump of the product box I x J under a weight on m+n axes."""
    if i_rect.dim + j_rect.dim != w.lattice.dim:
        raise ShapeError(
            f"factors span {i_rect.dim}+{j_rect.dim} axes, lattice has {w.lattice.dim}"
        )
    joint = Rect(i_rect.lo + j_rect.lo, i_rect.hi + j_rect.hi)
    return bump_cube(joint, w, theta)


def slice_profile(j_rect: Rect, w: Weight, theta: float) -> Weight:
    """Collapse the last axes: density x -> bump of j_rect under the slice
    at x.  Exact for piecewise-constant densities, which makes the iterated
    identity hold to rounding error.
    """
    if theta < 1.0:
        raise DomainError(f"theta must be >= 1, got {theta}")
    d = w.lattice.dim
    n = j_rect.dim
    if not 1 <= n < d:
        raise ShapeError(f"slice needs 1..{d - 1} trailing axes, got {n}")
    m = d - n
    cells = w.lattice.cells_per_axis
    for k in range(n):
        if not 0 <= j_rect.lo[k] < j_rect.hi[k] <= cells:
            raise DomainError(f"slice box {j_rect} leaves the lattice")
    dens = np.asarray(w.density, dtype=_LD).reshape((cells,) * d)
    sel = (slice(None),) * m + tuple(slice(j_rect.lo[k], j_rect.hi[k]) for k in range(n))
    cell_vol = _LD(w.lattice.cell_side) ** n
    mass = np.power(dens[sel], _LD(theta)).sum(axis=tuple(range(m, d))) * cell_vol
    vol = _LD(w.lattice.cell_side) ** n * _LD(j_rect.cells)
    inv_tp = _LD(1.0) - _LD(1.0) / _LD(theta)
    prof = np.power(vol, inv_tp) * np.power(mass, _LD(1.0) / _LD(theta))
    out = make_lattice(m, w.lattice.depth)
    return Weight(out, np.asarray(prof, dtype=np.float64).reshape(-1))


def random_partition(lattice, seed: int, split_prob: float = 0.7) -> list[Rect]:
    """Random dyadic partition of the unit box into cell-aligned cubes.

    Walks the dyadic tree from the root; each cube splits into its 2^dim
    children with the given probability until the finest level.
    """
    rng = substream(seed, 404)
    out: list[Rect] = []
    stack = [(0, (0,) * lattice.dim)]
    while stack:
        level, idx = stack.pop()
        if level < lattice.depth and rng.uniform() < split_prob:
            for corner in _iproduct((0, 1), repeat=lattice.dim):
                stack.append((level + 1, tuple(2 * idx[k] + corner[k] for k in range(lattice.dim))))
        else:
            scale = lattice.cells_per_axis >> level
            out.append(Rect(tuple(i * scale for i in idx), tuple((i + 1) * scale for i in idx)))
    return out


# ---------------------------------------------------------------------------
# characteristics

_KINDS = ("one_param", "product_bump", "half_bump_omega", "no_bump")


@dataclass(frozen=True)
class CharacteristicResult:
    kind: str
    value: float
    witness: DyadicRect | Cube
    exps: Exponents

    def csv_row(self) -> str:
        e = self.exps
        if isinstance(self.witness, Cube):
            levels = str(self.witness.level)
            indices = " ".join(str(i) for i in self.witness.index)
        else:
            levels = f"{self.witness.i_cube.level}|{self.witness.j_cube.level}"
            indices = (
                " ".join(str(i) for i in self.witness.i_cube.index)
                + "|"
                + " ".join(str(i) for i in self.witness.j_cube.index)
            )
        return (
            f"{self.kind},{e.p:.17g},{e.q:.17g},{e.theta:.17g},"
            f"{e.alpha:.17g},{e.beta:.17g},{self.value:.17g},{levels},{indices}"
        )


def _level_cubes(grid: DyadicGrid, level: int, dim: int) -> list[tuple[int, ...]]:
    """Indices of level cubes meeting the open unit box."""
    per_axis = []
    side = 1.0 / (1 << level)
    for k in range(dim):
        off = float(grid.offset(k, level))
        ks = []
        k_idx = math.floor(-off / side)
        if (k_idx + 1) * side + off <= 0:
            k_idx += 1
        while k_idx * side + off < 1:
            ks.append(k_idx)
            k_idx += 1
        per_axis.append(ks)
    return [tuple(c) for c in _iproduct(*per_axis)]


def _cube_masses(grid: DyadicGrid, level: int, idxs, w: Weight, theta: float):
    """Masses and volumes for a batch of same-level cubes of one grid.

    Aligned grids gather integer boxes; third grids go through the exact
    fractional path.  Volumes are the full cube volume even when the cube
    pokes out of the unit box, where the density is zero.
    """
    dim = grid.dim
    depth = w.lattice.depth
    ncells = 1 << depth
    side_cells = float(2.0 ** (depth - level))
    n = len(idxs)
    boxes = np.empty((n, dim, 2), dtype=np.float64)
    for row, idx in enumerate(idxs):
        for k in range(dim):
            off = float(grid.offset(k, level)) * ncells
            a = idx[k] * side_cells + off
            boxes[row, k, 0] = min(max(a, 0.0), ncells)
            boxes[row, k, 1] = min(max(a + side_cells, 0.0), ncells)
    tab = w.prefix(theta)
    if grid.kind == "third":
        masses = gather_boxes_frac(tab, boxes)
    else:
        masses = gather_boxes(tab, np.rint(boxes).astype(np.int64))
    vols = np.full(n, _LD(2.0) ** (-level * dim))
    return vols, masses


def _factor_bumps(grid, w_list, thetas, level, dim):
    """Bump arrays for every cube of one grid level, one per weight."""
    idxs = _level_cubes(grid, level, dim)
    outs = []
    for w, theta in zip(w_list, thetas):
        vols, masses = _cube_masses(grid, level, idxs, w, theta)
        outs.append(_bump_of_masses(vols, masses, theta))
    return idxs, outs


def characteristic(
    kind: str,
    kernel: PowerKernel | None,
    sigma: Weight,
    omega: Weight,
    exps: Exponents,
    family: str | None = None,
) -> CharacteristicResult:
    """Supremum of the kernel-bump product over a finite rectangle family.

    family "dyadic" scans the standard grid pair; "onethird" scans all
    3^m * 3^n shifted pairs (the no-bump default, standing in for the
    supremum over arbitrary rectangles).  one_param scans cubes only.
    """
    if kind not in _KINDS:
        raise DomainError(f"unknown characteristic kind {kind!r}")
    if kernel is None:
        kernel = PowerKernel.from_exponents(exps)
    if family is None:
        family = "onethird" if kind == "no_bump" else "dyadic"
    if family not in ("dyadic", "onethird"):
        raise DomainError(f"unknown family {family!r}")
    if kind == "one_param":
        return _one_param_scan(kernel, sigma, omega, exps, family)
    return _rect_scan(kind, kernel, sigma, omega, exps, family)


def _grids_for(family: str, dim: int, depth: int) -> list[DyadicGrid]:
    if family == "dyadic":
        return [standard_grid(dim, 0, depth)]
    return onethird_grids(dim, 0, depth)


def _one_param_scan(kernel, sigma, omega, exps, family):
    if sigma.lattice != omega.lattice:
        raise ShapeError("sigma and omega must share a lattice")
    dim = sigma.lattice.dim
    if dim != exps.m:
        raise ShapeError(f"one_param wants an m={exps.m} lattice, got dim {dim}")
    depth = sigma.lattice.depth
    best = -1.0
    best_at: Cube | None = None
    for grid in _grids_for(family, dim, depth):
        for level in range(0, depth + 1):
            idxs, (bs, bw) = _factor_bumps(
                grid, (sigma, omega), (exps.theta, exps.theta), level, dim
            )
            vols = np.full(len(idxs), 2.0 ** (-level * dim))
            vals = (
                np.power(vols, kernel.i_exp)
                * np.power(bs, 1.0 / exps.p_prime)
                * np.power(bw, 1.0 / exps.q)
            )
            k = int(np.argmax(vals))
            if vals[k] > best:
                best = float(vals[k])
                best_at = Cube(grid, level, idxs[k])
    if best_at is None:
        raise DomainError("empty cube family")
    return CharacteristicResult("one_param", best, best_at, exps)


def _rect_scan(kind, kernel, sigma, omega, exps, family):
    if sigma.lattice != omega.lattice:
        raise ShapeError("sigma and omega must share a lattice")
    m, n = exps.m, exps.n
    if m + n != sigma.lattice.dim:
        raise ShapeError(
            f"rectangle kinds want an (m+n)={m + n} lattice, got dim {sigma.lattice.dim}"
        )
    depth = sigma.lattice.depth
    theta_sigma = exps.theta if kind == "product_bump" else 1.0
    theta_omega = exps.theta if kind in ("product_bump", "half_bump_omega") else 1.0
    i_grids = _grids_for(family, m, depth)
    j_grids = _grids_for(family, n, depth)
    s_prefix = sigma.prefix(theta_sigma)
    w_prefix = omega.prefix(theta_omega)
    best = -1.0
    best_at: DyadicRect | None = None
    for grid_i in i_grids:
        for grid_j in j_grids:
            for li in range(0, depth + 1):
                i_idx = _level_cubes(grid_i, li, m)
                i_boxes = _axis_boxes(grid_i, li, i_idx, m, depth)
                for lj in range(0, depth + 1):
                    j_idx = _level_cubes(grid_j, lj, n)
                    j_boxes = _axis_boxes(grid_j, lj, j_idx, n, depth)
                    boxes = _product_boxes(i_boxes, j_boxes)
                    frac = grid_i.kind == "third" or grid_j.kind == "third"
                    if frac:
                        ms = gather_boxes_frac(s_prefix, boxes)
                        mw = gather_boxes_frac(w_prefix, boxes)
                    else:
                        ib = np.rint(boxes).astype(np.int64)
                        ms = gather_boxes(s_prefix, ib)
                        mw = gather_boxes(w_prefix, ib)
                    vol_i = _LD(2.0) ** (-li * m)
                    vol_j = _LD(2.0) ** (-lj * n)
                    vols = np.full(len(ms), vol_i * vol_j)
                    bs = _bump_of_masses(vols, ms, theta_sigma)
                    bw = _bump_of_masses(vols, mw, theta_omega)
                    kval = float(2.0 ** (-li * m)) ** kernel.i_exp * float(
                        2.0 ** (-lj * n)
                    ) ** kernel.j_exp
                    vals = kval * np.power(bs, 1.0 / exps.p_prime) * np.power(bw, 1.0 / exps.q)
                    k = int(np.argmax(vals))
                    if vals[k] > best:
                        best = float(vals[k])
                        ii = k // len(j_idx)
                        jj = k % len(j_idx)
                        best_at = DyadicRect(
                            Cube(grid_i, li, i_idx[ii]), Cube(grid_j, lj, j_idx[jj])
                        )
    if best_at is None:
        raise DomainError("empty rectangle family")
    return CharacteristicResult(kind, best, best_at, exps)


def _axis_boxes(grid, level, idxs, dim, depth):
    ncells = 1 << depth
    side_cells = float(2.0 ** (depth - level))
    out = np.empty((len(idxs), dim, 2), dtype=np.float64)
    for row, idx in enumerate(idxs):
        for k in range(dim):
            off = float(grid.offset(k, level)) * ncells
            a = idx[k] * side_cells + off
            out[row, k, 0] = min(max(a, 0.0), ncells)
            out[row, k, 1] = min(max(a + side_cells, 0.0), ncells)
    return out


def _product_boxes(i_boxes, j_boxes):
    ni, m = i_boxes.shape[0], i_boxes.shape[1]
    nj, n = j_boxes.shape[0], j_boxes.shape[1]
    out = np.empty((ni * nj, m + n, 2), dtype=np.float64)
    out[:, :m, :] = np.repeat(i_boxes, nj, axis=0)
    out[:, m:, :] = np.tile(j_boxes, (ni, 1, 1))
    return out


def characteristic_at(
    kind: str,
    kernel: PowerKernel | None,
    witness,
    sigma: Weight,
    omega: Weight,
    exps: Exponents,
) -> float:
    """Re-evaluate one witness exactly as the scan computed it."""
    if kernel is None:
        kernel = PowerKernel.from_exponents(exps)
    depth = sigma.lattice.depth
    if kind == "one_param":
        cube = witness
        dim = cube.grid.dim
        vols, masses = _cube_masses(cube.grid, cube.level, [cube.index], sigma, exps.theta)
        bs = _bump_of_masses(vols, masses, exps.theta)
        vols, masses = _cube_masses(cube.grid, cube.level, [cube.index], omega, exps.theta)
        bw = _bump_of_masses(vols, masses, exps.theta)
        vol = 2.0 ** (-cube.level * dim)
        return float(
            np.power(vol, kernel.i_exp)
            * np.power(bs[0], 1.0 / exps.p_prime)
            * np.power(bw[0], 1.0 / exps.q)
        )
    theta_sigma = exps.theta if kind == "product_bump" else 1.0
    theta_omega = exps.theta if kind in ("product_bump", "half_bump_omega") else 1.0
    r: DyadicRect = witness
    m, n = r.m, r.n
    i_boxes = _axis_boxes(r.i_cube.grid, r.i_cube.level, [r.i_cube.index], m, depth)
    j_boxes = _axis_boxes(r.j_cube.grid, r.j_cube.level, [r.j_cube.index], n, depth)
    boxes = _product_boxes(i_boxes, j_boxes)
    frac = r.i_cube.grid.kind == "third" or r.j_cube.grid.kind == "third"
    if frac:
        ms = gather_boxes_frac(sigma.prefix(theta_sigma), boxes)
        mw = gather_boxes_frac(omega.prefix(theta_omega), boxes)
    else:
        ib = np.rint(boxes).astype(np.int64)
        ms = gather_boxes(sigma.prefix(theta_sigma), ib)
        mw = gather_boxes(omega.prefix(theta_omega), ib)
    li, lj = r.i_cube.level, r.j_cube.level
    vol_i = _LD(2.0) ** (-li * m)
    vol_j = _LD(2.0) ** (-lj * n)
    vols = np.full(1, vol_i * vol_j)
    bs = _bump_of_masses(vols, ms, theta_sigma)
    bw = _bump_of_masses(vols, mw, theta_omega)
    kval = float(2.0 ** (-li * m)) ** kernel.i_exp * float(2.0 ** (-lj * n)) ** kernel.j_exp
    vals = kval * np.power(bs, 1.0 / exps.p_prime) * np.power(bw, 1.0 / exps.q)
    return float(vals[0])
