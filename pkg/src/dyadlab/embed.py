"""Stopping cubes, Carleson sums, and the two embedding verifiers.

Everything here runs on the standard dyadic tree of the weight's own
lattice, truncated at its depth.  Shifted and one-third grids enter the
package only through the characteristic scans in `bump`; the checks below
are statements about one fixed grid, so the optional grid argument exists
for call-site symmetry and must be a standard grid when present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bump import _bump_of_masses, bump_cube, slice_profile
from .errors import ContractViolationError, DomainError, ShapeError
from .grids import DyadicGrid, GoodnessParams
from .lattice import (
    GridFunction,
    Lattice,
    Rect,
    Weight,
    doubling_report,
    full_rect,
    gather_boxes,
    integrate,
    lp_norm,
    make_lattice,
    weighted_mass_prefix,
)

_LD = np.longdouble

__all__ = [
    "CarlesonReport",
    "EmbedRectReport",
    "EmbedReport",
    "StoppingFamily",
    "automatic_carleson",
    "embed_check_cubes",
    "embed_check_rects",
    "good_carleson",
    "stopping_cubes",
]


def _require_standard(grid: DyadicGrid | None, dim: int) -> None:
    if grid is None:
        return
    if grid.kind != "std":
        raise DomainError(
            "stopping and embedding checks run on the standard grid; "
            f"got kind {grid.kind!r}"
        )
    if grid.dim != dim:
        raise ShapeError(f"grid has {grid.dim} axes, lattice has {dim}")


def _dyadic_level(lat: Lattice, P: Rect) -> int:
    """Level of a standard dyadic cube given in cell coordinates."""
    if P.dim != lat.dim:
        raise ShapeError(f"cube has {P.dim} axes, lattice has {lat.dim}")
    n = lat.cells_per_axis
    side = P.hi[0] - P.lo[0]
    if side <= 0 or side & (side - 1) or side > n:
        raise DomainError(f"side {side} cells is not a dyadic cube side")
    for a, b in zip(P.lo, P.hi):
        if b - a != side:
            raise DomainError(f"box {P.lo}..{P.hi} is not a cube")
        if a < 0 or b > n or a % side:
            raise DomainError(f"box {P.lo}..{P.hi} is not grid aligned")
    return lat.depth - (side.bit_length() - 1)


def _sub_boxes(lat: Lattice, P: Rect, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer boxes of all level subcubes of P, with indices relative to P."""
    side = lat.cells_per_axis >> level
    axes = [np.arange(a, b, side, dtype=np.int64) for a, b in zip(P.lo, P.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    lo = np.stack([g.ravel() for g in mesh], axis=1)
    boxes = np.stack([lo, lo + side], axis=2)
    rel = (lo - np.asarray(P.lo, dtype=np.int64)) // side
    return boxes, rel


def _bumps_at(w: Weight, theta: float, boxes: np.ndarray, level: int) -> np.ndarray:
    vols = np.full(boxes.shape[0], _LD(2.0) ** (-level * w.lattice.dim))
    return _bump_of_masses(vols, gather_boxes(w.prefix(theta), boxes), theta)


def _ratio(lhs: float, rhs: float) -> float:
    if rhs == 0.0:
        return 0.0 if lhs == 0.0 else math.inf
    return lhs / rhs


# ---------------------------------------------------------------------------
# stopping cubes


@dataclass(frozen=True)
class StoppingFamily:
    """Maximal dyadic cubes whose bump-normalized average exceeds 2^k.

    refined_ok records, cube by cube, whether the stronger lower bound
    (restricting the integral to the set where f > 2^(k-1)) also holds;
    it should, and a False here flags a genuine numerical tie.
    """

    k: int
    cubes: tuple[Rect, ...]
    averages: tuple[float, ...]
    refined_ok: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.cubes)


def stopping_cubes(
    f: GridFunction,
    w: Weight,
    theta: float,
    k: int,
    grid: DyadicGrid | None = None,
) -> StoppingFamily:
    """Top-down maximal selection: average > 2^k, no selected ancestor.

    The average of a cube Q is the f-mass of Q divided by its theta bump,
    so cubes of zero bump never qualify.  Selection walks levels from the
    root; a selected cube blocks its entire subtree, which is exactly the
    maximality in the family's contract and makes the cubes disjoint.
    """
    if theta < 1.0:
        raise DomainError(f"theta must be >= 1, got {theta}")
    lat = w.lattice
    _require_standard(grid, lat.dim)
    num = weighted_mass_prefix(f, w)
    threshold = 2.0 ** k
    cut = 2.0 ** (k - 1)
    restricted = GridFunction(lat, np.where(f.values > cut, f.values, 0.0))
    num_cut = weighted_mass_prefix(restricted, w)

    top = full_rect(lat)
    blocked = np.zeros((1,) * lat.dim, dtype=bool)
    cubes: list[Rect] = []
    averages: list[float] = []
    refined: list[bool] = []
    for level in range(lat.depth + 1):
        boxes, _ = _sub_boxes(lat, top, level)
        b = _bumps_at(w, theta, boxes, level)
        mf = gather_boxes(num, boxes).astype(np.float64)
        avg = np.where(b > 0.0, mf / np.where(b > 0.0, b, 1.0), 0.0)
        flat_blocked = blocked.reshape(-1)
        chosen = (avg > threshold) & ~flat_blocked
        for i in np.nonzero(chosen)[0]:
            lo = tuple(int(v) for v in boxes[i, :, 0])
            hi = tuple(int(v) for v in boxes[i, :, 1])
            cubes.append(Rect(lo, hi))
            averages.append(float(avg[i]))
            mass_cut = float(gather_boxes(num_cut, boxes[i : i + 1])[0])
            refined.append(mass_cut > cut * float(b[i]))
        blocked = (flat_blocked | chosen).reshape(blocked.shape)
        if level < lat.depth:
            for ax in range(lat.dim):
                blocked = np.repeat(blocked, 2, axis=ax)
    return StoppingFamily(
        k=int(k), cubes=tuple(cubes), averages=tuple(averages), refined_ok=tuple(refined)
    )


# ---------------------------------------------------------------------------
# Carleson sums


@dataclass(frozen=True)
class CarlesonReport:
    lhs_sum: float
    rhs_bound: float
    explicit_constant: float
    ratio: float
    witness: Rect

    @property
    def passes(self) -> bool:
        return self.ratio <= 1.0 + 1e-9


def automatic_carleson(
    P: Rect,
    w: Weight,
    theta: float,
    rho: float,
    grid: DyadicGrid | None = None,
) -> CarlesonReport:
    """Sum of bump^rho over all dyadic subcubes of P, against the bound
    that holds for every weight once theta > 1 and rho > 1.

    Each level contributes at most 2^(-level_gap * d * (rho-1)/theta')
    of the top term because the bump is superadditive in the volume
    factor; summing the geometric series gives the explicit constant
    1 / (1 - 2^(-d(rho-1)/theta')).  The top cube P itself is included.
    """
    if rho <= 1.0:
        raise DomainError(f"rho must exceed 1, got {rho}")
    if theta <= 1.0:
        raise DomainError(f"the automatic bound needs theta > 1, got {theta}")
    lat = w.lattice
    _require_standard(grid, lat.dim)
    level_p = _dyadic_level(lat, P)
    total = _LD(0.0)
    for level in range(level_p, lat.depth + 1):
        boxes, _ = _sub_boxes(lat, P, level)
        b = _bumps_at(w, theta, boxes, level).astype(_LD)
        total += np.power(b, _LD(rho)).sum(dtype=_LD)
    inv_theta_prime = 1.0 - 1.0 / theta
    constant = 1.0 / (1.0 - 2.0 ** (-lat.dim * (rho - 1.0) * inv_theta_prime))
    top = bump_cube(P, w, theta)
    rhs = constant * float(_LD(top) ** _LD(rho))
    lhs = float(total)
    return CarlesonReport(lhs, rhs, constant, _ratio(lhs, rhs), P)


def _good_rel_mask(rel: np.ndarray, gap_to_p: int, goodness: GoodnessParams) -> np.ndarray:
    """Goodness of same-level subcubes, relative to ancestors inside P.

    rel holds per-axis cube indices relative to P, so position within the
    gap-g ancestor is rel mod 2^g and all skeleton distances are exact
    integers in units of the cube side.  Cubes closer to P than the
    goodness range (gap_to_p < r) have nothing to clear and count as good;
    the trivial term of the explicit constant is what pays for them.
    """
    ok = np.ones(rel.shape[0], dtype=bool)
    for gap in range(goodness.r, gap_to_p + 1):
        width = 1 << gap
        half = width >> 1
        rg = rel & (width - 1)
        dmid = np.where(rg >= half, rg - half, half - rg - 1)
        dist = np.minimum(np.minimum(rg, width - 1 - rg), dmid)
        thr = 2.0 ** (1.0 + gap * (1.0 - goodness.eps))
        ok &= (dist > thr).all(axis=1)
        if not ok.any():
            break
    return ok


def good_carleson(
    P: Rect,
    w: Weight,
    rho: float,
    goodness: GoodnessParams,
    eta: float | None = None,
    grid: DyadicGrid | None = None,
) -> CarlesonReport:
    """Plain-mass Carleson sum over the good subcubes of P.

    Goodness is taken relative to P: a subcube at gap k clears the
    skeleton of every ancestor at gaps r..k.  The explicit constant has a
    trivial term (r+1) * 2^(d*r) covering the shallow gaps and a geometric
    series driven by the measured reverse-doubling exponent of the weight;
    eta defaults to the cube exponent of the product_reverse scan.
    """
    if rho <= 1.0:
        raise DomainError(f"rho must exceed 1, got {rho}")
    lat = w.lattice
    _require_standard(grid, lat.dim)
    level_p = _dyadic_level(lat, P)

    scan = doubling_report(w, "product_reverse")
    eta_val = float(eta) if eta is not None else float(scan.rev_eps_cube or 0.0)
    if not scan.passes_reverse or eta_val <= 0.0:
        witness = None
        if scan.rev_eps is not None:
            for axis, eps in enumerate(scan.rev_eps):
                if eps <= 0.0:
                    witness = scan.witnesses.get(f"reverse_axis_{axis}")
                    break
        if witness is None:
            witness = scan.witnesses.get("reverse_cube")
        err = DomainError(
            "weight fails the reverse-doubling precondition: axis exponents "
            f"{scan.rev_eps}, cube exponent {scan.rev_eps_cube}, witness {witness}"
        )
        err.witness = witness
        raise err

    decay = eta_val * (1.0 - goodness.eps) * (rho - 1.0)
    trivial = (goodness.r + 1) * 2.0 ** (lat.dim * goodness.r)
    constant = trivial + float(scan.rev_C) / (1.0 - 2.0 ** (-decay))

    mass_tab = w.prefix(1.0)
    total = _LD(0.0)
    for level in range(level_p, lat.depth + 1):
        boxes, rel = _sub_boxes(lat, P, level)
        good = _good_rel_mask(rel, level - level_p, goodness)
        if not good.any():
            continue
        masses = gather_boxes(mass_tab, boxes[good]).astype(np.float64)
        total += np.power(masses.astype(_LD), _LD(rho)).sum(dtype=_LD)
    top = integrate(w, P)
    rhs = constant * float(_LD(top) ** _LD(rho))
    lhs = float(total)
    return CarlesonReport(lhs, rhs, constant, _ratio(lhs, rhs), P)


# ---------------------------------------------------------------------------
# embedding checks


@dataclass(frozen=True)
class EmbedReport:
    lhs: float
    rhs_norm: float
    ratio: float


def embed_check_cubes(
    f: GridFunction,
    w: Weight,
    theta: float,
    r: float,
    s: float,
    grid: DyadicGrid | None = None,
) -> EmbedReport:
    """lhs = {sum over cubes of bump^(r/s) * average^r}^(1/r) vs the L^s norm.

    Cubes of zero bump carry no f-mass and are skipped.  The quotient is
    rearranged to mass^r * bump^(r/s - r) so each term is a product of two
    monotone factors, evaluated in extended precision.
    """
    if theta <= 1.0:
        raise DomainError(f"the cube embedding needs theta > 1, got {theta}")
    if not 1.0 < s < r:
        raise DomainError(f"exponents must satisfy 1 < s < r, got s={s}, r={r}")
    lat = w.lattice
    _require_standard(grid, lat.dim)
    num = weighted_mass_prefix(f, w)
    top = full_rect(lat)
    total = _LD(0.0)
    for level in range(lat.depth + 1):
        boxes, _ = _sub_boxes(lat, top, level)
        b = _bumps_at(w, theta, boxes, level).astype(_LD)
        mf = gather_boxes(num, boxes)
        pos = b > 0.0
        if pos.any():
            total += (
                np.power(mf[pos], _LD(r)) * np.power(b[pos], _LD(r / s - r))
            ).sum(dtype=_LD)
    lhs = float(np.power(total, _LD(1.0) / _LD(r)))
    rhs = lp_norm(f, w, s)
    return EmbedReport(lhs, rhs, _ratio(lhs, rhs))


@dataclass(frozen=True)
class EmbedRectReport:
    lhs: float
    rhs_norm: float
    ratio: float
    intermediate: float
    minkowski_mid: float
    max_slice_ratio: float
    max_point_ratio: float


def _factor_boxes(cells: int, dims: int, level: int) -> np.ndarray:
    side = cells >> level
    pos = np.arange(1 << level, dtype=np.int64) * side
    mesh = np.meshgrid(*([pos] * dims), indexing="ij")
    lo = np.stack([g.ravel() for g in mesh], axis=1)
    return np.stack([lo, lo + side], axis=2)


def _cross_boxes(i_boxes: np.ndarray, j_boxes: np.ndarray) -> np.ndarray:
    ni, m = i_boxes.shape[0], i_boxes.shape[1]
    nj, n = j_boxes.shape[0], j_boxes.shape[1]
    out = np.empty((ni * nj, m + n, 2), dtype=np.int64)
    out[:, :m, :] = np.repeat(i_boxes, nj, axis=0)
    out[:, m:, :] = np.tile(j_boxes, (ni, 1, 1))
    return out


def embed_check_rects(
    f: GridFunction,
    w: Weight,
    theta: float,
    r: float,
    s: float,
    m: int = 1,
    grids: tuple[DyadicGrid, DyadicGrid] | None = None,
) -> EmbedRectReport:
    """Rectangle version of the embedding check, with its proof chain.

    The lhs runs over all products of a dyadic cube in the first m axes
    with one in the rest, by direct enumeration.  The report also carries
    the two middle quantities of the slicing proof:

      intermediate   sum over J of ||g_J||^r, where g_J is the J-average
                     of f against the slice-profile measure of J,
      minkowski_mid  the x-integral that Minkowski's inequality puts
                     between intermediate^(s/r) and the L^s norm.

    The chain lhs^r <= max_slice_ratio^r * intermediate, then
    intermediate^(s/r) <= minkowski_mid <= max_point_ratio^s * rhs_norm^s,
    is verified numerically and a violation raises, since each link is an
    identity or a theorem once the per-slice ratios are measured.
    """
    if theta <= 1.0:
        raise DomainError(f"the rectangle embedding needs theta > 1, got {theta}")
    if not 1.0 < s < r:
        raise DomainError(f"exponents must satisfy 1 < s < r, got s={s}, r={r}")
    lat = w.lattice
    if not 1 <= m < lat.dim:
        raise ShapeError(f"first factor must span 1..{lat.dim - 1} axes, got {m}")
    if grids is not None:
        gi, gj = grids
        _require_standard(gi, m)
        _require_standard(gj, lat.dim - m)
    n_ax = lat.dim - m
    cells = lat.cells_per_axis
    depth = lat.depth

    num = weighted_mass_prefix(f, w)
    wtab = w.prefix(theta)
    total = _LD(0.0)
    for li in range(depth + 1):
        i_boxes = _factor_boxes(cells, m, li)
        for lj in range(depth + 1):
            boxes = _cross_boxes(i_boxes, _factor_boxes(cells, n_ax, lj))
            vols = np.full(boxes.shape[0], _LD(2.0) ** (-(li * m + lj * n_ax)))
            b = _bump_of_masses(vols, gather_boxes(wtab, boxes), theta).astype(_LD)
            mf = gather_boxes(num, boxes)
            pos = b > 0.0
            if pos.any():
                total += (
                    np.power(mf[pos], _LD(r)) * np.power(b[pos], _LD(r / s - r))
                ).sum(dtype=_LD)
    lhs = float(np.power(total, _LD(1.0) / _LD(r)))
    rhs = lp_norm(f, w, s)

    # Proof chain, part one: slice against every dyadic J.
    m_lat = make_lattice(m, depth)
    n_lat = make_lattice(n_ax, depth)
    cellvol_n = _LD(2.0) ** (-n_ax * depth)
    f_shaped = f.values.astype(_LD)
    u_shaped = w.density.astype(_LD)
    lead = (slice(None),) * m
    trailing_axes = tuple(range(m, lat.dim))
    intermediate = _LD(0.0)
    lhs_r_check = _LD(0.0)
    max_slice_ratio = 0.0
    for lj in range(depth + 1):
        for j_row in _factor_boxes(cells, n_ax, lj):
            j_rect = Rect(tuple(int(v) for v in j_row[:, 0]), tuple(int(v) for v in j_row[:, 1]))
            nu = slice_profile(j_rect, w, theta)
            sel = lead + tuple(slice(a, b) for a, b in zip(j_rect.lo, j_rect.hi))
            h = (f_shaped[sel] * u_shaped[sel]).sum(axis=trailing_axes) * cellvol_n
            dens = nu.density
            g = np.where(dens > 0.0, h.astype(np.float64) / np.where(dens > 0.0, dens, 1.0), 0.0)
            rep = embed_check_cubes(GridFunction(m_lat, g), nu, theta, r, s)
            intermediate += _LD(rep.rhs_norm) ** _LD(r)
            lhs_r_check += _LD(rep.lhs) ** _LD(r)
            if rep.rhs_norm > 0.0:
                max_slice_ratio = max(max_slice_ratio, rep.ratio)

    # Part two: the per-point slice lemma on the other factor.
    cellvol_m = _LD(2.0) ** (-m * depth)
    minkowski_mid = _LD(0.0)
    norm_check = _LD(0.0)
    max_point_ratio = 0.0
    for x_idx in np.ndindex(*((cells,) * m)):
        sel = tuple(x_idx) + (slice(None),) * n_ax
        wx = Weight(n_lat, w.density[sel])
        fx = GridFunction(n_lat, f.values[sel])
        rep = embed_check_cubes(fx, wx, theta, r, s)
        minkowski_mid += (_LD(rep.lhs) ** _LD(s)) * cellvol_m
        norm_check += (_LD(rep.rhs_norm) ** _LD(s)) * cellvol_m
        if rep.rhs_norm > 0.0:
            max_point_ratio = max(max_point_ratio, rep.ratio)

    _assert_chain(
        total,
        lhs_r_check,
        intermediate,
        minkowski_mid,
        norm_check,
        rhs,
        max_slice_ratio,
        max_point_ratio,
        r,
        s,
    )
    return EmbedRectReport(
        lhs,
        rhs,
        _ratio(lhs, rhs),
        float(intermediate),
        float(minkowski_mid),
        max_slice_ratio,
        max_point_ratio,
    )


def _assert_chain(
    total: np.longdouble,
    lhs_r_check: np.longdouble,
    intermediate: np.longdouble,
    minkowski_mid: np.longdouble,
    norm_check: np.longdouble,
    rhs: float,
    max_slice_ratio: float,
    max_point_ratio: float,
    r: float,
    s: float,
) -> None:
    """Every link is exact mathematics; slack only absorbs rounding."""
    loose = _LD(1.0 + 1e-6)
    tight = _LD(1.0 + 1e-9)
    scale = max(float(total), float(lhs_r_check), 1e-300)
    if abs(float(total) - float(lhs_r_check)) > 1e-6 * scale:
        raise ContractViolationError(
            f"slicing identity broke: direct lhs^r {float(total)} vs "
            f"sliced {float(lhs_r_check)}"
        )
    if lhs_r_check > _LD(max_slice_ratio) ** _LD(r) * intermediate * tight:
        raise ContractViolationError(
            "per-slice bound broke: lhs^r exceeds max slice ratio^r * intermediate"
        )
    if np.power(intermediate, _LD(s) / _LD(r)) > minkowski_mid * loose:
        raise ContractViolationError(
            f"Minkowski step broke: intermediate^(s/r) "
            f"{float(np.power(intermediate, _LD(s) / _LD(r)))} exceeds "
            f"{float(minkowski_mid)}"
        )
    if minkowski_mid > _LD(max_point_ratio) ** _LD(s) * norm_check * tight:
        raise ContractViolationError(
            "per-point bound broke: minkowski_mid exceeds max point ratio^s * norm^s"
        )
    rhs_s = _LD(rhs) ** _LD(s)
    scale = max(float(norm_check), float(rhs_s), 1e-300)
    if abs(float(norm_check) - float(rhs_s)) > 1e-6 * scale:
        raise ContractViolationError(
            f"norm bookkeeping broke: sliced norm^s {float(norm_check)} vs "
            f"direct {float(rhs_s)}"
        )
