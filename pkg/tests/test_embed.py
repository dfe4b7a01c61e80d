"""Stopping, Carleson, and embedding tests.

Closed forms frozen before implementation: the Lebesgue geometric series
2 - 2^-L for the automatic sum, its fourth root for the cube embedding,
its square root for the rectangle embedding, and the stopping example
whose only maximal cube is [0, 1/4).
"""
import math

import numpy as np
import pytest

from dyadlab import (
    ContractViolationError,
    DomainError,
    GoodnessParams,
    GridFunction,
    Rect,
    ShapeError,
    Weight,
    automatic_carleson,
    embed_check_cubes,
    embed_check_rects,
    full_rect,
    gen_weight,
    good_carleson,
    integrate,
    is_good,
    make_lattice,
    onethird_grids,
    refine_function,
    refine_weight,
    standard_grid,
    stopping_cubes,
    substream,
)
from dyadlab.grids import Cube
from dyadlab.embed import _good_rel_mask, _sub_boxes
from dyadlab.lattice import gather_boxes, weighted_mass_prefix


def lebesgue(lat):
    return gen_weight(lat, {"kind": "constant", "value": 1.0})


def rand_w(lat, seed, rough=0.6):
    return gen_weight(lat, {"kind": "random_lognormal", "seed": seed, "roughness": rough})


def rand_f(lat, seed):
    rng = substream(seed, 9100)
    return GridFunction(lat, np.exp(0.7 * rng.standard_normal(lat.shape)))


# ---------------------------------------------------------------------------
# stopping cubes


def test_stopping_top_cube_only():
    lat = make_lattice(1, 4)
    f = GridFunction(lat, np.ones(lat.shape))
    for theta in (1.0, 2.0):
        fam = stopping_cubes(f, lebesgue(lat), theta, k=-1)
        assert len(fam) == 1
        assert fam.cubes[0] == full_rect(lat)
        assert fam.averages[0] == pytest.approx(1.0, rel=1e-12)
        assert fam.refined_ok == (True,)


def test_stopping_strict_threshold_empty():
    lat = make_lattice(1, 4)
    f = GridFunction(lat, np.ones(lat.shape))
    fam = stopping_cubes(f, lebesgue(lat), 2.0, k=0)
    assert len(fam) == 0


def test_stopping_quarter_interval_example():
    lat = make_lattice(1, 3)
    values = np.zeros(8)
    values[:2] = 4.0
    f = GridFunction(lat, values)
    fam = stopping_cubes(f, lebesgue(lat), 1.0, k=1)
    assert fam.cubes == (Rect((0,), (2,)),)
    assert fam.averages[0] == pytest.approx(4.0, rel=1e-12)
    assert fam.refined_ok == (True,)


def _averages_of(f, w, theta, rects):
    num = weighted_mass_prefix(f, w)
    out = []
    for rect in rects:
        box = np.array([[[a, b] for a, b in zip(rect.lo, rect.hi)]], dtype=np.int64)
        from dyadlab import bump_cube

        b = bump_cube(rect, w, theta)
        mass = float(gather_boxes(num, box)[0])
        out.append(mass / b if b > 0 else 0.0)
    return out


@pytest.mark.parametrize("dim,depth", [(1, 6), (2, 4)])
def test_stopping_maximality_and_disjointness(dim, depth):
    lat = make_lattice(dim, depth)
    for seed in range(6):
        w = rand_w(lat, seed + 40)
        f = rand_f(lat, seed + 40)
        fam = stopping_cubes(f, w, 1.5, k=0)
        assert all(a > 1.0 for a in fam.averages)
        assert all(fam.refined_ok)
        # pairwise disjoint
        for i in range(len(fam)):
            for j in range(i + 1, len(fam)):
                a, b = fam.cubes[i], fam.cubes[j]
                overlap = all(
                    max(a.lo[k], b.lo[k]) < min(a.hi[k], b.hi[k]) for k in range(dim)
                )
                assert not overlap
        # every strict dyadic ancestor sits at or below the threshold
        ancestors = []
        for rect in fam.cubes:
            side = rect.hi[0] - rect.lo[0]
            while side < lat.cells_per_axis:
                side *= 2
                lo = tuple((a // side) * side for a in rect.lo)
                ancestors.append(Rect(lo, tuple(a + side for a in lo)))
        for anc, avg in zip(ancestors, _averages_of(f, w, 1.5, ancestors)):
            assert avg <= 1.0 + 1e-12, f"ancestor {anc} beats the threshold"


def test_stopping_covers_mass_above_threshold():
    # every cell where f exceeds the threshold lies in some selected cube,
    # because the cell itself already has average above 2^k
    lat = make_lattice(1, 6)
    w = rand_w(lat, 7)
    f = rand_f(lat, 7)
    fam = stopping_cubes(f, w, 1.0, k=0)
    covered = np.zeros(lat.shape, dtype=bool)
    for rect in fam.cubes:
        covered[rect.lo[0] : rect.hi[0]] = True
    hot = (f.values > 1.0) & (w.density > 0)
    assert np.all(covered[hot])


def test_stopping_rejects_bad_inputs():
    lat = make_lattice(1, 3)
    f = GridFunction(lat, np.ones(lat.shape))
    with pytest.raises(DomainError):
        stopping_cubes(f, lebesgue(lat), 0.5, k=0)
    with pytest.raises(ShapeError):
        stopping_cubes(f, lebesgue(make_lattice(1, 4)), 1.0, k=0)
    with pytest.raises(DomainError):
        stopping_cubes(f, lebesgue(lat), 1.0, k=0, grid=onethird_grids(1, 0, 3)[1])


# ---------------------------------------------------------------------------
# automatic Carleson


def test_automatic_lebesgue_1d_exact():
    depth = 8
    lat = make_lattice(1, depth)
    rep = automatic_carleson(full_rect(lat), lebesgue(lat), theta=2.0, rho=2.0)
    assert rep.lhs_sum == pytest.approx(2.0 - 2.0**-depth, rel=1e-12)
    assert rep.explicit_constant == pytest.approx(1.0 / (1.0 - 2.0**-0.5), abs=1e-12)
    assert rep.passes
    assert rep.witness == full_rect(lat)


def test_automatic_lebesgue_2d_exact():
    depth = 5
    lat = make_lattice(2, depth)
    rep = automatic_carleson(full_rect(lat), lebesgue(lat), theta=2.0, rho=2.0)
    assert rep.lhs_sum == pytest.approx((4.0 - 4.0**-depth) / 3.0, rel=1e-12)
    assert rep.explicit_constant == pytest.approx(2.0, abs=1e-12)
    assert rep.passes


def test_automatic_zero_weight_passes():
    lat = make_lattice(1, 5)
    rep = automatic_carleson(full_rect(lat), gen_weight(lat, {"kind": "constant", "value": 0.0}), 2.0, 2.0)
    assert rep.lhs_sum == 0.0
    assert rep.ratio == 0.0
    assert rep.passes


def test_automatic_includes_top_and_subcube_roots():
    lat = make_lattice(1, 5)
    w = rand_w(lat, 3)
    P = Rect((8,), (16,))
    rep = automatic_carleson(P, w, 1.5, 2.0)
    from dyadlab import bump_cube

    assert rep.lhs_sum >= bump_cube(P, w, 1.5) ** 2.0
    assert rep.witness == P


@pytest.mark.parametrize("theta,rho", [(2.0, 2.0), (1.5, 3.0), (3.0, 1.5)])
def test_automatic_random_weights_pass(theta, rho):
    lat = make_lattice(1, 7)
    for seed in range(25):
        rep = automatic_carleson(full_rect(lat), rand_w(lat, seed, rough=0.8), theta, rho)
        assert rep.passes, f"seed {seed}: ratio {rep.ratio}"


def test_automatic_validation():
    lat = make_lattice(1, 4)
    w = lebesgue(lat)
    with pytest.raises(DomainError):
        automatic_carleson(full_rect(lat), w, theta=1.0, rho=2.0)
    with pytest.raises(DomainError):
        automatic_carleson(full_rect(lat), w, theta=2.0, rho=1.0)
    with pytest.raises(DomainError):
        automatic_carleson(Rect((0,), (3,)), w, 2.0, 2.0)
    with pytest.raises(DomainError):
        automatic_carleson(Rect((4,), (12,)), w, 2.0, 2.0)


# ---------------------------------------------------------------------------
# good-cube Carleson


def test_good_mask_matches_strict_goodness_1d():
    depth = 8
    grid = standard_grid(1, 0, depth)
    lat = make_lattice(1, depth)
    params = GoodnessParams(eps=0.25, r=2)
    top = full_rect(lat)
    for level in range(params.r, depth + 1):
        boxes, rel = _sub_boxes(lat, top, level)
        mask = _good_rel_mask(rel, level, params)
        for i in range(boxes.shape[0]):
            cube = Cube(grid, level, (int(rel[i, 0]),))
            assert mask[i] == is_good(cube, params), (level, i)


def test_good_mask_matches_strict_goodness_2d():
    depth = 5
    grid = standard_grid(2, 0, depth)
    lat = make_lattice(2, depth)
    params = GoodnessParams(eps=0.25, r=2)
    top = full_rect(lat)
    for level in range(params.r, depth + 1):
        boxes, rel = _sub_boxes(lat, top, level)
        mask = _good_rel_mask(rel, level, params)
        for i in range(boxes.shape[0]):
            cube = Cube(grid, level, tuple(int(v) for v in rel[i]))
            assert mask[i] == is_good(cube, params), (level, i)


def test_good_carleson_lebesgue_oracle():
    depth = 8
    lat = make_lattice(1, depth)
    rep = good_carleson(full_rect(lat), lebesgue(lat), 2.0, GoodnessParams(eps=0.25, r=2))
    # concentric shrinks of intervals scale mass exactly, so eta = 1
    assert rep.explicit_constant == pytest.approx(12.0 + 1.0 / (1.0 - 2.0**-0.75), rel=1e-12)
    # at most 2^k good cubes per gap, each of mass 2^-k
    assert rep.lhs_sum <= 2.0 + 1e-12
    assert rep.passes


def test_good_carleson_eta_override_matches_scan():
    lat = make_lattice(1, 6)
    w = lebesgue(lat)
    a = good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=2))
    b = good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=2), eta=1.0)
    assert a.explicit_constant == b.explicit_constant
    assert a.lhs_sum == b.lhs_sum


def test_good_carleson_halfspace_passes():
    lat = make_lattice(1, 7)
    w = gen_weight(lat, {"kind": "halfspace_cutoff"})
    rep = good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=2))
    assert rep.passes
    assert rep.lhs_sum > 0.0


def test_good_carleson_shallow_lattice_trivial_term():
    # depth below the goodness range: every cube counts and the trivial
    # term alone already dominates
    lat = make_lattice(1, 2)
    w = rand_w(lat, 11)
    rep = good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=8))
    assert rep.passes
    assert rep.lhs_sum > 0.0


def test_good_carleson_random_weights_pass():
    lat = make_lattice(2, 4)
    for seed in range(8):
        w = gen_weight(lat, {"kind": "cascade", "beta": 0.7, "seed": seed})
        rep = good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=2))
        assert rep.passes, f"seed {seed}: ratio {rep.ratio}"


def test_good_carleson_precondition_error_carries_witness():
    # density supported strictly inside the concentric half of [0, 1):
    # the scale-1 shrink keeps the full mass, so no decay exponent exists
    lat = make_lattice(1, 4)
    dens = np.zeros(16)
    dens[6:10] = 1.0
    w = Weight(lat, dens)
    with pytest.raises(DomainError) as info:
        good_carleson(full_rect(lat), w, 2.0, GoodnessParams(eps=0.25, r=2))
    witness = info.value.witness
    assert witness is not None
    assert witness.reevaluate(w) == pytest.approx(1.0, abs=0.0)


def test_good_carleson_validation():
    lat = make_lattice(1, 4)
    with pytest.raises(DomainError):
        good_carleson(full_rect(lat), lebesgue(lat), 1.0, GoodnessParams(eps=0.25, r=2))


# ---------------------------------------------------------------------------
# cube embedding


def test_embed_cubes_lebesgue_oracle():
    depth = 8
    lat = make_lattice(1, depth)
    f = GridFunction(lat, np.ones(lat.shape))
    rep = embed_check_cubes(f, lebesgue(lat), theta=2.0, r=4.0, s=2.0)
    assert rep.lhs == pytest.approx((2.0 - 2.0**-depth) ** 0.25, rel=1e-12)
    assert rep.rhs_norm == pytest.approx(1.0, rel=1e-12)
    assert rep.ratio == pytest.approx(rep.lhs, rel=1e-12)


def test_embed_cubes_zero_function():
    lat = make_lattice(1, 5)
    rep = embed_check_cubes(GridFunction(lat, np.zeros(lat.shape)), rand_w(lat, 1), 2.0, 4.0, 2.0)
    assert rep.lhs == 0.0
    assert rep.ratio == 0.0


def test_embed_cubes_scaling_invariance():
    lat = make_lattice(1, 6)
    w = rand_w(lat, 5)
    f = rand_f(lat, 5)
    f2 = GridFunction(lat, 2.0 * f.values)
    a = embed_check_cubes(f, w, 1.5, 4.0, 2.0)
    b = embed_check_cubes(f2, w, 1.5, 4.0, 2.0)
    assert b.lhs == pytest.approx(2.0 * a.lhs, rel=1e-12)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


def test_embed_cubes_validation():
    lat = make_lattice(1, 4)
    f = GridFunction(lat, np.ones(lat.shape))
    w = lebesgue(lat)
    with pytest.raises(DomainError):
        embed_check_cubes(f, w, theta=1.0, r=4.0, s=2.0)
    with pytest.raises(DomainError):
        embed_check_cubes(f, w, theta=2.0, r=2.0, s=2.0)
    with pytest.raises(DomainError):
        embed_check_cubes(f, w, theta=2.0, r=4.0, s=1.0)


def test_embed_cubes_truncation_monotone():
    lat = make_lattice(1, 6)
    w = rand_w(lat, 9)
    f = rand_f(lat, 9)
    coarse = embed_check_cubes(f, w, 2.0, 4.0, 2.0)
    fine = embed_check_cubes(refine_function(f, 2), refine_weight(w, 2), 2.0, 4.0, 2.0)
    assert fine.lhs >= coarse.lhs * (1.0 - 1e-12)
    assert fine.rhs_norm == pytest.approx(coarse.rhs_norm, rel=1e-12)


def test_embed_cubes_depth_stability():
    lat = make_lattice(1, 8)
    worst = 0.0
    for seed in range(20):
        w = rand_w(lat, seed + 60, rough=0.7)
        f = rand_f(lat, seed + 60)
        base = embed_check_cubes(f, w, 2.0, 4.0, 2.0)
        fine = embed_check_cubes(refine_function(f, 2), refine_weight(w, 2), 2.0, 4.0, 2.0)
        worst = max(worst, fine.ratio / base.ratio)
    assert worst <= 1.1, f"worst depth growth {worst}"


# ---------------------------------------------------------------------------
# rectangle embedding


def test_embed_rects_lebesgue_oracle():
    depth = 6
    lat = make_lattice(2, depth)
    f = GridFunction(lat, np.ones(lat.shape))
    rep = embed_check_rects(f, lebesgue(lat), theta=2.0, r=4.0, s=2.0)
    series = 2.0 - 2.0**-depth
    assert rep.lhs == pytest.approx(series**0.5, rel=1e-12)
    assert rep.rhs_norm == pytest.approx(1.0, rel=1e-12)
    assert rep.intermediate == pytest.approx(series, rel=1e-9)
    assert rep.max_slice_ratio == pytest.approx(series**0.25, rel=1e-9)
    assert rep.max_point_ratio == pytest.approx(series**0.25, rel=1e-9)


def test_embed_rects_separable_factorization():
    depth = 5
    lat2 = make_lattice(2, depth)
    lat1 = make_lattice(1, depth)
    for seed in range(10):
        rng = substream(seed, 9200)
        ax = np.exp(0.6 * rng.standard_normal(1 << depth))
        bx = np.exp(0.6 * rng.standard_normal(1 << depth))
        fy = np.exp(0.5 * rng.standard_normal(1 << depth))
        gy = np.exp(0.5 * rng.standard_normal(1 << depth))
        w2 = Weight(lat2, np.outer(ax, bx))
        f2 = GridFunction(lat2, np.outer(fy, gy))
        rep = embed_check_rects(f2, w2, 1.5, 4.0, 2.0)
        left = embed_check_cubes(GridFunction(lat1, fy), Weight(lat1, ax), 1.5, 4.0, 2.0)
        right = embed_check_cubes(GridFunction(lat1, gy), Weight(lat1, bx), 1.5, 4.0, 2.0)
        assert rep.lhs == pytest.approx(left.lhs * right.lhs, rel=1e-9)
        assert rep.rhs_norm == pytest.approx(left.rhs_norm * right.rhs_norm, rel=1e-9)


def test_embed_rects_chain_holds_on_random_data():
    lat = make_lattice(2, 5)
    for seed in range(10):
        w = rand_w(lat, seed + 80, rough=0.8)
        f = rand_f(lat, seed + 80)
        rep = embed_check_rects(f, w, 2.0, 4.0, 2.0)
        assert rep.lhs <= rep.max_slice_ratio * rep.max_point_ratio * rep.rhs_norm * (1 + 1e-6)
        assert math.isfinite(rep.intermediate)
        assert math.isfinite(rep.minkowski_mid)


def test_embed_rects_zero_function():
    lat = make_lattice(2, 4)
    rep = embed_check_rects(GridFunction(lat, np.zeros(lat.shape)), rand_w(lat, 2), 2.0, 4.0, 2.0)
    assert rep.lhs == 0.0
    assert rep.ratio == 0.0


def test_embed_rects_validation():
    lat = make_lattice(2, 3)
    f = GridFunction(lat, np.ones(lat.shape))
    w = lebesgue(lat)
    with pytest.raises(DomainError):
        embed_check_rects(f, w, theta=1.0, r=4.0, s=2.0)
    with pytest.raises(ShapeError):
        embed_check_rects(f, w, theta=2.0, r=4.0, s=2.0, m=2)
    with pytest.raises(DomainError):
        embed_check_rects(
            f, w, 2.0, 4.0, 2.0, grids=(onethird_grids(1, 0, 3)[1], standard_grid(1, 0, 3))
        )


def test_embed_rects_truncation_monotone():
    lat = make_lattice(2, 4)
    w = rand_w(lat, 21)
    f = rand_f(lat, 21)
    coarse = embed_check_rects(f, w, 2.0, 4.0, 2.0)
    fine = embed_check_rects(refine_function(f, 1), refine_weight(w, 1), 2.0, 4.0, 2.0)
    assert fine.lhs >= coarse.lhs * (1.0 - 1e-12)


def test_good_rectangle_carleson_with_product_constants():
    # mass Carleson over rectangles whose factors are both good, bounded by
    # the product of the per-axis good-cube constants
    from dyadlab import doubling_report
    from dyadlab.embed import _factor_boxes, _cross_boxes

    depth = 5
    lat = make_lattice(2, depth)
    params = GoodnessParams(eps=0.25, r=2)
    rho = 2.0
    for seed in range(4):
        w = gen_weight(lat, {"kind": "cascade", "beta": 0.75, "seed": seed + 3})
        scan = doubling_report(w, "product_reverse")
        assert scan.passes_reverse
        tab = w.prefix(1.0)
        total = 0.0
        for li in range(depth + 1):
            ib = _factor_boxes(lat.cells_per_axis, 1, li)
            imask = _good_rel_mask(ib[:, :, 0] >> (depth - li), li, params)
            for lj in range(depth + 1):
                jb = _factor_boxes(lat.cells_per_axis, 1, lj)
                jmask = _good_rel_mask(jb[:, :, 0] >> (depth - lj), lj, params)
                boxes = _cross_boxes(ib[imask], jb[jmask])
                if boxes.shape[0]:
                    total += float(
                        np.power(gather_boxes(tab, boxes).astype(np.float64), rho).sum()
                    )
        consts = []
        for eps_axis in scan.rev_eps:
            decay = eps_axis * (1.0 - params.eps) * (rho - 1.0)
            consts.append((params.r + 1) * 2.0**params.r + 1.0 / (1.0 - 2.0**-decay))
        bound = consts[0] * consts[1] * integrate(w, full_rect(lat)) ** rho
        assert total <= bound * (1 + 1e-9), f"seed {seed}: {total} vs {bound}"
