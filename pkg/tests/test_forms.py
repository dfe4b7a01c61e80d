"""Kernel, bilinear form, split, fractional integral, and norm bound tests.

Frozen oracles, derived by hand before the module existed: the level kernel
values 1.0 (top rectangle) and 4.0 (level-2 pair at alpha = beta = 1/2), the
Lebesgue bilinear series ((1 - 2^-(L+1)/2) / (1 - 2^-1/2))^2, the single
rectangle value 2^1.5 / 64, the surrogate separation example 1 + sqrt(2),
and the continuum fractional integral value 8.0 at the center of the square
(midpoint sums approach it from below, 1.2 percent low at depth 5).
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from dyadlab import (
    Cube,
    DomainError,
    DyadicRect,
    Exponents,
    GoodnessParams,
    GridFunction,
    KernelHandle,
    Rect,
    ScopeError,
    ShapeError,
    Weight,
    apply_frac_integral,
    bilinear_form,
    characteristic,
    dyadic_family,
    embed_check_rects,
    family_of,
    gen_weight,
    goodbad_split,
    integrate,
    kernel_eval,
    make_lattice,
    norm_estimate,
    onethird_grids,
    standard_grid,
    substream,
    surrogate_kernel,
)
from dyadlab.errors import AlignmentError


HALF = KernelHandle.product_frac(0.5, 0.5, 1, 1)


def lebesgue(lat):
    return Weight(lat, np.ones(lat.shape))


def rand_w(lat, seed, rough=0.6):
    return gen_weight(lat, {"kind": "random_lognormal", "seed": seed, "roughness": rough})


def rand_f(lat, seed):
    rng = substream(seed, 9100)
    return GridFunction(lat, np.exp(0.7 * rng.standard_normal(lat.shape)))


# ---------------------------------------------------------------------------
# kernel handles


def test_kernel_top_rect_is_one():
    grid = standard_grid(1, 0, 4)
    rect = DyadicRect(Cube(grid, 0, (0,)), Cube(grid, 0, (0,)))
    assert kernel_eval(HALF, rect) == 1.0


def test_kernel_level_two_pair_is_four():
    grid = standard_grid(1, 0, 4)
    rect = DyadicRect(Cube(grid, 2, (1,)), Cube(grid, 2, (3,)))
    assert kernel_eval(HALF, rect) == 4.0


def test_kernel_rejects_exponents_outside_open_interval():
    with pytest.raises(DomainError):
        KernelHandle.product_frac(0.0, 0.5, 1, 1)
    with pytest.raises(DomainError):
        KernelHandle.product_frac(0.5, 1.0, 1, 1)
    with pytest.raises(DomainError):
        KernelHandle.product_frac(2.5, 0.5, 2, 1)


def test_kernel_table_variant():
    tab = KernelHandle.from_table({(0, 0): 1.0, (1, 2): 7.5}, 1, 1)
    assert tab.level_value(1, 2) == 7.5
    with pytest.raises(DomainError):
        tab.level_value(3, 3)
    with pytest.raises(DomainError):
        KernelHandle.from_table({(0, 0): -1.0}, 1, 1)


# ---------------------------------------------------------------------------
# rectangle families


def test_dyadic_family_size():
    lat = make_lattice(2, 2)
    fam = dyadic_family(lat, 1)
    assert fam.size == (1 + 2 + 4) ** 2
    assert fam.tag == "dyadic"


def test_family_of_boxes_and_validation():
    lat = make_lattice(2, 3)
    grid = standard_grid(1, 0, 3)
    rect = DyadicRect(Cube(grid, 1, (0,)), Cube(grid, 2, (1,)))
    fam = family_of(lat, [rect])
    assert fam.size == 1
    np.testing.assert_array_equal(fam.boxes[0], [[0, 4], [2, 4]])
    np.testing.assert_array_equal(fam.levels[0], [1, 2])
    with pytest.raises(DomainError):
        family_of(lat, [])
    deep = DyadicRect(Cube(grid, 5, (0,)), Cube(grid, 0, (0,)))
    with pytest.raises(AlignmentError):
        family_of(lat, [deep])
    shifted = onethird_grids(1, 0, 3)[1]
    with pytest.raises(DomainError):
        family_of(lat, [DyadicRect(Cube(shifted, 1, (0,)), Cube(grid, 0, (0,)))])


# ---------------------------------------------------------------------------
# bilinear form


def test_bilinear_lebesgue_series():
    depth = 5
    lat = make_lattice(2, depth)
    w = lebesgue(lat)
    one = GridFunction(lat, np.ones(lat.shape))
    got = bilinear_form(HALF, w, w, one, one)
    axis = (1.0 - 2.0 ** (-(depth + 1) / 2.0)) / (1.0 - 2.0**-0.5)
    assert got.total == pytest.approx(axis**2, rel=1e-12)
    assert got.parts is None


def test_bilinear_zero_argument():
    lat = make_lattice(2, 3)
    w = rand_w(lat, 5)
    zero = GridFunction(lat, np.zeros(lat.shape))
    one = GridFunction(lat, np.ones(lat.shape))
    assert bilinear_form(HALF, w, w, one, zero).total == 0.0


def test_bilinear_single_rect_closed_form():
    lat = make_lattice(2, 3)
    w = lebesgue(lat)
    one = GridFunction(lat, np.ones(lat.shape))
    grid = standard_grid(1, 0, 3)
    rect = DyadicRect(Cube(grid, 1, (0,)), Cube(grid, 2, (1,)))
    fam = family_of(lat, [rect])
    got = bilinear_form(HALF, w, w, one, one, fam).total
    assert got == pytest.approx(2.0**1.5 / 64.0, rel=1e-14)


def test_bilinear_grows_with_family():
    lat = make_lattice(2, 3)
    sig, om = rand_w(lat, 11), rand_w(lat, 12)
    f, g = rand_f(lat, 13), rand_f(lat, 14)
    grid = standard_grid(1, 0, 3)
    top = DyadicRect(Cube(grid, 0, (0,)), Cube(grid, 0, (0,)))
    more = [top, DyadicRect(Cube(grid, 1, (0,)), Cube(grid, 0, (0,)))]
    small = bilinear_form(HALF, sig, om, f, g, family_of(lat, [top])).total
    mid = bilinear_form(HALF, sig, om, f, g, family_of(lat, more)).total
    full = bilinear_form(HALF, sig, om, f, g).total
    assert small <= mid <= full


def test_bilinear_lattice_mismatch():
    sig = lebesgue(make_lattice(2, 3))
    om = lebesgue(make_lattice(2, 2))
    one = GridFunction(sig.lattice, np.ones(sig.lattice.shape))
    with pytest.raises(ShapeError):
        bilinear_form(HALF, sig, om, one, one)


# ---------------------------------------------------------------------------
# surrogate kernel


def _brute_surrogate(kernel, x, y, u, v, i_grids, j_grids):
    """Independent check: exact cube membership via Fraction indices."""

    def common_levels(grid, a, b):
        return [
            level
            for level in range(grid.lo, grid.hi + 1)
            if grid.cube_at(a, level).index == grid.cube_at(b, level).index
        ]

    total = 0.0
    for gi in i_grids:
        for li in common_levels(gi, x, u):
            for gj in j_grids:
                for lj in common_levels(gj, y, v):
                    total += kernel.level_value(li, lj)
    return total


def test_surrogate_scale_zero_separation():
    grid = standard_grid(1, 0, 4)
    got = surrogate_kernel(HALF, (0.1,), (0.2,), (0.9,), (0.3,), [grid], [grid])
    assert got == pytest.approx(1.0 + math.sqrt(2.0), rel=1e-14)


def test_surrogate_same_finest_cell_is_out_of_scope():
    grid = standard_grid(1, 0, 4)
    with pytest.raises(ScopeError):
        surrogate_kernel(HALF, (0.1,), (0.2,), (0.12,), (0.8,), [grid], [grid])


def test_surrogate_matches_brute_force_on_third_grids():
    i_grids = onethird_grids(1, 0, 4)
    j_grids = onethird_grids(1, 0, 4)
    rng = substream(404, 1)
    checked = 0
    while checked < 40:
        x, y, u, v = rng.uniform(0.0, 1.0, size=4)
        try:
            got = surrogate_kernel(HALF, (x,), (y,), (u,), (v,), i_grids, j_grids)
        except ScopeError:
            continue
        want = _brute_surrogate(HALF, (x,), (y,), (u,), (v,), i_grids, j_grids)
        assert got == pytest.approx(want, rel=1e-12)
        checked += 1


def test_surrogate_table_kernel_agrees_with_brute_force():
    tab = KernelHandle.from_table(
        {(li, lj): 1.0 + 0.25 * li + 0.5 * lj for li in range(5) for lj in range(5)},
        1,
        1,
    )
    grids = onethird_grids(1, 0, 4)
    got = surrogate_kernel(tab, (0.1,), (0.55,), (0.6,), (0.8,), grids, grids)
    want = _brute_surrogate(tab, (0.1,), (0.55,), (0.6,), (0.8,), grids, grids)
    assert got == pytest.approx(want, rel=1e-12)


def test_surrogate_validates_points():
    grid = standard_grid(1, 0, 4)
    with pytest.raises(DomainError):
        surrogate_kernel(HALF, (1.2,), (0.2,), (0.5,), (0.3,), [grid], [grid])
    with pytest.raises(ShapeError):
        surrogate_kernel(HALF, (0.1, 0.2), (0.2,), (0.5,), (0.3,), [grid], [grid])


# ---------------------------------------------------------------------------
# good/bad split


def test_split_all_good_when_gap_exceeds_depth():
    lat = make_lattice(2, 3)
    sig, om = rand_w(lat, 21), rand_w(lat, 22)
    f, g = rand_f(lat, 23), rand_f(lat, 24)
    split = goodbad_split(HALF, sig, om, f, g, GoodnessParams(0.25, 8))
    assert split.parts is not None
    gg, ab, ba = split.parts
    assert ab == 0.0 and ba == 0.0
    assert gg == split.total
    direct = bilinear_form(HALF, sig, om, f, g).total
    assert split.total == pytest.approx(direct, rel=1e-12)


def test_split_identity_on_random_data():
    lat = make_lattice(2, 5)
    for seed in range(6):
        sig, om = rand_w(lat, 31 + seed), rand_w(lat, 41 + seed)
        f, g = rand_f(lat, 51 + seed), rand_f(lat, 61 + seed)
        split = goodbad_split(HALF, sig, om, f, g, GoodnessParams(0.25, 2))
        gg, ab, ba = split.parts
        assert split.total <= (gg + ab + ba) * (1 + 1e-12)
        direct = bilinear_form(HALF, sig, om, f, g).total
        assert split.total == pytest.approx(direct, rel=1e-9)
        assert min(gg, ab, ba) >= 0.0


def test_split_has_bad_parts_at_depth():
    lat = make_lattice(2, 5)
    w = lebesgue(lat)
    one = GridFunction(lat, np.ones(lat.shape))
    split = goodbad_split(HALF, w, w, one, one, GoodnessParams(0.25, 2))
    assert split.parts[1] > 0.0
    assert split.parts[2] > 0.0


# ---------------------------------------------------------------------------
# fractional integral


def test_frac_integral_zero_function():
    lat = make_lattice(2, 4)
    zero = GridFunction(lat, np.zeros(lat.shape))
    out = apply_frac_integral(zero, 0.5, 0.5, 1, 1)
    assert not out.values.any()


def test_frac_integral_point_mass_far_field_exact():
    depth = 5
    lat = make_lattice(2, depth)
    h = 2.0**-depth
    vals = np.zeros(lat.shape)
    src = (3, 4)
    vals[src] = 1.0
    out = apply_frac_integral(GridFunction(lat, vals), 0.5, 0.5, 1, 1)
    probe = (27, 29)
    dx = abs(probe[0] - src[0]) * h
    dy = abs(probe[1] - src[1]) * h
    want = dx**-0.5 * h * dy**-0.5 * h
    assert out.values[probe] == pytest.approx(want, rel=1e-12)


def test_frac_integral_center_value_approaches_continuum():
    values = {}
    for depth in (5, 6):
        lat = make_lattice(2, depth)
        one = GridFunction(lat, np.ones(lat.shape))
        out = apply_frac_integral(one, 0.5, 0.5, 1, 1)
        mid = lat.cells_per_axis // 2
        values[depth] = out.values[mid, mid]
    assert abs(values[5] - 8.0) / 8.0 < 0.02
    assert abs(values[6] - 8.0) < abs(values[5] - 8.0)


def test_frac_integral_validates_exponents_and_shape():
    lat = make_lattice(2, 3)
    one = GridFunction(lat, np.ones(lat.shape))
    with pytest.raises(DomainError):
        apply_frac_integral(one, 1.0, 0.5, 1, 1)
    with pytest.raises(ShapeError):
        apply_frac_integral(one, 0.5, 0.5, 1, 2)


# ---------------------------------------------------------------------------
# norm estimate


def _exps(theta=1.0):
    return Exponents(p=2.0, q=4.0, alpha=0.5, beta=0.5, m=1, n=1, theta=theta)


def test_norm_estimate_single_rect_closed_form():
    lat = make_lattice(2, 3)
    sig, om = rand_w(lat, 71), rand_w(lat, 72)
    grid = standard_grid(1, 0, 3)
    rect = DyadicRect(Cube(grid, 1, (1,)), Cube(grid, 2, (0,)))
    fam = family_of(lat, [rect])
    exps = _exps()
    est = norm_estimate(HALF, sig, om, exps, family=fam, iterations=4, seed=3)
    box = fam.boxes[0]
    region = Rect(tuple(int(a) for a in box[:, 0]), tuple(int(b) for b in box[:, 1]))
    want = (
        kernel_eval(HALF, rect)
        * integrate(sig, region) ** (1.0 / exps.p_prime)
        * integrate(om, region) ** (1.0 / exps.q)
    )
    assert est.lower_bound == pytest.approx(want, rel=1e-12)


def test_norm_estimate_traces_are_monotone():
    lat = make_lattice(2, 4)
    for seed in range(10):
        sig, om = rand_w(lat, 81 + seed), rand_w(lat, 91 + seed)
        est = norm_estimate(HALF, sig, om, _exps(), iterations=5, seed=seed)
        by_start = {}
        for start, step, obj in est.trace:
            by_start.setdefault(start, []).append((step, obj))
        for rows in by_start.values():
            objs = [obj for _, obj in sorted(rows)]
            for a, b in zip(objs, objs[1:]):
                assert b >= a * (1 - 1e-10)


def test_norm_estimate_dominates_no_bump_characteristic():
    lat = make_lattice(2, 4)
    for seed in range(10):
        sig, om = rand_w(lat, 201 + seed), rand_w(lat, 301 + seed)
        est = norm_estimate(HALF, sig, om, _exps(), iterations=3, seed=seed)
        char = characteristic("no_bump", None, sig, om, _exps(), family="dyadic")
        assert est.lower_bound >= char.value
        assert est.indicator_floor == char.value


def test_norm_estimate_zero_weight():
    lat = make_lattice(2, 3)
    zero = Weight(lat, np.zeros(lat.shape))
    om = rand_w(lat, 7)
    est = norm_estimate(HALF, zero, om, _exps(), iterations=2, seed=1)
    assert est.lower_bound == 0.0


def test_norm_estimate_kernel_exponent_mismatch():
    lat = make_lattice(2, 3)
    w = rand_w(lat, 8)
    bad = KernelHandle.product_frac(0.25, 0.5, 1, 1)
    with pytest.raises(DomainError):
        norm_estimate(bad, w, w, _exps(), iterations=1)


def test_norm_estimate_below_bump_characteristic_times_embed_ratios():
    """The two-sided sandwich this module exists for, in miniature.

    Splitting the form by the bump characteristic and applying Holder
    across rectangles with the conjugate pair (r, r') at r = sqrt(pq)
    bounds the form by the product-bump characteristic times the two
    rectangle embedding ratios of the returned maximizer pair.
    """
    lat = make_lattice(2, 4)
    theta = 1.5
    exps = _exps(theta)
    for seed in range(4):
        sig, om = rand_w(lat, 401 + seed), rand_w(lat, 501 + seed)
        est = norm_estimate(HALF, sig, om, exps, iterations=4, seed=seed)
        r_mid = math.sqrt(exps.p * exps.q)
        r_conj = r_mid / (r_mid - 1.0)
        ratio_sig = embed_check_rects(est.best_f, sig, theta, r_mid, exps.p, m=1).ratio
        ratio_om = embed_check_rects(est.best_g, om, theta, r_conj, exps.q_prime, m=1).ratio
        char = characteristic("product_bump", None, sig, om, exps, family="dyadic")
        assert est.lower_bound <= ratio_sig * ratio_om * char.value * (1 + 1e-9)
