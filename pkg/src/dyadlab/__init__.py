"""Desk-scale laboratory for two-weight inequalities on dyadic lattices."""

from .errors import (
    AlignmentError,
    ContractViolationError,
    DegenerateSampleError,
    DomainError,
    DyadlabError,
    FormatError,
    ResourceError,
    ScopeError,
    ShapeError,
)
from .bump import (
    CharacteristicResult,
    Exponents,
    PowerKernel,
    bump_cube,
    bump_rect,
    characteristic,
    characteristic_at,
    random_partition,
    slice_profile,
)
from .embed import (
    CarlesonReport,
    EmbedRectReport,
    EmbedReport,
    StoppingFamily,
    automatic_carleson,
    embed_check_cubes,
    embed_check_rects,
    good_carleson,
    stopping_cubes,
)
from .forms import (
    FormValue,
    KernelHandle,
    NormEstimate,
    RectFamily,
    apply_frac_integral,
    bilinear_form,
    dyadic_family,
    family_of,
    goodbad_split,
    kernel_eval,
    norm_estimate,
    surrogate_kernel,
)
from .grids import (
    BadProbEstimate,
    BoxCube,
    Cube,
    DyadicGrid,
    DyadicRect,
    GoodnessParams,
    ShiftParam,
    bad_probability_mc,
    dyadic_distance,
    good_in,
    is_good,
    onethird_grids,
    parse_grid,
    random_grid,
    sample_grid,
    sample_shift,
    sandwich,
    standard_grid,
    verify_grid,
)
from .lattice import (
    GridFunction,
    Lattice,
    Rect,
    Weight,
    doubling_report,
    full_rect,
    gen_weight,
    integrate,
    lp_norm,
    make_lattice,
    power_integrate,
    refine_function,
    refine_weight,
    strong_rd_doubling_bound,
    substream,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ContractViolationError",
    "DegenerateSampleError",
    "DomainError",
    "DyadlabError",
    "FormatError",
    "ResourceError",
    "ScopeError",
    "ShapeError",
    "CharacteristicResult",
    "Exponents",
    "PowerKernel",
    "bump_cube",
    "bump_rect",
    "characteristic",
    "characteristic_at",
    "random_partition",
    "slice_profile",
    "CarlesonReport",
    "EmbedRectReport",
    "EmbedReport",
    "StoppingFamily",
    "automatic_carleson",
    "embed_check_cubes",
    "embed_check_rects",
    "good_carleson",
    "stopping_cubes",
    "FormValue",
    "KernelHandle",
    "NormEstimate",
    "RectFamily",
    "apply_frac_integral",
    "bilinear_form",
    "dyadic_family",
    "family_of",
    "goodbad_split",
    "kernel_eval",
    "norm_estimate",
    "surrogate_kernel",
    "BadProbEstimate",
    "BoxCube",
    "Cube",
    "DyadicGrid",
    "DyadicRect",
    "GoodnessParams",
    "ShiftParam",
    "bad_probability_mc",
    "dyadic_distance",
    "good_in",
    "is_good",
    "onethird_grids",
    "parse_grid",
    "random_grid",
    "sample_grid",
    "sample_shift",
    "sandwich",
    "standard_grid",
    "verify_grid",
    "GridFunction",
    "Lattice",
    "Rect",
    "Weight",
    "doubling_report",
    "full_rect",
    "gen_weight",
    "integrate",
    "lp_norm",
    "make_lattice",
    "power_integrate",
    "refine_function",
    "refine_weight",
    "strong_rd_doubling_bound",
    "substream",
    "__version__",
]
