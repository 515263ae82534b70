"""Convex-non-convex directional total variation image denoising.

A directional TV penalty with per-pixel elliptic dual sets is made
non-convex by subtracting its generalized Moreau envelope while the overall
least-squares objective stays convex; the resulting problem is solved by a
primal-dual splitting with exact proximal steps. The package also ships the
supporting lab: synthetic image generators, seeded noise, PSNR, grid
search, and convergence diagnostics, all behind a CLI (``cncdtv``).
"""

from .directions import (
    AffineFieldOperator,
    DirectionField,
    affine_norm_bound,
    apply_affine,
    dtv_value,
    estimate_directions,
    load_direction_csv,
    save_direction_csv,
)
from .grids import (
    Image,
    VectorField,
    apply_gradient,
    apply_gradient_adjoint,
    dtd_max_eigenvalue,
    gradient_matrix,
    operator_norm_sq,
)
from .imaging import (
    GeneratorSpec,
    NoiseSpec,
    PgmFormatError,
    add_noise,
    gaussian_field,
    generate,
    psnr,
    read_image,
    residual_map,
    write_image,
)
from .prox import (
    l12_norm,
    moreau_envelope_oracle,
    project_box,
    project_linf2_ball,
    prox_consensus_dual,
    prox_l12,
    prox_oracle,
)
from .solver import (
    CncParams,
    DivergenceError,
    ObjectiveReport,
    SolverConfig,
    SolverState,
    SolverTrace,
    SolverVariant,
    check_convexity,
    objective_value,
    reformulation_consistency_check,
    select_steps,
    smooth_value_grad,
    solve,
    splitting_norm_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "AffineFieldOperator",
    "CncParams",
    "DirectionField",
    "DivergenceError",
    "GeneratorSpec",
    "Image",
    "NoiseSpec",
    "ObjectiveReport",
    "PgmFormatError",
    "SolverConfig",
    "SolverState",
    "SolverTrace",
    "SolverVariant",
    "VectorField",
    "add_noise",
    "affine_norm_bound",
    "apply_affine",
    "apply_gradient",
    "apply_gradient_adjoint",
    "check_convexity",
    "dtd_max_eigenvalue",
    "dtv_value",
    "estimate_directions",
    "gaussian_field",
    "generate",
    "gradient_matrix",
    "l12_norm",
    "load_direction_csv",
    "moreau_envelope_oracle",
    "objective_value",
    "operator_norm_sq",
    "project_box",
    "project_linf2_ball",
    "prox_consensus_dual",
    "prox_l12",
    "prox_oracle",
    "psnr",
    "read_image",
    "reformulation_consistency_check",
    "residual_map",
    "save_direction_csv",
    "select_steps",
    "smooth_value_grad",
    "solve",
    "splitting_norm_estimate",
    "write_image",
]
