"""Superquantile (CVaR)-constrained convex optimization.

A second-order solver for problems with linear or diagonal quadratic
objectives, box bounds and empirical superquantile constraints on affine
scenario values.  The outer loop is an augmented Lagrangian method; inner
subproblems are solved by a semismooth Newton iteration whose linear
systems involve only the scenarios in the tail block of the top-k-sum
projection.
"""

from .alm import AlmResult, AlmSettings, IterateState, dual_feasibility, solve
from .instances import (
    QrSpec,
    SynthSpec,
    build_quantile_regression,
    generate_synthetic,
    load_quantile_csv,
    qr_coefficients,
    solve_path,
)
from .model import (
    ConstraintBlock,
    LinearObjective,
    Problem,
    QuadraticObjective,
    Residuals,
    dual_objective,
    kkt_residuals,
    superquantile,
)
from .projection import (
    Box,
    TopKProjection,
    project_box,
    project_topk,
    project_topk_with_hint,
)
from .topk import partition_of, sort_desc, topk_sum

__version__ = "0.1.0"

__all__ = [
    "AlmResult",
    "AlmSettings",
    "IterateState",
    "dual_feasibility",
    "solve",
    "QrSpec",
    "SynthSpec",
    "build_quantile_regression",
    "generate_synthetic",
    "load_quantile_csv",
    "qr_coefficients",
    "solve_path",
    "Box",
    "ConstraintBlock",
    "LinearObjective",
    "Problem",
    "QuadraticObjective",
    "Residuals",
    "dual_objective",
    "kkt_residuals",
    "superquantile",
    "TopKProjection",
    "project_box",
    "project_topk",
    "project_topk_with_hint",
    "partition_of",
    "sort_desc",
    "topk_sum",
    "__version__",
]
