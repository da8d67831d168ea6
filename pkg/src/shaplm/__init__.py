"""Spatially heterogeneous additive partial linear models.

Simultaneously estimates a smooth spatial intercept surface (bivariate
penalised splines over a triangulation) and piecewise-constant covariate
coefficients whose spatial clusters are discovered by fusing differences
along random spanning forests of the Delaunay adjacency graph.
"""

from .bench import BenchConfig, run_benchmark, write_bench_csv
from .bernstein import (
    SplineBasisSpec,
    SplineFunction,
    SplineSystem,
    build_constraints,
    build_energy,
    build_spline_system,
    eval_basis,
    eval_spline,
    interpolate,
    reparameterize,
)
from .estimators import PsccmRegressor, ShaplmRegressor
from .geometry import (
    TriangulationMesh,
    barycentric,
    delaunay,
    load_mesh,
    locate_points,
    make_mesh,
    mesh_edges,
    mesh_uniform_rect,
    save_mesh,
)
from .graph_tree import (
    SpanningTree,
    SpatialGraph,
    TreeTransform,
    apply_inverse,
    apply_transform,
    build_design,
    delaunay_graph,
    make_tree,
    mst,
    penalized_mask,
    random_spanning_tree,
    spatial_graph,
    tree_incidence,
)
from .metrics import df_psi, df_theta, mse_beta, mse_g, rand_index
from .pipeline import (
    Dataset,
    ForestConfig,
    ShaplmFit,
    SingleFit,
    adaptive_weights,
    average_estimates,
    extract_clusters,
    fit_single,
    forest_fit,
    graph_fused_fit,
    predict,
    psccm_fit,
    tune_lambda,
    tune_rho,
)
from .simulate import (
    GpSpec,
    ScenarioSpec,
    SyntheticDataset,
    gen_covariates,
    gen_scenario,
    sample_gp,
    surface_labels,
    surface_values,
)
from .solver import (
    FitResult,
    PenalizedProblem,
    ProfiledDesign,
    SolverOptions,
    block_coordinate_descent,
    kkt_residual,
    oracle_fit,
    soft_threshold,
    solve_spline_block,
)

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "Dataset",
    "FitResult",
    "ForestConfig",
    "GpSpec",
    "PenalizedProblem",
    "ProfiledDesign",
    "PsccmRegressor",
    "ScenarioSpec",
    "ShaplmFit",
    "ShaplmRegressor",
    "SingleFit",
    "SolverOptions",
    "SpanningTree",
    "SpatialGraph",
    "SplineBasisSpec",
    "SplineFunction",
    "SplineSystem",
    "SyntheticDataset",
    "TreeTransform",
    "TriangulationMesh",
    "adaptive_weights",
    "apply_inverse",
    "apply_transform",
    "average_estimates",
    "barycentric",
    "block_coordinate_descent",
    "build_constraints",
    "build_design",
    "build_energy",
    "build_spline_system",
    "delaunay",
    "delaunay_graph",
    "df_psi",
    "df_theta",
    "eval_basis",
    "eval_spline",
    "extract_clusters",
    "fit_single",
    "forest_fit",
    "gen_covariates",
    "gen_scenario",
    "graph_fused_fit",
    "interpolate",
    "kkt_residual",
    "load_mesh",
    "locate_points",
    "make_mesh",
    "make_tree",
    "mesh_edges",
    "mesh_uniform_rect",
    "mse_beta",
    "mse_g",
    "mst",
    "oracle_fit",
    "penalized_mask",
    "predict",
    "psccm_fit",
    "rand_index",
    "random_spanning_tree",
    "reparameterize",
    "run_benchmark",
    "sample_gp",
    "save_mesh",
    "soft_threshold",
    "solve_spline_block",
    "spatial_graph",
    "surface_labels",
    "surface_values",
    "tree_incidence",
    "tune_lambda",
    "tune_rho",
    "write_bench_csv",
]
