"""Configured experiments: radial profiles, patched metrics, scenario runners."""

from .patched import (
    ConstructionSpec,
    PatchSystem,
    build_patched_metric,
    construction_measurements,
    patch_area_quadrature,
    run_patch_flow,
    series_lower_bound,
    standard_construction,
)
from .radial import (
    RadialResult,
    RadialSystem,
    area_decay_slope,
    disc_ball_observables,
    run_radial,
)
from .runners import (
    ScenarioResult,
    run_capped_sphere,
    run_construction,
    run_construction_suite,
    run_round_sphere,
    run_truncated_cigar,
    sample_ball_domains,
    write_artifacts,
)

__all__ = [
    "ConstructionSpec",
    "PatchSystem",
    "build_patched_metric",
    "construction_measurements",
    "patch_area_quadrature",
    "run_patch_flow",
    "series_lower_bound",
    "standard_construction",
    "RadialResult",
    "RadialSystem",
    "area_decay_slope",
    "disc_ball_observables",
    "run_radial",
    "ScenarioResult",
    "run_capped_sphere",
    "run_construction",
    "run_construction_suite",
    "run_round_sphere",
    "run_truncated_cigar",
    "sample_ball_domains",
    "write_artifacts",
]
