"""Reference-free groupwise rigid point set alignment.

All point sets move simultaneously toward the minimum of their mutual
mass-weighted distance energy, evaluated through a Barnes-Hut style spatial
tree with per-set mass shadowing and minimized by alternating Huber-robust
Levenberg-Marquardt sweeps.
"""
from .core import (PointCloud, RigidTransform, apply_transform,
                   axis_angle_to_matrix, compose, matrix_to_axis_angle)
from .bhtree import BHTree, Cluster, build
from .energy import ResidualTerm, build_residuals, gpe_exact, gpe_tree
from .optimizer import (AlignConfig, AlignResult, LMDamping, align,
                        extract_correspondences, lm_step)
from .signature import (SurfaceFit, compute_descriptors, fit_cubic_surface,
                        local_neighborhood, masses_from_signature,
                        shape_descriptor)
from .masses import (PriorMatchSet, apply_prior_matches, load_priors,
                     masses_from_intensity, set_uniform_masses)
from .metrics import e3d, transform_error
from .io import load_cloud, save_result
from .synth import Instance, ScenarioSpec, generate_surface_cloud, make_instance
from .benchmark import run_benchmark, scenario_grid
from . import errors

__version__ = "1.0.0"

__all__ = [
    "PointCloud", "RigidTransform", "apply_transform", "axis_angle_to_matrix",
    "compose", "matrix_to_axis_angle",
    "BHTree", "Cluster", "build",
    "ResidualTerm", "build_residuals", "gpe_exact", "gpe_tree",
    "AlignConfig", "AlignResult", "LMDamping", "align",
    "extract_correspondences", "lm_step",
    "SurfaceFit", "compute_descriptors", "fit_cubic_surface",
    "local_neighborhood", "masses_from_signature", "shape_descriptor",
    "PriorMatchSet", "apply_prior_matches", "load_priors",
    "masses_from_intensity", "set_uniform_masses",
    "e3d", "transform_error",
    "load_cloud", "save_result",
    "Instance", "ScenarioSpec", "generate_surface_cloud", "make_instance",
    "run_benchmark", "scenario_grid",
    "errors",
]
