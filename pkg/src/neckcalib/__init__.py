"""Numerical verification of calibrations on neck manifolds M × N."""

from .catalog import constant_neck, jlt_neck, probe_neck
from .calibration import (ComassReport, ProductPoint, TangentFrame, calib_value,
                          comass_ratio, comass_sweep, frame_volume, frame_volume_minors,
                          lifted_frame, max_ratio_search, probe_hypothesis, random_frame)
from .geometry import ImmersedChart, Sphere, orientation_sign, sphere_point, tangent_basis
from .linalg import (IndexSubset, cauchy_binet_check, det, enumerate_subsets, minor,
                     weighted_minor_expansion)
from .metric import (FactorProfile, FiberMetricSpec, NeckSpec, base_volume_form, eval_g,
                     eval_h, find_q0, product_factor, resolve_q0)
from .variational import (GraphSection, graph_volume, mean_curvature_defect,
                          perturbation_test, quadrature_rule)

__version__ = "0.1.0"
