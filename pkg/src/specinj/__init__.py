"""Spectral injection diagnostics for the angular reach of equivariant readouts."""
from .exceptions import DegenerateAnchorError, DegenerateFrameError, GateError, ResourceError, TrainingError
from .sphharm import CONVENTION_ID, L_MAX_SUPPORTED, SHVector, build_grid, real_sph_harm, sh_index
from .cgspan import GauntTable, gaunt, span_rank
from .injector import Configuration, InjectionSpec, body_frame, inject_dataset, injected_energy, injected_forces
from .probe import PolyProbe, fit_poly_probe, hard_ceiling_check, saturation_grid
from .metrics import MetricReport, bootstrap_mean_ci, cluster_bootstrap_contrast, recovery_fraction, sharpness
from .spn import InvariantExtractor, SPNRegressor
from .bandwidth import BandwidthAnalyzer, bandwidth_lstar, dataset_bandwidth, neighbor_density_coeffs

__version__ = "0.1.0"

__all__ = [
    "CONVENTION_ID", "L_MAX_SUPPORTED", "BandwidthAnalyzer", "Configuration", "DegenerateAnchorError",
    "DegenerateFrameError", "GateError", "GauntTable", "InjectionSpec", "InvariantExtractor", "MetricReport",
    "PolyProbe", "ResourceError", "SHVector", "SPNRegressor", "TrainingError", "bandwidth_lstar",
    "body_frame", "bootstrap_mean_ci", "build_grid", "cluster_bootstrap_contrast", "dataset_bandwidth",
    "fit_poly_probe", "gaunt", "hard_ceiling_check", "inject_dataset", "injected_energy", "injected_forces",
    "neighbor_density_coeffs", "real_sph_harm", "recovery_fraction", "saturation_grid", "sh_index",
    "sharpness", "span_rank",
]
