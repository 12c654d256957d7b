"""Isotropic Gaussian random fields on the 2-sphere with power-law spectra.

Simulation (exact and spectral), covariance series, local time estimates and
Monte Carlo checks of small-scale regularity laws.
"""
__version__ = "0.1.0"

from .geometry import SpherePoint, Disk, AngularSection, geodesic_distance, disk_area, section_area
from .spectrum import (AngularPowerSpectrum, ModelParams, RateFunctions, TruncationPolicy,
                       covariance, variogram, c_ell, legendre_batch, rho_alpha, chung_modulus,
                       band_limits, appendix_partial_sum, appendix_tail)
from .gaussian import (CovarianceMatrix, build_covariance, conditional_variances, slnd_ratio,
                       increment_slnd_ratio)
from .synthesis import (FieldRealization, HarmonicCoefficients, exact_sample, spectral_sample,
                        bandlimited_sample, sup_increment)
from .localtime import (LevelGrid, LocalTimeEstimate, occupation_measure, local_time_histogram,
                        max_local_time, empirical_moment)

__all__ = [
    "SpherePoint", "Disk", "AngularSection", "geodesic_distance", "disk_area", "section_area",
    "AngularPowerSpectrum", "ModelParams", "RateFunctions", "TruncationPolicy", "covariance", "variogram",
    "c_ell", "legendre_batch", "rho_alpha", "chung_modulus", "band_limits", "appendix_partial_sum",
    "appendix_tail", "CovarianceMatrix", "build_covariance", "conditional_variances", "slnd_ratio",
    "increment_slnd_ratio", "FieldRealization", "HarmonicCoefficients", "exact_sample", "spectral_sample",
    "bandlimited_sample", "sup_increment", "LevelGrid", "LocalTimeEstimate", "occupation_measure",
    "local_time_histogram", "max_local_time", "empirical_moment",
]
