"""Gamma-ray line unfolding with matched derivative-kernel pairs."""
from .folding import (ChannelHistogram, ContinuousSpectrum, SpectralLine, channelize, fold,
                      poisson_realize)
from .kernels import (DesignSpec, KernelPair, catalog_pair, design_pair, frequency_response,
                      matching_error, sampled_gaussian_pair)
from .reconstruction import MSurface, build_m_surface, estimate_density, prefix_sums
from .response import (DetectorModel, EnergyGrid, MediumModel, ResponseMatrix,
                       detector_response_matrix, medium_kernel, modified_response)
from .unfolding import (UnfoldOptions, UnfoldResult, detect_peaks, fit_amplitudes,
                        refine_energies, spectrum_error, unfold)

__version__ = "0.1.0"
