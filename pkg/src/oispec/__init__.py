"""Multi-angle oblique-illumination spectral microscopy processing.

Stacks are indexed (angle, wavelength, row, column). The typical chain is
:func:`calibrate_stack` -> :func:`register_stack` -> :func:`stack_normals` ->
:func:`flatten` -> :func:`min_projection` -> :func:`unmix_stack`, and
:mod:`oispec.simulate` renders synthetic stacks with known ground truth.
"""
from ._parallel import get_threads, set_threads
from .calibrate import DarkFrame, average_darks, calibrate_stack, reflectance
from .colorimetry import (
    chromaticity,
    extract_region_spectrum,
    luminance,
    rgb_image,
    spectrum_to_xyz,
    stack_to_rgb,
    stack_to_xyz,
    xyz_to_srgb,
)
from .core import (
    DimensionError,
    DomainError,
    GeometryError,
    IlluminationGeometry,
    ImagePlane,
    LightVector,
    SpectralError,
    SpectralStack,
    WavelengthGrid,
    light_vector,
    lighting_matrix,
    rayleigh_limit,
    total_images,
    wavelength_count,
)
from .io import load_references, load_stack, read_manifest, save_stack
from .pigments import pigment_dictionary, pigment_spectrum
from .project import avg_projection, difference_image, max_projection, min_projection, project
from .register import RegistrationError, RigidTransform, estimate_translation, register_stack
from .shape import NormalMap, flatten, reshade, shading_gradient, solve_normals, stack_normals
from .unmix import (
    AbundanceMap,
    SpectralDictionary,
    brute_force_sparse,
    load_dictionary,
    normalize_weights,
    omp,
    omp_batch,
    unmix_stack,
)

__version__ = "0.1.0"
