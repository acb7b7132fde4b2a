"""Featureless panoramic mosaicing.

Recovers a panorama and the alignment of all input frames by minimizing
intensity differences directly: closed-form panorama compositing,
adaptive-window pairwise Gauss-Newton registration, and global
coordinatewise multi-frame refinement, all with coarse-to-fine pyramids.
"""

from .errors import (
    ConfigError,
    ImageFormatError,
    InsufficientOverlapError,
    MalformedHeaderError,
    MosaicError,
    RegistrationFailureError,
    SingularTransformError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from .motion import ModelKind, MotionParams, compose, identity, invert, jacobian, map_point, rescale
from .pairwise import PairResult, RegisterOptions, adaptive_window, gauss_newton_step, register_pair, residual
from .panorama import (
    PanoramaEstimate,
    RefGrid,
    Registration,
    compute_bounds,
    estimate_panorama,
    ml_cost,
    render,
    weight_map,
)
from .raster import (
    GradientField,
    Pyramid,
    Raster,
    build_pyramid,
    downsample,
    load_image,
    sample_bilinear,
    save_image,
    spatial_gradient,
)
from .refine import MlmOptions, MlmTrace, coordinate_update, refine, sequential_init
from .synth import ChainSpec, EvalReport, SynthConfig, SynthDataset, evaluate, generate, make_texture

__version__ = "0.1.0"
