"""Hierarchical superpixel segmentation and multiscale sparse unmixing of hyperspectral images."""

from .core import (
    AbundanceMap,
    HomogeneityParams,
    HyperCube,
    ScaleOperator,
    SegmentationMap,
    SolverParams,
    SpectralLibrary,
    validate,
)
from .homogeneity import assess, refine
from .pipeline import PipelineConfig, grid_search, hmua_unmix, mua_unmix, unmix
from .scalespace import build_operator, coarsen, uncoarsen
from .slic import SlicParams, slic_segment
from .solver import solve_coarse, solve_regularized
from .synth import SceneSpec, generate_abundances, mix_and_corrupt, sre

__version__ = "0.1.0"
