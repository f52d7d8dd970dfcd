"""Temporal affine analysis of left-ventricle echo video.

Frames are mapped into a 224x224 canonical space by the affine transform that
takes three propagated landmarks (apex and mitral annulus) onto a mean shape
template, analyzed there, and mapped back.
"""

from .data import (AnnotationSet, DegenerateError, FrameAnnotation, LandmarkTriple, LoadError, SchemaError,
                   TanError, VideoSequence, load_annotations, load_sequence)
from .geometry import CANVAS, AffineTransform, ShapeTemplate, apply_to_points, estimate_affine, invert
from .warping import WarpSpec, warp_image, warp_mask
from .flow import FlowConfig, lk_track_point, propagate_contour, reconstruct_mask, resample_contour
from .losses import HetGateConfig, LossWeights
from .metrics import asd, dice, oks, smoothness_index, worst_fraction
from .analyzer import OracleAnalyzer, OracleConfig, PixelClassifierModel, tcm_finetune, train_pixel_classifier
from .pipeline import PipelineConfig, bench, evaluate, run_tan
from .synth import AugConfig, SynthConfig, generate_sequence

__version__ = "0.1.0"
