"""Single-image height estimation as ordinal regression over height bins."""

from .discretize import ClassMap, DiscretizationScheme, Kind, decode, encode, encode_map, make_scheme
from .metrics import MetricReport, evaluate, evaluate_batch
from .net import Checkpoint, Head, NetConfig, OrdinalNet
from .raster import (ImageTile, PatchLayout, PatchSpec, RasterGrid, load_image, load_raster,
                     localize_patch, plan_grid, random_crop_pair, save_image, save_raster)
from .inference import predict_image
from .prng import SplitMix64
from .stitch import estimate_shift, stitch
from .synth import SceneConfig, generate_dataset, generate_pairs, load_dataset
from .trainer import OptimConfig, train

__all__ = [
    "Checkpoint", "ClassMap", "DiscretizationScheme", "Head", "ImageTile", "Kind", "MetricReport", "NetConfig",
    "OptimConfig", "OrdinalNet", "PatchLayout", "PatchSpec", "RasterGrid", "SceneConfig", "SplitMix64", "decode",
    "encode", "encode_map", "estimate_shift", "evaluate", "evaluate_batch", "generate_dataset", "generate_pairs",
    "load_dataset", "load_image", "load_raster", "localize_patch", "make_scheme", "plan_grid", "predict_image",
    "random_crop_pair", "save_image", "save_raster", "stitch", "train",
]

__version__ = "0.1.0"
