"""From network outputs to height rasters: per-head decoding, batched patch
prediction and whole-image prediction with stitching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ordinal
from .discretize import DiscretizationScheme, Midpoint, decode
from .net import Head, OrdinalNet
from .raster import ImageTile, PatchLayout, RasterGrid, plan_grid
from .stitch import StitchResult, stitch


def outputs_to_heights(outputs: np.ndarray, head: Head, scheme: DiscretizationScheme,
                       midpoint: Midpoint | str = Midpoint.GEOMETRIC) -> np.ndarray:
    """(N, C, H, W) head outputs -> (N, H, W) heights in meters."""
    head = Head(head)
    if head is Head.ORDINAL:
        classes = ordinal.decode_class(ordinal.pair_softmax(outputs))
    elif head is Head.MCC:
        classes = ordinal.mcc_decode(outputs)
    else:
        return outputs[:, 0].astype(np.float64)
    return decode(classes, scheme, midpoint)


def predict_heights(model: OrdinalNet, scheme: DiscretizationScheme, images: np.ndarray,
                    batch_size: int = 8, midpoint: Midpoint | str = Midpoint.GEOMETRIC) -> np.ndarray:
    """Localized height predictions for (N, 3, H, W) images."""
    out = []
    for i in range(0, len(images), batch_size):
        y = model.forward(images[i:i + batch_size]).data
        out.append(outputs_to_heights(y, model.config.head, scheme, midpoint))
    return np.concatenate(out, axis=0) if out else np.zeros((0,) + images.shape[2:])


def grid_patches(image: ImageTile, layout: PatchLayout) -> np.ndarray:
    chw = image.to_chw()
    return np.stack([chw[:, y0:y0 + s, x0:x0 + s] for _, _, x0, y0, s in layout.rects])


@dataclass
class ImagePrediction:
    layout: PatchLayout
    patches: list[RasterGrid]        # row-major, localized heights per patch
    result: StitchResult


def predict_image(model: OrdinalNet, scheme: DiscretizationScheme, image: ImageTile,
                  patch_size: int = 256, overlap: int = 2, batch_size: int = 4,
                  midpoint: Midpoint | str = Midpoint.GEOMETRIC) -> ImagePrediction:
    layout = plan_grid(image.width, image.height, patch_size, overlap)
    heights = predict_heights(model, scheme, grid_patches(image, layout), batch_size, midpoint)
    patches = [RasterGrid(h.astype(np.float32)) for h in heights]
    return ImagePrediction(layout, patches, stitch(patches, layout))
