from __future__ import annotations

import logging
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from ..errors import GeometryImageError
from ..geomimage import GeometryImage
from .base import ImageCodec, ImageSidecar, PathLike, read_sidecar, write_sidecar

logger = logging.getLogger(__name__)

LAYOUT = "channels-stacked-rows"


class Png16Codec(ImageCodec):
    """16-bit grayscale PNG holding the x, y and z planes stacked top to bottom (3N x N)."""

    name = "png16"
    suffix = ".png"

    def write(self, img: GeometryImage, path: PathLike) -> List[Path]:
        out = self.target(path)
        q, lo, hi = img.quantize()
        N = img.resolution
        stacked = np.ascontiguousarray(np.concatenate([q[:, :, c] for c in range(3)], axis=0))
        out.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(stacked).save(out, format="PNG")
        side = write_sidecar(
            out,
            ImageSidecar(
                codec=self.name, N=N, genus=img.genus, weld=img.weld, layout=LAYOUT,
                min=lo.tolist(), max=hi.tolist(), fallback_pixels=img.fallback_pixels,
            ),
        )
        logger.info("codec: wrote %s (%dx%d, 16-bit)", out, N, N)
        return [out, side]

    def read(self, path: PathLike) -> GeometryImage:
        src = Path(path)
        if not src.is_file():
            raise GeometryImageError(f"{src}: no such image")
        meta = read_sidecar(src)
        if meta.layout != LAYOUT:
            raise GeometryImageError(f"{src}: unsupported layout {meta.layout!r}")
        with Image.open(src) as im:
            stacked = np.asarray(im).astype(np.int64)
        N = meta.N
        if stacked.shape != (3 * N, N):
            raise GeometryImageError(f"{src}: expected a {N}x{3 * N} image, got {stacked.shape[::-1]}")
        q = np.stack([stacked[c * N:(c + 1) * N] for c in range(3)], axis=2)
        img = GeometryImage.from_quantized(q, meta.min, meta.max, meta.genus, meta.weld)
        img.fallback_pixels = meta.fallback_pixels
        return img
