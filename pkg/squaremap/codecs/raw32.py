from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from ..errors import GeometryImageError
from ..geomimage import GeometryImage
from .base import ImageCodec, ImageSidecar, PathLike, write_sidecar


class Raw32Codec(ImageCodec):
    """Unquantized float32 samples in a compressed .npz container."""

    name = "raw32"
    suffix = ".npz"

    def write(self, img: GeometryImage, path: PathLike) -> List[Path]:
        out = self.target(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("wb") as fh:
            np.savez_compressed(
                fh,
                samples=img.samples.astype(np.float32),
                genus=np.int64(img.genus),
                weld=np.array(img.weld),
                fallback_pixels=np.int64(img.fallback_pixels),
            )
        lo, hi = img.channel_range()
        side = write_sidecar(
            out,
            ImageSidecar(
                codec=self.name, N=img.resolution, genus=img.genus, weld=img.weld, layout="npz-float32",
                min=lo.tolist(), max=hi.tolist(), fallback_pixels=img.fallback_pixels,
            ),
        )
        return [out, side]

    def read(self, path: PathLike) -> GeometryImage:
        src = Path(path)
        if not src.is_file():
            raise GeometryImageError(f"{src}: no such image")
        try:
            with np.load(src, allow_pickle=False) as data:
                img = GeometryImage(
                    data["samples"].astype(np.float64),
                    int(data["genus"]),
                    str(data["weld"]),
                    fallback_pixels=int(data["fallback_pixels"]),
                )
        except (KeyError, ValueError, OSError) as exc:
            raise GeometryImageError(f"{src}: {exc}") from exc
        return img
