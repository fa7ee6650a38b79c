from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

from ..errors import GeometryImageError, UsageError
from ..geomimage import GeometryImage

PathLike = Union[str, Path]


class ImageSidecar(BaseModel):
    """JSON metadata stored next to an encoded geometry image."""

    format: str = "squaremap-gimg"
    codec: str
    N: int
    genus: int
    weld: str
    layout: str
    min: List[float] = Field(default_factory=list)
    max: List[float] = Field(default_factory=list)
    fallback_pixels: int = 0


class ImageCodec(ABC):
    name: str
    suffix: str

    @abstractmethod
    def write(self, img: GeometryImage, path: PathLike) -> List[Path]: ...

    @abstractmethod
    def read(self, path: PathLike) -> GeometryImage: ...

    def available(self) -> bool:
        return True

    def target(self, path: PathLike) -> Path:
        path = Path(path)
        return path if path.suffix else path.with_suffix(self.suffix)


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def write_sidecar(path: PathLike, sidecar: ImageSidecar) -> Path:
    out = sidecar_path(path)
    out.write_text(sidecar.model_dump_json(indent=2) + "\n")
    return out


def read_sidecar(path: PathLike) -> ImageSidecar:
    src = sidecar_path(path)
    if not src.is_file():
        raise GeometryImageError(f"{src}: sidecar metadata not found")
    try:
        return ImageSidecar.model_validate_json(src.read_text())
    except ValueError as exc:
        raise GeometryImageError(f"{src}: {exc}") from exc


def _registry() -> Dict[str, ImageCodec]:
    from .png16 import Png16Codec
    from .raw32 import Raw32Codec

    return {c.name: c for c in (Png16Codec(), Raw32Codec())}


def get_codec(name: Optional[str] = None, path: Optional[PathLike] = None) -> ImageCodec:
    """Codec by name, or by file suffix when no name is given."""
    codecs = _registry()
    if name is None and path is not None:
        suffix = Path(path).suffix.lower()
        for codec in codecs.values():
            if codec.suffix == suffix:
                return codec
    name = name or "png16"
    if name not in codecs:
        raise UsageError(f"unknown codec {name!r}; choose from {sorted(codecs)}")
    return codecs[name]


def codecs_status() -> Dict[str, bool]:
    return {name: codec.available() for name, codec in _registry().items()}
