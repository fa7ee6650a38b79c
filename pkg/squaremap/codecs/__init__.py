from .base import ImageCodec, ImageSidecar, codecs_status, get_codec

__all__ = ["ImageCodec", "ImageSidecar", "codecs_status", "get_codec"]
