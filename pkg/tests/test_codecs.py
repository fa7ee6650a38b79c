from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.append(str(Path(__file__).resolve().parents[1]))

from squaremap.codecs import codecs_status, get_codec
from squaremap.errors import GeometryImageError, UsageError
from squaremap.geomimage import GeometryImage


@pytest.fixture
def image():
    rng = np.random.default_rng(11)
    samples = rng.uniform(-2.0, 3.0, size=(8, 8, 3))
    return GeometryImage(samples, 1, fallback_pixels=2)


def test_png16_round_trip_within_quantization(tmp_path, image):
    codec = get_codec("png16")
    files = codec.write(image, tmp_path / "img")
    assert [p.name for p in files] == ["img.png", "img.json"]

    with Image.open(files[0]) as im:
        assert im.mode.startswith("I")
        assert im.size == (8, 24)

    side = json.loads(files[1].read_text())
    assert side["codec"] == "png16"
    assert side["N"] == 8
    assert side["weld"] == "torus"
    assert side["fallback_pixels"] == 2

    back = codec.read(files[0])
    lo, hi = image.channel_range()
    assert back.genus == 1 and back.weld == "torus"
    assert back.fallback_pixels == 2
    assert np.all(np.abs(back.samples - image.samples) <= (hi - lo) / 65535 + 1e-12)


def test_raw32_round_trip_is_float32_exact(tmp_path, image):
    codec = get_codec("raw32")
    out, side = codec.write(image, tmp_path / "img.npz")
    assert side.name == "img.json"
    back = codec.read(out)
    np.testing.assert_array_equal(back.samples, image.samples.astype(np.float32).astype(np.float64))
    assert back.weld == "torus"
    assert back.fallback_pixels == 2


def test_codec_lookup():
    assert get_codec().name == "png16"
    assert get_codec(path="a/b.npz").name == "raw32"
    assert get_codec(path="a/b.png").name == "png16"
    assert get_codec("raw32", path="x.png").name == "raw32"
    with pytest.raises(UsageError, match="unknown codec"):
        get_codec("jpeg")
    assert codecs_status() == {"png16": True, "raw32": True}


def test_png16_read_errors(tmp_path, image):
    codec = get_codec("png16")
    with pytest.raises(GeometryImageError, match="no such image"):
        codec.read(tmp_path / "missing.png")

    png, side = codec.write(image, tmp_path / "img.png")
    side.unlink()
    with pytest.raises(GeometryImageError, match="sidecar"):
        codec.read(png)
