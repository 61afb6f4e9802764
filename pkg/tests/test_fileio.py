import os
import zlib

import numpy as np
import pytest

from wfno import fileio


def quantized(img):
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def test_png_roundtrip_is_exact_after_quantization(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (13, 9, 3))
    p = str(tmp_path / "x.png")
    fileio.save_image(p, img)
    back = fileio.load_image(p)
    assert back.shape == (13, 9, 3)
    assert np.array_equal(back, quantized(img))


def test_png_grayscale_and_out_of_range_clamp(tmp_path):
    img = np.linspace(-0.5, 1.5, 25).reshape(5, 5, 1)
    p = str(tmp_path / "g.png")
    fileio.save_image(p, img)
    back = fileio.load_image(p)
    assert back.min() == 0.0 and back.max() == 1.0
    assert np.array_equal(back, quantized(img))


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (6, 8, 3))
    p = str(tmp_path / "x.ppm")
    fileio.save_image(p, img)
    assert np.array_equal(fileio.load_image(p), quantized(img))


def test_save_image_deterministic_bytes(tmp_path):
    img = np.random.default_rng(2).uniform(0, 1, (16, 16, 3))
    a, b = str(tmp_path / "a.png"), str(tmp_path / "b.png")
    fileio.save_image(a, img)
    fileio.save_image(b, img)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_load_image_rejects_garbage(tmp_path):
    p = str(tmp_path / "junk.png")
    with open(p, "wb") as f:
        f.write(b"this is not an image")
    with pytest.raises(fileio.FileFormatError):
        fileio.load_image(p)


def test_png_rejects_corrupt_checksum(tmp_path):
    p = str(tmp_path / "ok.png")
    fileio.save_image(p, np.zeros((4, 4, 3)))
    blob = bytearray(open(p, "rb").read())
    blob[-5] ^= 0xFF  # flip a bit inside the IEND/IDAT tail
    bad = str(tmp_path / "bad.png")
    with open(bad, "wb") as f:
        f.write(bytes(blob))
    with pytest.raises((fileio.FileFormatError, zlib.error)):
        fileio.load_image(bad)


@pytest.mark.parametrize("shape", [(), (3,), (2, 3), (2, 3, 4), (1, 2, 3, 4)])
def test_tensor_roundtrip_all_ranks(tmp_path, shape):
    rng = np.random.default_rng(3)
    t = rng.standard_normal(shape)
    p = str(tmp_path / "t.tnsr")
    fileio.save_tensor(p, t)
    back = fileio.load_tensor(p)
    assert back.shape == t.shape
    assert np.array_equal(back, t)


def test_tensor_roundtrip_noncontiguous(tmp_path):
    base = np.arange(24, dtype=np.float64).reshape(4, 6)
    view = base[::2, ::3]  # strided, non-contiguous
    p = str(tmp_path / "v.tnsr")
    fileio.save_tensor(p, view)
    assert np.array_equal(fileio.load_tensor(p), view)


def test_tensor_rejects_bad_magic(tmp_path):
    p = str(tmp_path / "bad.tnsr")
    with open(p, "wb") as f:
        f.write(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(fileio.FileFormatError):
        fileio.load_tensor(p)


def test_tensor_rejects_truncated_payload(tmp_path):
    p = str(tmp_path / "t.tnsr")
    fileio.save_tensor(p, np.ones((4, 4)))
    blob = open(p, "rb").read()
    cut = str(tmp_path / "cut.tnsr")
    with open(cut, "wb") as f:
        f.write(blob[:-8])
    with pytest.raises(fileio.FileFormatError):
        fileio.load_tensor(cut)


def test_atomic_write_leaves_no_partials(tmp_path):
    p = str(tmp_path / "img.png")
    fileio.save_image(p, np.zeros((4, 4, 3)))
    leftovers = [n for n in os.listdir(tmp_path) if n != "img.png"]
    assert leftovers == []
