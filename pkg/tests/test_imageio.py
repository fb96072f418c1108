import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermoface.imageio import (Image, LabeledDataset, PGMError, decode_pgm, encode_pgm,
                                load_image_folder, parse_synth_spec, resize_bilinear,
                                save_image_folder, synth_thermal, to_input_tensor, write_pgm)


def test_decode_known_bytes():
    img = decode_pgm(b"P5 2 2 255\n" + bytes([0, 255, 128, 64]))
    assert (img.width, img.height) == (2, 2)
    np.testing.assert_allclose(img.pixels.ravel(), [0, 1, 128 / 255, 64 / 255])
    np.testing.assert_allclose(img.pixels.ravel(), [0, 1, 0.50196, 0.25098], atol=5e-6)


def test_decode_comments_and_16bit():
    data = b"P5\n# a comment\n2 1\n# another\n65535\n" + bytes([0xFF, 0xFF, 0x80, 0x00])
    np.testing.assert_allclose(decode_pgm(data).pixels, [[1.0, 0x8000 / 65535]])


@pytest.mark.parametrize("data", [
    b"P3 2 2 255\n0 1 2 3",           # ASCII PGM
    b"P5 2 2 255\n" + bytes([1, 2]),   # truncated payload
    b"P5 2 2 0\n" + bytes(4),          # maxval 0
    b"P5 2 2",                         # truncated header
    b"P5 2 2 100\n" + bytes([0, 200, 0, 0]),  # sample above maxval
])
def test_decode_errors(data):
    with pytest.raises(PGMError):
        decode_pgm(data)


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_pgm_roundtrip_8bit(w, h, seed):
    q = np.random.default_rng(seed).integers(0, 256, (h, w)) / 255.0
    img = Image(q)
    back = decode_pgm(encode_pgm(img))
    assert np.array_equal(back.pixels, img.pixels)
    assert encode_pgm(back) == encode_pgm(img)


def test_image_invariant():
    with pytest.raises(ValueError):
        Image(np.array([[1.5]]))
    with pytest.raises(ValueError):
        Image(np.zeros(3))


def test_resize_constant():
    img = Image(np.full((5, 7), 0.3))
    np.testing.assert_allclose(resize_bilinear(img, 11, 3).pixels, 0.3, atol=1e-15)


def test_resize_ramp():
    out = resize_bilinear(Image(np.array([[0.0, 1.0], [0.0, 1.0]])), 4, 2)
    # corner-aligned: output column j samples source x = j * (2-1)/(4-1)
    np.testing.assert_allclose(out.pixels, [[0, 1 / 3, 2 / 3, 1]] * 2, atol=1e-15)


def test_resize_identity(rng):
    img = Image(rng.random((6, 4)))
    assert np.array_equal(resize_bilinear(img, 4, 6).pixels, img.pixels)


def test_resize_vs_pointwise_oracle(rng):
    src = rng.random((5, 6))
    out = resize_bilinear(Image(src), 9, 4).pixels

    def sample(y, x):
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        y1, x1 = min(y0 + 1, 4), min(x0 + 1, 5)
        fy, fx = y - y0, x - x0
        return ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
                + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))

    for i in range(4):
        for j in range(9):
            assert out[i, j] == pytest.approx(sample(i * 4 / 3, j * 5 / 8), abs=1e-12)


def test_resize_zero_dim():
    with pytest.raises(ValueError):
        resize_bilinear(Image(np.zeros((2, 2))), 0, 3)


def test_to_input_tensor(rng):
    img = Image(rng.random((2, 2)))
    t3 = to_input_tensor(img, 3)
    assert t3.shape == (3, 2, 2)
    assert all(np.array_equal(t3[c], img.pixels) for c in range(3))
    t1 = to_input_tensor(img, 1)
    assert t1.shape == (1, 2, 2) and np.array_equal(t1[0], img.pixels)
    assert t3.sum() == pytest.approx(3 * img.pixels.sum(), rel=1e-14)


def _write(path, value=0.5, size=4):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, Image(np.full((size, size), value)))


def test_load_folder(tmp_path):
    _write(tmp_path / "b" / "x.pgm")
    _write(tmp_path / "a" / "2.pgm", 0.2)
    _write(tmp_path / "a" / "1.pgm", 0.1)
    ds = load_image_folder(tmp_path, 8)
    assert ds.class_names == ["a", "b"]
    assert len(ds) == 3
    assert ds.labels.tolist() == [0, 0, 1]
    assert ds.items[0][0].pixels[0, 0] == pytest.approx(26 / 255)  # 1.pgm before 2.pgm
    assert all(img.pixels.shape == (8, 8) for img, _ in ds.items)


def test_load_folder_deterministic(tmp_path):
    for i in (3, 1, 2):
        _write(tmp_path / "c" / f"{i}.pgm", i / 10)
    a = load_image_folder(tmp_path, 4)
    b = load_image_folder(tmp_path, 4)
    assert [np.array_equal(x.pixels, y.pixels) for (x, _), (y, _) in zip(a.items, b.items)] == [True] * 3


def test_load_folder_empty(tmp_path):
    with pytest.raises(ValueError):
        load_image_folder(tmp_path, 4)


def test_load_folder_bad_file(tmp_path):
    _write(tmp_path / "a" / "ok.pgm")
    (tmp_path / "a" / "bad.pgm").write_bytes(b"P3 1 1 255\n0")
    assert len(load_image_folder(tmp_path, 4)) == 1
    with pytest.raises(PGMError, match="bad.pgm"):
        load_image_folder(tmp_path, 4, skip_bad=False)


def test_load_folder_many_classes(tmp_path):
    for k in range(109):
        _write(tmp_path / f"subject_{k:03d}" / "0.pgm", size=2)
    ds = load_image_folder(tmp_path, 2)
    assert len(ds.class_names) == 109


def test_save_load_roundtrip(tmp_path):
    ds = synth_thermal(3, 2, 8, 0.0, 0)
    save_image_folder(ds, tmp_path)
    back = load_image_folder(tmp_path, 8)
    assert back.class_names == ds.class_names and back.labels.tolist() == ds.labels.tolist()


def _same(a, b):
    return a.class_names == b.class_names and all(
        la == lb and np.array_equal(x.pixels, y.pixels) for (x, la), (y, lb) in zip(a.items, b.items))


def test_synth_deterministic():
    assert _same(synth_thermal(2, 10, 32, 0.0, 7), synth_thermal(2, 10, 32, 0.0, 7))
    assert _same(synth_thermal(3, 4, 16, 0.2, 11), synth_thermal(3, 4, 16, 0.2, 11))


def test_synth_noise_free_within_class_identical():
    ds = synth_thermal(2, 5, 16, 0.0, 3)
    for k in range(2):
        imgs = [img.pixels for img, lab in ds.items if lab == k]
        assert all(np.array_equal(imgs[0], other) for other in imgs[1:])


def test_synth_clamped_under_extreme_noise():
    ds = synth_thermal(2, 3, 16, 5.0, 0)
    for img, _ in ds.items:
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_synth_separable_by_nearest_centroid():
    ds = synth_thermal(2, 50, 32, 0.05, 0)
    x = np.stack([img.pixels.ravel() for img, _ in ds.items])
    y = ds.labels
    correct = 0
    for i in range(len(x)):  # leave-one-out nearest centroid
        mask = np.arange(len(x)) != i
        cents = [x[mask & (y == k)].mean(axis=0) for k in range(2)]
        pred = int(np.argmin([np.sum((x[i] - c) ** 2) for c in cents]))
        correct += pred == y[i]
    assert correct / len(x) >= 0.95


@pytest.mark.parametrize("bad", [(1, 5, 8), (2, 0, 8)])
def test_synth_rejects(bad):
    with pytest.raises(ValueError):
        synth_thermal(*bad, 0.0, 0)


def test_parse_synth_spec():
    assert parse_synth_spec("2x50x32") == (2, 50, 32)
    with pytest.raises(ValueError):
        parse_synth_spec("2x50")


def test_dataset_label_invariant():
    with pytest.raises(ValueError):
        LabeledDataset([(Image(np.zeros((1, 1))), 2)], ["a", "b"])
