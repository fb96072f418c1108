import numpy as np
import pytest

from thermoface.layers import BatchNorm, ForwardContext
from thermoface.models import (LoadReport, WeightFileError, WeightMismatchError, build_model,
                               build_resnet50, build_small_cnn, build_vgg19, conv_census, count_params,
                               decode_weights, encode_weights, load_weights, save_weights, summarize)


def _row(pc, name):
    return next(r for r in pc.per_layer if r[0] == name)


def test_vgg19_counts():
    m = build_vgg19(128, 1)
    pc = count_params(m)
    assert _row(pc, "vgg19") == ("vgg19", (512, 4, 4), 20_024_384)
    assert _row(pc, "flatten") == ("flatten", (8192,), 0)
    assert _row(pc, "dense") == ("dense", (256,), 2_097_408)
    assert _row(pc, "dropout") == ("dropout", (256,), 0)
    assert _row(pc, "dense_1") == ("dense_1", (1,), 257)
    assert pc.total == 20_024_384 + 2_097_408 + 257
    assert pc.non_trainable == 0


def test_resnet50_counts():
    m = build_resnet50(128, 1)
    pc = count_params(m)
    assert _row(pc, "resnet50") == ("resnet50", (2048, 4, 4), 23_587_712)
    assert _row(pc, "flatten")[1:] == ((32768,), 0)
    assert _row(pc, "dense")[2] == 8_388_864
    assert _row(pc, "dense_1")[2] == 257
    assert pc.total == 23_587_712 + 8_388_864 + 257


def test_resnet50_trainable_split_oracle():
    m = build_resnet50(128, 1)
    # every batch-norm layer holds 2C non-trainable moving statistics
    bn_channels = sum(layer.channels for _, layer in m.walk() if isinstance(layer, BatchNorm))
    pc = count_params(m)
    assert pc.non_trainable == 2 * bn_channels == 53_120
    assert pc.trainable == pc.total - pc.non_trainable == 31_923_713


def test_resnet50_census():
    assert conv_census(build_resnet50(128, 1)) == {"total": 53, "projection": 4, "main": 49}
    assert conv_census(build_vgg19(128, 1))["total"] == 16


def test_vgg19_224():
    assert build_vgg19(224, 1).output_shapes()[0] == (512, 7, 7)


@pytest.mark.parametrize("kind", ["vgg19", "resnet50"])
def test_input_size_must_divide(kind):
    with pytest.raises(ValueError):
        build_model(kind, 100, 1)


def test_unknown_model():
    with pytest.raises(ValueError):
        build_model("alexnet", 128, 1)


def test_summary_rows():
    text = summarize(build_vgg19(128, 1))
    lines = text.splitlines()
    assert any("Layer (Type)" in line and "Output Shape" in line and "Parameter" in line for line in lines)
    row = next(line for line in lines if line.startswith("vgg19"))
    assert "(None, 4, 4, 512)" in row and row.split()[-1] == "20024384"
    flat = next(line for line in lines if line.startswith("flatten"))
    assert "(None, 8192)" in flat and flat.split()[-1] == "0"
    assert "Total params: 22122049" in text
    r = summarize(build_resnet50(128, 1))
    row = next(line for line in r.splitlines() if line.startswith("resnet50"))
    assert "(None, 4, 4, 2048)" in row and row.split()[-1] == "23587712"


def test_counts_match_allocated_arrays():
    m = build_small_cnn(16, 3).initialize(0)
    assert sum(a.size for a in m.parameters().values()) == count_params(m).total
    m = build_vgg19(32, 2, head_width=8).initialize(0)
    params = m.parameters()
    assert sum(a.size for a in params.values()) == count_params(m).total


def test_initialize_deterministic():
    a = build_small_cnn().initialize(3).parameters()
    b = build_small_cnn().initialize(3).parameters()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_trainable_names_freeze():
    m = build_resnet50(32, 2)
    assert not any(n.endswith("moving_mean") for n in m.trainable_names())
    m.freeze_base = True
    assert all(not n.startswith("resnet50/") for n in m.trainable_names())
    assert "dense/weight" in m.trainable_names()


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["vgg19", "resnet50"])
def test_full_model_forward(kind):
    m = build_model(kind, 128, 1).initialize(0)
    x = np.random.default_rng(0).random((1, 3, 128, 128))
    y = m.forward(x, ForwardContext("eval"))
    assert y.shape == (1, 1) and np.all(np.isfinite(y))


def test_small_forward_backward_shapes():
    m = build_small_cnn(32, 3).initialize(0)
    ctx = ForwardContext("train", 0)
    x = np.random.default_rng(0).random((4, 1, 32, 32))
    y = m.forward(x, ctx)
    assert y.shape == (4, 3)
    dx, grads = m.backward(np.ones_like(y), ctx)
    assert dx.shape == x.shape
    params = m.parameters()
    assert set(grads) == set(m.trainable_names())
    assert all(grads[k].shape == params[k].shape for k in grads)


def _model(seed=0, **kw):
    return build_small_cnn(16, 3, **kw).initialize(seed)


def test_weights_roundtrip(tmp_path):
    m = _model()
    save_weights(m, tmp_path / "a.w")
    m2 = _model(seed=5)
    report = load_weights(m2, tmp_path / "a.w")
    assert isinstance(report, LoadReport) and not report.missing and not report.skipped
    p, q = m.parameters(), m2.parameters()
    # storage is float32: loading yields the float32-rounded values exactly
    assert all(np.array_equal(q[k], p[k].astype(np.float32).astype(np.float64)) for k in p)
    save_weights(m2, tmp_path / "b.w")
    assert (tmp_path / "a.w").read_bytes() == (tmp_path / "b.w").read_bytes()
    m3 = _model(seed=9)
    load_weights(m3, tmp_path / "b.w")
    assert all(np.array_equal(m3.parameters()[k], q[k]) for k in q)


def test_weights_base_only(tmp_path):
    src = _model(seed=1)
    save_weights(src, tmp_path / "base.w", only_base=True)
    dst = _model(seed=2)
    head_before = {k: v.copy() for k, v in dst.parameters().items() if not k.startswith("features/")}
    report = load_weights(dst, tmp_path / "base.w")
    assert sorted(report.missing) == sorted(head_before)
    p = dst.parameters()
    assert all(np.array_equal(p[k], head_before[k]) for k in head_before)
    assert np.array_equal(p["features/block1_conv/weight"],
                          src.parameters()["features/block1_conv/weight"].astype(np.float32))


def _snapshot(m):
    return {k: v.copy() for k, v in m.parameters().items()}


def test_weights_corrupt_magic(tmp_path):
    m = _model()
    save_weights(m, tmp_path / "a.w")
    data = bytearray((tmp_path / "a.w").read_bytes())
    data[0:4] = b"XXXX"
    (tmp_path / "a.w").write_bytes(bytes(data))
    target = _model(seed=4)
    before = _snapshot(target)
    with pytest.raises(WeightFileError):
        load_weights(target, tmp_path / "a.w")
    after = target.parameters()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_crc_detects_every_single_bit_flip():
    m = build_small_cnn(8, 2, widths=(2,), head_width=2).initialize(0)
    data = encode_weights(m.parameters())
    for i in range(len(data) * 8):
        flipped = bytearray(data)
        flipped[i // 8] ^= 1 << (i % 8)
        with pytest.raises(WeightFileError):
            decode_weights(bytes(flipped))


def test_truncated_file():
    data = encode_weights({"a": np.ones((2, 3))})
    for cut in (3, 10, len(data) - 5, len(data) - 1):
        with pytest.raises(WeightFileError):
            decode_weights(data[:cut])


def test_encode_layout():
    data = encode_weights({"w": np.array([[1.5, -2.0]])})
    assert data[:4] == b"TMCW"
    assert data[4:10] == (1).to_bytes(2, "little") + (1).to_bytes(4, "little")
    assert data[10:12] == (1).to_bytes(2, "little") and data[12:13] == b"w"
    assert data[13] == 2
    assert np.frombuffer(data[22:30], "<f4").tolist() == [1.5, -2.0]


def test_wrong_architecture(tmp_path):
    save_weights(_model(), tmp_path / "a.w")
    other = build_small_cnn(16, 3, widths=(4, 8)).initialize(0)
    before = _snapshot(other)
    with pytest.raises(WeightMismatchError, match="shape mismatch features/block1_conv/weight"):
        load_weights(other, tmp_path / "a.w")
    assert all(np.array_equal(before[k], other.parameters()[k]) for k in before)
    report = load_weights(other, tmp_path / "a.w", allow_partial=True)
    assert "features/block1_conv/weight" in report.skipped
