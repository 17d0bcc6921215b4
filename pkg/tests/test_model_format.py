import numpy as np
import pytest

from anybcq import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    FileFormatError,
    QuantConfig,
    TruncatedError,
    build_multiprecision,
    deserialize,
    footprint,
    random_gaussian,
    serialize,
)
from anybcq.model_format import (
    container_overhead_bytes,
    model_footprint,
    render_footprint_kv,
    render_footprint_text,
)


@pytest.fixture
def model():
    w = random_gaussian(8, 48, seed=4)
    return build_multiprecision(w, 2, 4, QuantConfig(group_size=16, mode="asymmetric", cycles=2))


def test_roundtrip_bit_exact(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    back = deserialize(path)
    assert back == model
    assert back.bitplanes.tobytes() == model.bitplanes.tobytes()
    for p in model.precisions:
        assert back.scale_sets[p].alpha.tobytes() == model.scale_sets[p].alpha.tobytes()
        assert back.scale_sets[p].offset.tobytes() == model.scale_sets[p].offset.tobytes()


def test_half_width_storage(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path, scale_width=2)
    back = deserialize(path)
    for p in model.precisions:
        want = model.scale_sets[p].alpha.astype(np.float16).astype(np.float32)
        assert np.array_equal(back.scale_sets[p].alpha, want)


def test_bad_magic(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        deserialize(path)


def test_bad_version(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(BadVersionError):
        deserialize(path)


def test_truncated_mid_plane(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    raw = path.read_bytes()
    overhead = container_overhead_bytes(path)
    path.write_bytes(raw[: overhead + model.bitplanes.plane_bytes() // 2])
    with pytest.raises(TruncatedError):
        deserialize(path)


def test_corrupted_payload_fails_checksum(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    raw = bytearray(path.read_bytes())
    raw[container_overhead_bytes(path) + 3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        deserialize(path)


def test_trailing_garbage_rejected(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FileFormatError):
        deserialize(path)


def test_file_size_matches_footprint(tmp_path, model):
    path = tmp_path / "m.abcq"
    serialize(model, path, scale_width=4)
    report = model_footprint(model, scale_width=4)
    assert path.stat().st_size == report.shared_total + container_overhead_bytes(path)
    serialize(model, path, scale_width=2)
    report2 = model_footprint(model, scale_width=2)
    assert path.stat().st_size == report2.shared_total + container_overhead_bytes(path)


# ---------------------------------------------------------------------------
# footprint arithmetic
# ---------------------------------------------------------------------------

def test_direct_formula():
    # 1e9 weights, 16-bit scales, symmetric, p=2
    rep = footprint(rows=78_125, cols=12_800, group_size=128, p_lo=2, p_hi=2,
                    mode="symmetric", scale_width=2)
    row = rep.per_precision[0]
    assert row.binary_bytes == 78_125 * (12_800 // 32) * 4 * 2  # 0.25 GB packed
    assert row.binary_bytes == 250_000_000
    assert row.scale_bytes == 78_125 * (12_800 // 128) * 2 * 2  # 31.25 MB
    assert row.scale_bytes == 31_250_000


def test_totals_are_additive():
    rep = footprint(64, 256, 64, 2, 4, "asymmetric", 2)
    for row in rep.per_precision:
        assert row.total_bytes == row.scale_bytes + row.binary_bytes
    assert rep.multi_model_total == sum(r.total_bytes for r in rep.per_precision)
    assert rep.shared_total == rep.shared_binary_bytes + rep.shared_scale_bytes


def test_sharing_bound():
    rep = footprint(64, 256, 64, 2, 4, "symmetric", 2)
    assert rep.shared_total < rep.multi_model_total
    single = footprint(64, 256, 64, 3, 3, "symmetric", 2)
    assert single.shared_total == single.multi_model_total


def test_offset_bytes_counted_in_asymmetric():
    sym = footprint(32, 128, 32, 2, 3, "symmetric", 2)
    asym = footprint(32, 128, 32, 2, 3, "asymmetric", 2)
    per_set = 32 * 4 * 2  # rows * groups * width
    for s_row, a_row in zip(sym.per_precision, asym.per_precision):
        assert a_row.scale_bytes - s_row.scale_bytes == per_set
        assert a_row.binary_bytes == s_row.binary_bytes


def test_ragged_group_count():
    rep = footprint(4, 100, 32, 1, 1, "symmetric", 2)
    assert rep.per_precision[0].scale_bytes == 4 * 4 * 1 * 2  # ceil(100/32) = 4 groups


def test_renderings_contain_all_rows():
    rep = footprint(8, 64, 32, 2, 4, "symmetric", 2)
    text = render_footprint_text(rep)
    assert "BCQ2" in text and "BCQ4" in text
    assert "Multi-model" in text and "Proposed" in text
    kv = render_footprint_kv(rep)
    assert f"shared.total_bytes={rep.shared_total}" in kv
    assert f"multi_model.total_bytes={rep.multi_model_total}" in kv
