import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlite.signal import (
    FormatError,
    IntegrityError,
    SegmentSet,
    discover_pairs,
    fft_views,
    fit_length,
    load_segment_set,
    make_views,
    normalize_views,
    patchify,
    save_segment_set,
    unpatchify,
)


def naive_dft(x):
    t = len(x)
    k = np.arange(t // 2 + 1)[:, None]
    n = np.arange(t)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * n / t)).sum(axis=1)


@pytest.fixture
def seg4():
    rng = np.random.default_rng(0)
    return SegmentSet(rng.standard_normal((4, 2, 400)), 200.0, ["a", "a", "b", "c"], "toy")


def test_round_trip_is_bitwise(tmp_path, seg4):
    save_segment_set(seg4, tmp_path / "pair")
    back = load_segment_set(tmp_path / "pair")
    assert back.segments.tobytes() == seg4.segments.tobytes()
    assert back.subject_ids == seg4.subject_ids
    assert back.dataset_id == "toy" and back.sample_rate_hz == 200.0
    again = load_segment_set(tmp_path / "pair")
    assert again.segments.tobytes() == back.segments.tobytes()


def test_container_layout(tmp_path, seg4):
    save_segment_set(seg4, tmp_path)
    raw = (tmp_path / "data.bin").read_bytes()
    assert raw[:6] == b"DLSEG\x00"
    assert struct.unpack("<HIII", raw[6:20]) == (1, 4, 2, 400)
    assert len(raw) == 20 + 4 * 2 * 400 * 4
    np.testing.assert_array_equal(np.frombuffer(raw[20:], "<f4").reshape(4, 2, 400), seg4.segments)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man) == {"dataset_id", "sample_rate_hz", "n", "channels", "samples", "subject_ids", "source_notes"}


def test_manifest_blob_mismatch(tmp_path):
    rng = np.random.default_rng(1)
    seg = SegmentSet(rng.standard_normal((10, 2, 20)), subject_ids=[str(i) for i in range(10)])
    save_segment_set(seg, tmp_path)
    raw = (tmp_path / "data.bin").read_bytes()
    (tmp_path / "data.bin").write_bytes(raw[: 20 + 9 * 2 * 20 * 4])
    with pytest.raises(IntegrityError):
        load_segment_set(tmp_path)


def test_manifest_header_disagree(tmp_path, seg4):
    save_segment_set(seg4, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["n"] = 10
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(IntegrityError):
        load_segment_set(tmp_path)


def test_bad_magic_and_version(tmp_path, seg4):
    save_segment_set(seg4, tmp_path)
    raw = bytearray((tmp_path / "data.bin").read_bytes())
    raw[6:8] = struct.pack("<H", 2)
    (tmp_path / "data.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_segment_set(tmp_path)
    raw[:6] = b"NOPE!\x00"
    (tmp_path / "data.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_segment_set(tmp_path)


def test_discover_pairs(tmp_path, seg4):
    save_segment_set(seg4, tmp_path / "b")
    save_segment_set(seg4, tmp_path / "a")
    assert discover_pairs(tmp_path) == [tmp_path / "a", tmp_path / "b"]
    assert discover_pairs(tmp_path / "a") == [tmp_path / "a"]


def test_four_seconds_at_200hz_gives_40_sample_patches():
    seg = SegmentSet(np.zeros((1, 1, int(4 * 200.0))) + np.arange(800.0), 200.0)
    assert seg.samples == 800
    views = make_views(seg.segments, 20)
    assert views.potential.shape == (1, 1, 20, 40)
    assert views.magnitude.shape == views.phase.shape == (1, 1, 20, 40)


@pytest.mark.parametrize("t,k0", [(64, 5), (400, 17), (101, 3)])
def test_single_tone(t, k0):
    x = np.cos(2 * np.pi * k0 * np.arange(t) / t)
    mag, _ = fft_views(x)
    assert np.argmax(mag) == k0
    assert mag[k0] == pytest.approx(t / 2, rel=1e-9)
    others = np.delete(mag, k0)
    assert others.max() < 1e-6 * t  # float64 rounding over t terms


def test_constant_signal_energy_in_dc():
    mag, _ = fft_views(np.full(50, 3.0))
    assert mag[0] == pytest.approx(150.0)
    assert mag[1:].max() < 1e-9


def test_fft_matches_naive_dft():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = int(rng.integers(2, 200))
        x = rng.standard_normal(t)
        mag, pha = fft_views(x)
        ref = naive_dft(x)
        assert len(mag) == t // 2 + 1
        assert np.abs(mag - np.abs(ref)).max() < 1e-5
        assert np.abs(mag * np.exp(1j * pha) - ref).max() < 1e-5


def test_fft_rejects_bad_input():
    with pytest.raises(ValueError):
        fft_views(np.ones(1))
    with pytest.raises(FloatingPointError):
        fft_views(np.array([1.0, np.nan, 2.0]))


def parseval_lhs_rhs(x):
    mag, _ = fft_views(x)
    t = len(x)
    two_sided = mag[0] ** 2 + 2 * (mag[1:] ** 2).sum()
    if t % 2 == 0:
        two_sided -= mag[-1] ** 2
    return (x**2).sum(), two_sided / t


@pytest.mark.parametrize("t", [2, 3, 64, 255, 512])
def test_parseval(t):
    x = np.random.default_rng(t).standard_normal(t)
    lhs, rhs = parseval_lhs_rhs(x)
    assert rhs == pytest.approx(lhs, rel=1e-4)


def test_view_invariants():
    rng = np.random.default_rng(4)
    b = make_views(rng.standard_normal((3, 2, 200)), 10, normalize=False)
    assert b.magnitude.min() >= 0
    assert np.abs(b.phase).max() <= np.pi
    assert b.num_patches * b.patch_len == 200


def test_normalize_per_channel():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 400)) * 7 + 2
    x[1, 2] = 4.0  # constant channel
    b = make_views(x, 20)
    for v in b.views():
        flat = v.reshape(2, 3, -1)
        assert np.abs(flat[0].mean(axis=-1)).max() < 1e-5
        assert np.abs(flat[0].std(axis=-1) - 1).max() < 1e-5
    np.testing.assert_array_equal(b.potential[1, 2], 0.0)


def test_normalize_idempotent():
    rng = np.random.default_rng(6)
    once = make_views(rng.standard_normal((2, 2, 100)), 5)
    twice = normalize_views(once)
    for a, b in zip(once.views(), twice.views()):
        assert np.abs(a - b).max() < 1e-4


def test_patchify_examples():
    x = np.arange(2 * 800.0).reshape(2, 800)
    p = patchify(x, 20)
    assert p.shape == (2, 20, 40)
    np.testing.assert_array_equal(p[1, 3], x[1, 120:160])
    np.testing.assert_array_equal(patchify(x, 1)[:, 0], x)
    with pytest.raises(ValueError):
        patchify(x, 0)
    with pytest.raises(ValueError):
        patchify(x, 7)


def test_fit_length_pads_or_truncates():
    assert fit_length(np.ones((1, 101)), 20).shape == (1, 100)
    padded = fit_length(np.ones((1, 115)), 20)
    assert padded.shape == (1, 120) and padded[0, 115:].sum() == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(1, 10))
def test_unpatchify_inverts_patchify(c, p, w):
    x = np.random.default_rng(c * 100 + p).standard_normal((c, p * w))
    np.testing.assert_array_equal(unpatchify(patchify(x, p)), x)
