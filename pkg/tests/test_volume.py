import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tileseg.volume import (
    CodecError,
    LabelMap,
    Volume3D,
    VolumeIOError,
    coords_from_index,
    linear_index,
    load_labels,
    load_volume,
    neighbors6,
    rle_apply,
    rle_decode,
    rle_encode,
    save_labels,
    save_volume,
)

small_dims = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


def test_linear_index_known_values():
    # hand-computed: 1 + 4*(2 + 4*3) = 57
    assert linear_index((4, 4, 4), 1, 2, 3) == 57
    assert linear_index((4, 4, 4), 0, 0, 0) == 0
    assert linear_index((4, 4, 4), 3, 3, 3) == 63
    # x varies fastest
    assert linear_index((3, 5, 7), 1, 0, 0) == 1
    assert linear_index((3, 5, 7), 0, 1, 0) == 3
    assert linear_index((3, 5, 7), 0, 0, 1) == 15


def test_linear_index_bounds():
    with pytest.raises(IndexError):
        linear_index((2, 2, 2), 2, 0, 0)
    with pytest.raises(IndexError):
        linear_index((2, 2, 2), 0, -1, 0)
    with pytest.raises(IndexError):
        coords_from_index((2, 2, 2), 8)


@given(small_dims, st.data())
def test_index_round_trip(dims, data):
    nx, ny, nz = dims
    x = data.draw(st.integers(0, nx - 1))
    y = data.draw(st.integers(0, ny - 1))
    z = data.draw(st.integers(0, nz - 1))
    idx = linear_index(dims, x, y, z)
    assert coords_from_index(dims, idx) == (x, y, z)


@given(small_dims)
def test_index_is_bijection(dims):
    nx, ny, nz = dims
    seen = {linear_index(dims, x, y, z) for z in range(nz) for y in range(ny) for x in range(nx)}
    assert seen == set(range(nx * ny * nz))


def test_neighbors6_order_and_bounds():
    dims = (3, 3, 3)
    center = linear_index(dims, 1, 1, 1)
    assert neighbors6(dims, center) == [
        linear_index(dims, 0, 1, 1),
        linear_index(dims, 2, 1, 1),
        linear_index(dims, 1, 0, 1),
        linear_index(dims, 1, 2, 1),
        linear_index(dims, 1, 1, 0),
        linear_index(dims, 1, 1, 2),
    ]
    corner = linear_index(dims, 0, 0, 0)
    assert neighbors6(dims, corner) == [
        linear_index(dims, 1, 0, 0),
        linear_index(dims, 0, 1, 0),
        linear_index(dims, 0, 0, 1),
    ]


def test_neighbors6_single_voxel():
    assert neighbors6((1, 1, 1), 0) == []


@given(small_dims, st.data())
def test_neighbors6_symmetric(dims, data):
    n = dims[0] * dims[1] * dims[2]
    idx = data.draw(st.integers(0, n - 1))
    for nb in neighbors6(dims, idx):
        assert idx in neighbors6(dims, nb)


def test_rle_known_example():
    m = LabelMap((6, 1, 1), np.array([0, 0, 5, 5, 5, 0], dtype=np.uint32))
    assert rle_encode(m) == [(0, 2, 0), (2, 3, 5), (5, 1, 0)]


def test_rle_uniform_map_is_one_run():
    m = LabelMap((4, 2, 1), np.full(8, 7, dtype=np.uint32))
    assert rle_encode(m) == [(0, 8, 7)]


def test_rle_decode_fill_and_partial():
    m = rle_decode([(2, 3, 9)], (8, 1, 1))
    assert m.labels.tolist() == [0, 0, 9, 9, 9, 0, 0, 0]


def test_rle_rejects_bad_runs():
    with pytest.raises(CodecError):
        rle_decode([(0, 0, 1)], (4, 1, 1))
    with pytest.raises(CodecError):
        rle_decode([(2, 2, 1), (1, 2, 2)], (8, 1, 1))
    with pytest.raises(CodecError):
        rle_decode([(0, 9, 1)], (4, 2, 1))
    with pytest.raises(CodecError):
        rle_decode([(0, 1, -3)], (4, 1, 1))


def test_rle_apply_overlays_without_mutating():
    base = LabelMap((8, 1, 1), np.zeros(8, dtype=np.uint32))
    out = rle_apply(base, [(1, 2, 4), (6, 1, 2)])
    assert base.labels.tolist() == [0] * 8
    assert out.labels.tolist() == [0, 4, 4, 0, 0, 0, 2, 0]


@settings(max_examples=60)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60))
def test_rle_round_trip_and_canonical(flat):
    dims = (len(flat), 1, 1)
    m = LabelMap(dims, np.array(flat, dtype=np.uint32))
    runs = rle_encode(m)
    # canonical form: sorted, gap-free, no adjacent runs share a label
    assert runs[0][0] == 0
    for (s0, l0, v0), (s1, _, v1) in zip(runs, runs[1:]):
        assert s0 + l0 == s1
        assert v0 != v1
    assert sum(r[1] for r in runs) == len(flat)
    back = rle_decode(runs, dims)
    np.testing.assert_array_equal(back.labels, m.labels)
    assert rle_encode(back) == runs


def test_volume_validates_shape_and_dtype():
    with pytest.raises(ValueError):
        Volume3D((2, 2, 2), np.zeros(7, dtype=np.uint8))
    with pytest.raises(ValueError):
        Volume3D((2, 2, 2), np.zeros(8, dtype=np.float32))
    with pytest.raises(ValueError):
        Volume3D((0, 2, 2), np.zeros(0, dtype=np.uint8))
    v = Volume3D((2, 2, 2), np.arange(8, dtype=np.uint16))
    assert v.size == 8


def test_as_3d_layout():
    v = Volume3D((3, 2, 1), np.arange(6, dtype=np.uint8))
    grid = v.as_3d()
    assert grid.shape == (1, 2, 3)
    assert grid[0, 1, 2] == v.values[linear_index((3, 2, 1), 2, 1, 0)]


def test_volume_io_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    v = Volume3D((5, 4, 3), rng.integers(0, 65535, 60, dtype=np.uint16), spacing=(1.0, 1.0, 2.5))
    save_volume(tmp_path / "vol", v)
    assert (tmp_path / "vol.json").exists() and (tmp_path / "vol.raw").exists()
    back = load_volume(tmp_path / "vol")
    assert back.dims == v.dims
    assert back.spacing == v.spacing
    assert back.values.dtype == np.uint16
    np.testing.assert_array_equal(back.values, v.values)


def test_volume_io_u8_blob_bytes(tmp_path):
    v = Volume3D((2, 2, 1), np.array([1, 2, 3, 4], dtype=np.uint8))
    save_volume(tmp_path / "v", v)
    assert (tmp_path / "v.raw").read_bytes() == bytes([1, 2, 3, 4])


def test_labels_io_round_trip(tmp_path):
    m = LabelMap((4, 3, 2), np.arange(24, dtype=np.uint32) * 100000)
    save_labels(tmp_path / "lab", m)
    back = load_labels(tmp_path / "lab")
    np.testing.assert_array_equal(back.labels, m.labels)
    # u32 little-endian on disk
    assert len((tmp_path / "lab.raw").read_bytes()) == 24 * 4


def test_load_rejects_mismatched_blob(tmp_path):
    v = Volume3D((2, 2, 2), np.zeros(8, dtype=np.uint8))
    save_volume(tmp_path / "v", v)
    (tmp_path / "v.raw").write_bytes(b"\x00" * 7)
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "v")


def test_load_rejects_wrong_dtype_class(tmp_path):
    m = LabelMap((2, 2, 2), np.zeros(8, dtype=np.uint32))
    save_labels(tmp_path / "m", m)
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "m")  # u32 is not an intensity dtype


def test_load_missing_header(tmp_path):
    with pytest.raises(VolumeIOError):
        load_volume(tmp_path / "nope")


def test_rle_diff_worked_example():
    from tileseg.volume import rle_diff

    old = np.array([1, 1, 2, 2, 3, 3], dtype=np.uint32)
    new = np.array([1, 5, 5, 2, 4, 4], dtype=np.uint32)
    runs = rle_diff(old, new)
    assert runs == [(1, 2, 5), (4, 2, 4)]
    assert rle_diff(old, old) == []
    with pytest.raises(ValueError):
        rle_diff(old, new[:4])


@given(
    st.integers(1, 40).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(0, 3), min_size=n, max_size=n),
            st.lists(st.integers(0, 3), min_size=n, max_size=n),
        )
    )
)
def test_rle_diff_replays_and_is_minimal(pair):
    from tileseg.volume import rle_diff

    old = np.array(pair[0], dtype=np.uint32)
    new = np.array(pair[1], dtype=np.uint32)
    runs = rle_diff(old, new)
    got = old.copy()
    for start, length, label in runs:
        got[start : start + length] = label
    assert np.array_equal(got, new)
    covered = set()
    for start, length, label in runs:
        for i in range(start, start + length):
            assert old[i] != new[i]  # only real changes are mentioned
            assert new[i] == label
            covered.add(i)
    assert covered == set(np.flatnonzero(old != new).tolist())
