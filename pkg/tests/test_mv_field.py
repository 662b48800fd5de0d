import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvrate import (
    FlowFieldDense,
    MvField,
    VolumeLayout,
    assemble_volume,
    interpolate_missing,
    mv_to_dense_flow,
    parse_mv_sidecar,
    read_flo,
    ten_crop,
    write_flo,
    write_mv_sidecar,
)
from mvrate.errors import (
    BadMagic,
    CropOutOfBounds,
    DimensionMismatch,
    GridTooSmall,
    MvSidecarError,
    TemporalUnderflow,
    TruncatedPayload,
    VersionUnsupported,
    ZeroDimension,
)
from conftest import make_random_field


def full_field(dx, dy, frames=1, width=2, height=2):
    shape = (frames, height, width)
    return MvField(grid_width=width, grid_height=height,
                   present=np.ones(shape, dtype=bool),
                   dx=np.full(shape, dx, dtype=np.int16),
                   dy=np.full(shape, dy, dtype=np.int16))


@st.composite
def mv_fields(draw):
    width = draw(st.integers(1, 10))
    height = draw(st.integers(1, 10))
    frames = draw(st.integers(1, 4))
    n = frames * height * width
    present = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    dx = np.array(draw(st.lists(st.integers(-32768, 32767), min_size=n,
                                max_size=n)), dtype=np.int16)
    dy = np.array(draw(st.lists(st.integers(-32768, 32767), min_size=n,
                                max_size=n)), dtype=np.int16)
    shape = (frames, height, width)
    return MvField(grid_width=width, grid_height=height,
                   present=present.reshape(shape), dx=dx.reshape(shape),
                   dy=dy.reshape(shape))


class TestSidecarFormat:
    def test_header_echo(self):
        field = full_field(4, -4)
        parsed = parse_mv_sidecar(write_mv_sidecar(field))
        assert parsed.grid_width == 2
        assert parsed.grid_height == 2
        assert parsed.n_frames == 1
        assert parsed.present.all()
        assert (parsed.dx == 4).all()
        assert (parsed.dy == -4).all()

    def test_bad_magic(self):
        data = bytearray(write_mv_sidecar(full_field(0, 0)))
        data[:4] = b"XXXX"
        with pytest.raises(BadMagic):
            parse_mv_sidecar(bytes(data))

    def test_unsupported_version(self):
        data = bytearray(write_mv_sidecar(full_field(0, 0)))
        struct.pack_into("<H", data, 4, 9)
        with pytest.raises(VersionUnsupported):
            parse_mv_sidecar(bytes(data))

    def test_zero_dimension(self):
        data = bytearray(write_mv_sidecar(full_field(0, 0)))
        struct.pack_into("<H", data, 6, 0)
        with pytest.raises(ZeroDimension):
            parse_mv_sidecar(bytes(data))

    def test_truncated_payload(self):
        data = write_mv_sidecar(full_field(1, 1))
        with pytest.raises(TruncatedPayload):
            parse_mv_sidecar(data[:-3])

    def test_truncated_header(self):
        with pytest.raises(TruncatedPayload):
            parse_mv_sidecar(b"MVSC\x01\x00")

    def test_trailing_bytes_rejected(self):
        data = write_mv_sidecar(full_field(1, 1))
        with pytest.raises(MvSidecarError):
            parse_mv_sidecar(data + b"\x00")

    def test_wrong_block_size_rejected(self):
        data = bytearray(write_mv_sidecar(full_field(0, 0)))
        data[10] = 16
        with pytest.raises(MvSidecarError):
            parse_mv_sidecar(bytes(data))

    def test_absent_cells_parse_as_absent(self):
        shape = (1, 1, 2)
        field = MvField(grid_width=2, grid_height=1,
                        present=np.array([[[True, False]]]),
                        dx=np.full(shape, 7, dtype=np.int16),
                        dy=np.full(shape, -7, dtype=np.int16))
        parsed = parse_mv_sidecar(write_mv_sidecar(field))
        assert parsed.present.tolist() == [[[True, False]]]
        assert parsed.dx.tolist() == [[[7, 0]]]

    def test_round_trip_on_random_fields(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            field = make_random_field(rng)
            assert parse_mv_sidecar(write_mv_sidecar(field)) == field

    @settings(max_examples=60, deadline=None)
    @given(mv_fields())
    def test_round_trip_property(self, field):
        data = write_mv_sidecar(field)
        parsed = parse_mv_sidecar(data)
        assert parsed == field
        # canonical bytes survive a second pass untouched
        assert write_mv_sidecar(parsed) == data


class TestInterpolateMissing:
    def test_mean_of_two_neighbors(self):
        present = np.array([[[False, True],
                             [True, False]]])
        dx = np.array([[[0, 8], [0, 0]]], dtype=np.int16)
        dy = np.array([[[0, 0], [8, 0]]], dtype=np.int16)
        field = MvField(grid_width=2, grid_height=2, present=present,
                        dx=dx, dy=dy)
        out = interpolate_missing(field)
        # top-left has E=(8,0) and S=(0,8) -> mean (4,4)
        assert out.present[0, 0, 0]
        assert out.dx[0, 0, 0] == 4
        assert out.dy[0, 0, 0] == 4

    def test_single_neighbor_stays_absent(self):
        present = np.array([[[True, False, False]]])
        field = MvField(grid_width=3, grid_height=1, present=present,
                        dx=np.full((1, 1, 3), 8, dtype=np.int16),
                        dy=np.zeros((1, 1, 3), dtype=np.int16))
        out = interpolate_missing(field)
        assert not out.present[0, 0, 1]
        assert not out.present[0, 0, 2]

    def test_all_present_is_identity(self, rng):
        field = make_random_field(rng, present_prob=1.0)
        assert interpolate_missing(field) == field

    def test_ties_round_away_from_zero(self):
        # neighbors (0,0) and (1,-1): means 0.5 -> 1 and -0.5 -> -1
        present = np.array([[[True], [False], [True]]])
        dx = np.array([[[0], [0], [1]]], dtype=np.int16)
        dy = np.array([[[0], [0], [-1]]], dtype=np.int16)
        field = MvField(grid_width=1, grid_height=3, present=present,
                        dx=dx, dy=dy)
        out = interpolate_missing(field)
        assert out.dx[0, 1, 0] == 1
        assert out.dy[0, 1, 0] == -1

    def test_single_pass_uses_input_snapshot(self):
        # the filled second cell must not help the third within one call
        present = np.array([[[True], [True], [False], [False]]])
        ones = np.ones((1, 4, 1), dtype=np.int16)
        field = MvField(grid_width=1, grid_height=4,
                        present=present, dx=ones, dy=ones)
        out = interpolate_missing(field)
        assert not out.present[0, 2, 0]  # single present neighbor in input
        assert not out.present[0, 3, 0]

    def test_present_cells_never_modified(self, rng):
        for _ in range(50):
            field = make_random_field(rng)
            out = interpolate_missing(field)
            assert np.array_equal(out.dx[field.present],
                                  field.dx[field.present])
            assert np.array_equal(out.dy[field.present],
                                  field.dy[field.present])
            assert (out.present | ~field.present).all()

    def test_present_count_never_decreases(self, rng):
        for _ in range(50):
            field = make_random_field(rng)
            out = interpolate_missing(field)
            assert out.present.sum() >= field.present.sum()

    def test_underpopulated_neighborhoods_stay_absent(self, rng):
        for _ in range(30):
            field = make_random_field(rng, present_prob=0.3)
            out = interpolate_missing(field)
            filled = out.present & ~field.present
            counts = np.zeros(field.present.shape, dtype=int)
            p = field.present
            counts[:, 1:, :] += p[:, :-1, :]
            counts[:, :-1, :] += p[:, 1:, :]
            counts[:, :, 1:] += p[:, :, :-1]
            counts[:, :, :-1] += p[:, :, 1:]
            assert (counts[filled] >= 2).all()
            assert not (counts[(~field.present) & (counts < 2)]
                        & filled[(~field.present) & (counts < 2)]).any()


class TestTenCrop:
    def test_degenerate_grid_emits_ten(self, rng):
        field = make_random_field(rng, width=48, height=48, frames=1)
        crops = ten_crop(field, VolumeLayout.STACKED_3D, 48)
        assert len(crops) == 10
        assert all((c.x, c.y) == (0, 0) for c in crops)
        assert [c.flipped for c in crops] == [False] * 5 + [True] * 5

    def test_corner_and_center_origins(self, rng):
        field = make_random_field(rng, width=96, height=96, frames=1)
        crops = ten_crop(field, VolumeLayout.STACKED_3D, 48)
        origins = [(c.x, c.y) for c in crops[:5]]
        assert origins == [(0, 0), (48, 0), (0, 48), (48, 48), (24, 24)]

    def test_deterministic(self, rng):
        field = make_random_field(rng, width=30, height=40, frames=2)
        assert ten_crop(field, VolumeLayout.SPLIT_4D, 24) \
            == ten_crop(field, VolumeLayout.SPLIT_4D, 24)

    def test_grid_too_small(self, rng):
        field = make_random_field(rng, width=10, height=10, frames=1)
        with pytest.raises(GridTooSmall):
            ten_crop(field, VolumeLayout.SPLIT_4D, 24)


class TestAssembleVolume:
    def test_split_4d_shape(self, rng):
        field = make_random_field(rng, width=24, height=24, frames=4)
        volume = assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0),
                                 n=24, temporal_extent=160)
        assert volume.samples.shape == (24, 24, 2, 160)

    def test_stacked_3d_shape(self, rng):
        field = make_random_field(rng, width=48, height=48, frames=4)
        volume = assemble_volume(field, VolumeLayout.STACKED_3D, (0, 0),
                                 n=48, temporal_extent=60)
        assert volume.samples.shape == (48, 48, 120)

    def test_constant_field_centers_to_zero(self, rng):
        field = full_field(12, -6, frames=5, width=8, height=8)
        volume = assemble_volume(field, VolumeLayout.STACKED_3D, (0, 0),
                                 n=8, temporal_extent=5)
        assert np.abs(volume.samples).max() == 0.0

    def test_component_means_are_zero(self, rng):
        for layout in VolumeLayout:
            field = make_random_field(rng, width=12, height=12, frames=6,
                                      present_prob=0.7)
            volume = assemble_volume(field, layout, (2, 1), n=8,
                                     temporal_extent=16)
            if layout is VolumeLayout.SPLIT_4D:
                dx_mean = volume.samples[:, :, 0, :].mean()
                dy_mean = volume.samples[:, :, 1, :].mean()
            else:
                dx_mean = volume.samples[:, :, 0::2].mean()
                dy_mean = volume.samples[:, :, 1::2].mean()
            assert abs(dx_mean) < 1e-9
            assert abs(dy_mean) < 1e-9

    def test_temporal_looping(self):
        field = full_field(0, 0, frames=3, width=4, height=4)
        dx = np.zeros((3, 4, 4), dtype=np.int16)
        dx[0], dx[1], dx[2] = 1, 2, 3
        field = MvField(grid_width=4, grid_height=4,
                        present=np.ones((3, 4, 4), dtype=bool),
                        dx=dx, dy=np.zeros_like(dx))
        volume = assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0), n=4,
                                 temporal_extent=7)
        per_frame = volume.samples[0, 0, 0, :]
        raw = np.array([1, 2, 3, 1, 2, 3, 1], dtype=float)
        assert np.allclose(per_frame, raw - raw.mean())

    def test_padding_disabled_raises(self):
        field = full_field(0, 0, frames=3, width=4, height=4)
        with pytest.raises(TemporalUnderflow):
            assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0), n=4,
                            temporal_extent=7, pad_temporal=False)

    def test_crop_out_of_bounds(self):
        field = full_field(0, 0, frames=1, width=8, height=8)
        with pytest.raises(CropOutOfBounds):
            assemble_volume(field, VolumeLayout.SPLIT_4D, (2, 0), n=8,
                            temporal_extent=1)

    def test_flip_negates_dx_and_mirrors_columns(self):
        shape = (1, 4, 4)
        dx = np.tile(np.arange(4, dtype=np.int16) * 4, (4, 1))[None]
        field = MvField(grid_width=4, grid_height=4,
                        present=np.ones(shape, dtype=bool),
                        dx=dx, dy=np.zeros(shape, dtype=np.int16))
        plain = assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0), n=4,
                                temporal_extent=1)
        flipped = assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0), n=4,
                                  temporal_extent=1, flip=True)
        assert np.allclose(flipped.samples[:, :, 0, :],
                           -plain.samples[:, ::-1, 0, :])

    def test_flipped_constant_dx_changes_sign(self):
        # constant +4 everywhere: the flipped crop carries -4 pre-centering,
        # and centering makes both volumes identically zero
        field = full_field(4, 0, frames=2, width=6, height=6)
        interp = interpolate_missing(field)
        raw = interp.dx[:2, :4, :4]
        assert (raw == 4).all()
        flipped = assemble_volume(field, VolumeLayout.SPLIT_4D, (0, 0), n=4,
                                  temporal_extent=2, flip=True)
        assert np.abs(flipped.samples).max() == 0.0

    def test_absent_cells_contribute_zero(self):
        # 1x1 crop of an absent (uninterpolatable) cell: zero minus mean zero
        shape = (1, 1, 3)
        field = MvField(grid_width=3, grid_height=1,
                        present=np.zeros(shape, dtype=bool),
                        dx=np.zeros(shape, dtype=np.int16),
                        dy=np.zeros(shape, dtype=np.int16))
        volume = assemble_volume(field, VolumeLayout.SPLIT_4D, (1, 0), n=1,
                                 temporal_extent=1)
        assert volume.samples.ravel().tolist() == [0.0, 0.0]


class TestDenseFlow:
    def test_scale_and_sign(self):
        field = full_field(4, -8, frames=1, width=1, height=1)
        flow = mv_to_dense_flow(field, 0, 8, 8)
        assert flow.u.shape == (8, 8)
        assert np.allclose(flow.u, -1.0)
        assert np.allclose(flow.v, 2.0)

    def test_all_absent_gives_zero_flow(self):
        shape = (1, 2, 2)
        field = MvField(grid_width=2, grid_height=2,
                        present=np.zeros(shape, dtype=bool),
                        dx=np.zeros(shape, dtype=np.int16),
                        dy=np.zeros(shape, dtype=np.int16))
        flow = mv_to_dense_flow(field, 0, 16, 16)
        assert np.abs(flow.u).max() == 0.0
        assert np.abs(flow.v).max() == 0.0

    def test_two_block_layout(self):
        shape = (1, 1, 2)
        field = MvField(grid_width=2, grid_height=1,
                        present=np.ones(shape, dtype=bool),
                        dx=np.array([[[4, 0]]], dtype=np.int16),
                        dy=np.array([[[0, 4]]], dtype=np.int16))
        flow = mv_to_dense_flow(field, 0, 16, 8)
        assert np.allclose(flow.u[:, :8], -1.0)
        assert np.allclose(flow.u[:, 8:], 0.0)
        assert np.allclose(flow.v[:, :8], 0.0)
        assert np.allclose(flow.v[:, 8:], -1.0)

    def test_dimension_mismatch(self):
        field = full_field(0, 0, frames=1, width=2, height=2)
        with pytest.raises(DimensionMismatch):
            mv_to_dense_flow(field, 0, 15, 16)


class TestFloFormat:
    def test_round_trip(self, rng, tmp_path):
        u = rng.normal(size=(6, 9))
        v = rng.normal(size=(6, 9))
        flow = FlowFieldDense(width=9, height=6,
                              u=u.astype(np.float32).astype(np.float64),
                              v=v.astype(np.float32).astype(np.float64))
        path = tmp_path / "field.flo"
        write_flo(flow, path)
        loaded = read_flo(path)
        assert loaded.width == 9 and loaded.height == 6
        assert np.array_equal(loaded.u, flow.u)
        assert np.array_equal(loaded.v, flow.v)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(struct.pack("<fii", 1.0, 2, 2) + b"\x00" * 32)
        with pytest.raises(BadMagic):
            read_flo(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.flo"
        path.write_bytes(struct.pack("<fii", 202021.25, 4, 4) + b"\x00" * 10)
        with pytest.raises(TruncatedPayload):
            read_flo(path)
