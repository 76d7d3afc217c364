import numpy as np
import pytest
import tifffile
from hypothesis import given, settings, strategies as st

from settlemap.errors import ContractError, DomainError, RasterFormatError
from settlemap.grid import (
    GeoTransform,
    Grid,
    TemporalStack,
    downsample_percent,
    read_grid,
    read_mask,
    resample_nearest,
    write_grid,
)

from conftest import DEFAULT_TRANSFORM, make_grid


class TestGeoTransform:
    def test_pixel_sizes_must_be_positive(self):
        with pytest.raises(ContractError):
            GeoTransform(0, 0, 0.0, 1.0)
        with pytest.raises(ContractError):
            GeoTransform(0, 0, 1.0, -1.0)

    def test_origin_is_upper_left_corner(self):
        tr = GeoTransform(10.0, 50.0, 0.5, 0.25)
        assert tr.pixel_center(0, 0) == (10.25, 49.875)
        assert tr.index_of(10.25, 49.875) == (0, 0)
        assert tr.index_of(11.9, 49.1) == (3, 3)

    def test_bounds(self):
        tr = GeoTransform(10.0, 50.0, 0.5, 0.5)
        assert tr.bounds(4, 2) == (10.0, 49.0, 12.0, 50.0)


class TestGrid:
    def test_rejects_non_2d(self):
        with pytest.raises(ContractError):
            Grid(np.zeros(4), DEFAULT_TRANSFORM)

    def test_rejects_nan_without_nan_nodata(self):
        with pytest.raises(ContractError):
            make_grid([[1.0, np.nan]])
        with pytest.raises(ContractError):
            make_grid([[1.0, np.nan]], nodata=-9999)

    def test_rejects_inf(self):
        with pytest.raises(ContractError):
            make_grid([[1.0, np.inf]], nodata=np.nan)

    def test_values_locked_read_only(self):
        grid = make_grid([[1.0, 2.0]])
        with pytest.raises(ValueError):
            grid.values[0, 0] = 5.0

    def test_valid_mask_variants(self):
        assert make_grid([[1, 2]]).valid_mask.all()
        grid = make_grid([[1.0, -9.0]], nodata=-9.0)
        assert grid.valid_mask.tolist() == [[True, False]]
        grid = make_grid([[1.0, np.nan]], nodata=np.nan)
        assert grid.valid_mask.tolist() == [[True, False]]

    def test_filled(self):
        grid = make_grid([[1.0, -9.0]], nodata=-9.0)
        out = grid.filled(0.0)
        assert out.tolist() == [[1.0, 0.0]]


class TestRoundTrips:
    @pytest.mark.parametrize("suffix", [".tif", ".asc"])
    def test_float_roundtrip_bit_identical(self, tmp_path, suffix):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((7, 5))
        values[0, 0] = np.nan
        grid = make_grid(values, nodata=np.nan)
        path = tmp_path / f"g{suffix}"
        write_grid(grid, path, encoding="float")
        back = read_grid(path)
        assert np.array_equal(back.values, values, equal_nan=True)
        assert back.transform == grid.transform

    def test_ascii_identity_grid(self, tmp_path):
        path = tmp_path / "ones.asc"
        path.write_text(
            "ncols 3\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n"
            "1.0 1.0 1.0\n1.0 1.0 1.0\n1.0 1.0 1.0\n"
        )
        grid = read_grid(path)
        assert grid.shape == (3, 3)
        assert (grid.values == 1.0).all()

    def test_handauthored_nodata_fixture(self, tmp_path):
        path = tmp_path / "nd.asc"
        path.write_text(
            "ncols 2\nnrows 2\nxllcorner 10\nyllcorner 49\ncellsize 0.5\n"
            "NODATA_value -9999\n-9999 4\n5 6\n"
        )
        grid = read_grid(path)
        assert grid.nodata == -9999
        assert not grid.valid_mask[0, 0]
        assert grid.valid_mask[0, 1]
        assert grid.transform == GeoTransform(10.0, 50.0, 0.5, 0.5)

    def test_binary_mask_stores_0_and_255(self, tmp_path):
        mask = make_grid([[0, 1], [1, 0]], dtype=np.uint8)
        path = tmp_path / "m.tif"
        write_grid(mask, path, encoding="binary-mask")
        raw = tifffile.imread(path)
        assert raw.dtype == np.uint8
        assert raw.tolist() == [[0, 255], [255, 0]]
        back = read_mask(path)
        assert back.values.tolist() == [[0, 1], [1, 0]]

    def test_all_zero_mask(self, tmp_path):
        mask = make_grid(np.zeros((3, 3)), dtype=np.uint8)
        path = tmp_path / "z.tif"
        write_grid(mask, path, encoding="binary-mask")
        assert (tifffile.imread(path) == 0).all()

    def test_percent_encoding_stores_integers(self, tmp_path):
        grid = make_grid([[25.0, 99.6], [0.0, 100.0]])
        path = tmp_path / "p.tif"
        write_grid(grid, path, encoding="percent")
        raw = tifffile.imread(path)
        assert raw.tolist() == [[25, 100], [0, 100]]

    def test_percent_nodata_uses_255(self, tmp_path):
        grid = make_grid([[25.0, np.nan]], nodata=np.nan)
        path = tmp_path / "p.tif"
        write_grid(grid, path, encoding="percent")
        back = read_grid(path)
        assert back.nodata == 255
        assert not back.valid_mask[0, 1]

    def test_binary_encoding_rejects_non_binary(self, tmp_path):
        with pytest.raises(ContractError):
            write_grid(make_grid([[0.5]]), tmp_path / "x.tif", encoding="binary-mask")

    def test_percent_encoding_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ContractError):
            write_grid(make_grid([[101.0]]), tmp_path / "x.tif", encoding="percent")

    def test_unknown_encoding(self, tmp_path):
        with pytest.raises(ContractError):
            write_grid(make_grid([[1.0]]), tmp_path / "x.tif", encoding="rle")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_grid(tmp_path / "absent.tif")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.asc"
        path.write_text("this is not a raster\n")
        with pytest.raises(RasterFormatError):
            read_grid(path)

    def test_multiband_tiff_rejected(self, tmp_path):
        path = tmp_path / "rgb.tif"
        tifffile.imwrite(path, np.zeros((4, 4, 3), dtype=np.uint8), photometric="rgb")
        with pytest.raises(RasterFormatError):
            read_grid(path)

    def test_ascii_requires_square_pixels(self, tmp_path):
        grid = Grid(np.ones((2, 2)), GeoTransform(0, 0, 1.0, 2.0), None)
        with pytest.raises(RasterFormatError):
            write_grid(grid, tmp_path / "x.asc")

    def test_geotiff_deflate_compressed(self, tmp_path):
        path = tmp_path / "c.tif"
        write_grid(make_grid(np.zeros((64, 64))), path)
        with tifffile.TiffFile(path) as tif:
            assert tif.pages[0].compression.value == 8  # adobe deflate


class TestResampleNearest:
    def test_identity(self):
        grid = make_grid(np.arange(12.0).reshape(3, 4))
        out = resample_nearest(grid, grid.transform, 4, 3)
        assert np.array_equal(out.values, grid.values)

    def test_upsample_constant(self):
        tr = GeoTransform(0, 3, 3.0, 3.0)
        grid = Grid(np.array([[7.0]]), tr, None)
        out = resample_nearest(grid, GeoTransform(0, 3, 1.0, 1.0), 3, 3)
        assert (out.values == 7.0).all()

    def test_upsample_2x_block_replication(self):
        tr = GeoTransform(0, 2, 1.0, 1.0)
        grid = Grid(np.array([[1.0, 2.0], [3.0, 4.0]]), tr, None)
        out = resample_nearest(grid, GeoTransform(0, 2, 0.5, 0.5), 4, 4)
        expected = np.array([
            [1, 1, 2, 2],
            [1, 1, 2, 2],
            [3, 3, 4, 4],
            [3, 3, 4, 4],
        ], dtype=float)
        assert np.array_equal(out.values, expected)

    def test_nodata_propagates(self):
        tr = GeoTransform(0, 2, 1.0, 1.0)
        grid = Grid(np.array([[1.0, -9.0], [3.0, 4.0]]), tr, -9.0)
        out = resample_nearest(grid, GeoTransform(0, 2, 0.5, 0.5), 4, 4)
        assert (out.values[:2, 2:] == -9.0).all()

    def test_empty_intersection(self):
        grid = make_grid(np.ones((2, 2)))
        far = GeoTransform(120.0, -40.0, 0.001, 0.001)
        with pytest.raises(DomainError):
            resample_nearest(grid, far, 2, 2)

    def test_outside_coverage_becomes_nodata(self):
        tr = GeoTransform(0, 1, 1.0, 1.0)
        grid = Grid(np.array([[5.0]]), tr, None)
        out = resample_nearest(grid, GeoTransform(-1, 2, 1.0, 1.0), 3, 3)
        assert out.values[1, 1] == 5.0
        assert np.isnan(out.values[0, 0])

    def test_never_invents_values(self):
        rng = np.random.default_rng(0)
        grid = make_grid(rng.integers(0, 5, (6, 6)).astype(float))
        target = GeoTransform(10.0005, 49.9995, 0.0007, 0.0011)
        out = resample_nearest(grid, target, 9, 9)
        got = out.values[~np.isnan(out.values)] if out.nodata is not None else out.values
        assert np.isin(np.unique(got), np.unique(grid.values)).all()


class TestDownsamplePercent:
    def test_quarter_block(self):
        vals = np.zeros((10, 10), dtype=np.uint8)
        vals.flat[:25] = 1
        out = downsample_percent(make_grid(vals), 10)
        assert out.values.tolist() == [[25.0]]

    def test_saturation(self):
        out = downsample_percent(make_grid(np.ones((4, 4), dtype=np.uint8)), 4)
        assert out.values.tolist() == [[100.0]]

    def test_checkerboard(self):
        vals = np.indices((2, 2)).sum(axis=0) % 2
        out = downsample_percent(make_grid(vals.astype(np.uint8)), 2)
        assert out.values.tolist() == [[50.0]]

    def test_factor_below_2_rejected(self):
        with pytest.raises(ContractError):
            downsample_percent(make_grid(np.ones((4, 4), dtype=np.uint8)), 1)

    def test_requires_binary(self):
        with pytest.raises(ContractError):
            downsample_percent(make_grid(np.full((4, 4), 2.0)), 2)

    def test_partial_edge_blocks_use_valid_denominator(self):
        vals = np.ones((3, 3), dtype=np.uint8)
        out = downsample_percent(make_grid(vals), 2)
        # every block is fully settled over its real cells
        assert np.nanmax(out.values) == 100.0 and np.nanmin(out.values) == 100.0
        assert out.shape == (2, 2)

    def test_nodata_block_is_nodata(self):
        vals = np.ones((4, 4), dtype=np.float64)
        vals[:2, :2] = -9
        out = downsample_percent(make_grid(vals, nodata=-9), 2)
        assert np.isnan(out.values[0, 0])
        assert out.values[1, 1] == 100.0

    @given(
        st.integers(2, 6),
        st.integers(1, 8),
        st.integers(1, 8),
        st.integers(0, 10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_conservation_property(self, factor, bh, bw, seed):
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 2, (bh * factor, bw * factor)).astype(np.uint8)
        out = downsample_percent(make_grid(mask), factor)
        assert np.nanmin(out.values) >= 0.0 and np.nanmax(out.values) <= 100.0
        recovered = factor * factor * np.nansum(out.values) / 100.0
        assert recovered == pytest.approx(int(mask.sum()), abs=1e-9)

    def test_transform_scaled(self):
        out = downsample_percent(make_grid(np.ones((4, 4), dtype=np.uint8)), 2)
        assert out.transform.pixel_width == pytest.approx(2 * DEFAULT_TRANSFORM.pixel_width)


class TestTemporalStack:
    def test_sorted_by_timestamp(self):
        g1 = make_grid([[1.0]])
        g2 = make_grid([[2.0]])
        stack = TemporalStack(scenes=[g2, g1], timestamps=[5, 1])
        assert stack.timestamps == [1, 5]
        assert stack.scenes[0].values[0, 0] == 1.0

    def test_coregistration_required(self):
        with pytest.raises(ContractError):
            TemporalStack(scenes=[make_grid([[1.0]]), make_grid([[1.0, 2.0]])],
                          timestamps=[0, 1])

    def test_validity_excludes_observations(self):
        g = make_grid([[4.0]])
        valid = make_grid([[0]], dtype=np.uint8)
        stack = TemporalStack(scenes=[g], timestamps=[0], validity=[valid])
        assert np.isnan(stack.masked_values()).all()
