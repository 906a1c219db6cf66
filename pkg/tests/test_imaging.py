import numpy as np
import pytest

from binlab import imaging
from binlab.errors import FormatError


class TestLoadSave:
    def test_load_rescales_8bit(self, tmp_path):
        from PIL import Image

        path = tmp_path / "tiny.png"
        Image.fromarray(np.array([[0, 255], [128, 64]], dtype=np.uint8)).save(path)
        img = imaging.load_image(path)
        np.testing.assert_allclose(
            img, [[0.0, 1.0], [128 / 255, 64 / 255]], rtol=0, atol=0
        )

    def test_all_black(self, tmp_path):
        from PIL import Image

        path = tmp_path / "black.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(path)
        assert imaging.load_image(path).max() == 0.0

    def test_truncated_file_is_format_error(self, tmp_path):
        from PIL import Image

        path = tmp_path / "broken.png"
        Image.fromarray(np.zeros((64, 64), dtype=np.uint8)).save(path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError):
            imaging.load_image(path)

    def test_garbage_file_is_format_error(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"this is not an image at all")
        with pytest.raises(FormatError):
            imaging.load_image(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            imaging.load_image(tmp_path / "absent.png")

    def test_color_preserved(self, tmp_path):
        from PIL import Image

        path = tmp_path / "color.png"
        arr = np.zeros((2, 2, 3), dtype=np.uint8)
        arr[0, 0] = (255, 0, 0)
        Image.fromarray(arr).save(path)
        img = imaging.load_image(path)
        assert img.shape == (2, 2, 3)
        np.testing.assert_allclose(img[0, 0], [1.0, 0.0, 0.0])

    def test_binary_roundtrip_dibco_convention(self, tmp_path):
        from PIL import Image

        binary = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        path = tmp_path / "bin.png"
        imaging.save_binary(path, binary)
        raw = np.asarray(Image.open(path))
        assert raw[0, 0] == 0 and raw[0, 1] == 255
        np.testing.assert_array_equal(imaging.load_binary(path), binary)


class TestGrayscale:
    def test_single_channel_identity(self, rng):
        img = rng.uniform(size=(5, 7))
        assert imaging.to_grayscale(img) is img or np.array_equal(
            imaging.to_grayscale(img), img
        )

    def test_white_maps_to_one(self):
        img = np.ones((2, 2, 3))
        np.testing.assert_allclose(imaging.to_grayscale(img), 1.0)

    def test_red_weight(self):
        img = np.zeros((1, 1, 3))
        img[0, 0, 0] = 1.0
        np.testing.assert_allclose(imaging.to_grayscale(img)[0, 0], 0.299)


class TestPatches:
    def test_exact_fit_single_patch(self, rng):
        img = rng.uniform(size=(256, 256))
        patches, grid = imaging.extract_patches(img, 256, 256)
        assert len(patches) == 1 and grid.anchors == ((0, 0),)

    def test_flush_border_anchors(self, rng):
        img = rng.uniform(size=(300, 300))
        patches, grid = imaging.extract_patches(img, 256, 256)
        assert len(patches) == 4
        assert grid.anchors == ((0, 0), (0, 44), (44, 0), (44, 44))

    def test_wide_image_two_patches(self, rng):
        img = rng.uniform(size=(256, 512))
        patches, _ = imaging.extract_patches(img, 256, 256)
        assert len(patches) == 2

    def test_bad_args(self, rng):
        img = rng.uniform(size=(32, 32))
        with pytest.raises(ValueError):
            imaging.extract_patches(img, 0, 4)
        with pytest.raises(ValueError):
            imaging.extract_patches(img, 4, -1)
        with pytest.raises(ValueError):
            imaging.extract_patches(img, 64, 32)

    def test_stitch_identity_single_patch(self, rng):
        img = rng.uniform(size=(16, 16))
        patches, grid = imaging.extract_patches(img, 16, 16)
        np.testing.assert_array_equal(imaging.stitch_patches(patches, grid), img)

    def test_stitch_averages_overlap(self):
        grid = imaging.PatchGrid(height=4, width=6, patch_size=4, stride=2,
                                 anchors=((0, 0), (0, 2)))
        out = imaging.stitch_patches([np.zeros((4, 4)), np.ones((4, 4))], grid)
        np.testing.assert_allclose(out[:, 2:4], 0.5)
        np.testing.assert_allclose(out[:, :2], 0.0)
        np.testing.assert_allclose(out[:, 4:], 1.0)

    def test_roundtrip_bit_identical(self, rng):
        # Overlap counts with stride = size are powers of two, so the
        # averaged reconstruction is exact in IEEE arithmetic.
        for shape in [(64, 64), (100, 77), (65, 130)]:
            img = rng.uniform(size=shape)
            patches, grid = imaging.extract_patches(img, 32, 32)
            out = imaging.stitch_patches(patches, grid)
            np.testing.assert_array_equal(out, img)

    def test_stitch_count_mismatch(self, rng):
        img = rng.uniform(size=(64, 64))
        patches, grid = imaging.extract_patches(img, 32, 32)
        with pytest.raises(ValueError):
            imaging.stitch_patches(patches[:-1], grid)


class TestRotations:
    def test_constant_patch(self):
        out = imaging.augment_rotations(np.full((4, 4), 0.25))
        assert len(out) == 4
        for rot in out:
            np.testing.assert_array_equal(rot, np.full((4, 4), 0.25))

    def test_quarter_turn_permutation(self):
        a, b, c, d = 0.1, 0.2, 0.3, 0.4
        patch = np.array([[a, b], [c, d]])
        out = imaging.augment_rotations(patch)
        np.testing.assert_array_equal(out[1], np.array([[b, d], [a, c]]))

    def test_half_turn_involution(self, rng):
        patch = rng.uniform(size=(8, 8))
        rot180 = imaging.augment_rotations(patch)[2]
        np.testing.assert_array_equal(imaging.augment_rotations(rot180)[2], patch)

    def test_pixel_multiset_preserved(self, rng):
        patch = rng.uniform(size=(6, 6))
        for rot in imaging.augment_rotations(patch):
            np.testing.assert_array_equal(np.sort(rot.ravel()), np.sort(patch.ravel()))

    def test_non_square_rejected(self, rng):
        with pytest.raises(ValueError):
            imaging.augment_rotations(rng.uniform(size=(4, 6)))


class TestMaskAndThreshold:
    def test_white_page_empty_mask(self):
        assert imaging.make_text_mask(np.ones((3, 3))).sum() == 0

    def test_black_page_full_mask(self):
        assert imaging.make_text_mask(np.zeros((3, 3))).sum() == 9

    def test_boundary_excluded_from_ink(self):
        mask = imaging.make_text_mask(np.array([[0.49, 0.5]]))
        assert mask[0, 0] == 1 and mask[0, 1] == 0

    def test_multichannel_rejected(self, rng):
        with pytest.raises(ValueError):
            imaging.make_text_mask(rng.uniform(size=(3, 3, 3)))

    def test_inverted_image_flips_labels_except_boundary(self, rng):
        img = rng.uniform(size=(8, 8))
        img[2, 3] = 0.5
        combined = imaging.make_text_mask(img) + imaging.make_text_mask(1.0 - img)
        # Complementary masks everywhere except exactly at the boundary,
        # which belongs to neither ink set.
        assert np.all(combined[img != 0.5] == 1)
        assert np.all(combined[img == 0.5] == 0)

    def test_threshold_binary_passthrough(self):
        binary = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(
            imaging.threshold_output(binary, 0.5), 1 - binary.astype(np.uint8)
        )

    def test_threshold_constants(self):
        assert imaging.threshold_output(np.full((2, 2), 0.6), 0.5).sum() == 0
        assert imaging.threshold_output(np.full((2, 2), 0.4), 0.5).sum() == 4

    def test_threshold_range_check(self):
        with pytest.raises(ValueError):
            imaging.threshold_output(np.zeros((2, 2)), 0.0)
        with pytest.raises(ValueError):
            imaging.threshold_output(np.zeros((2, 2)), 1.0)


class TestRangeInvariant:
    def test_operations_preserve_unit_range(self, rng):
        img = rng.uniform(size=(40, 40))
        patches, grid = imaging.extract_patches(img, 16, 8)
        stitched = imaging.stitch_patches(patches, grid)
        for out in [imaging.to_grayscale(img), stitched, *imaging.augment_rotations(img)]:
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_validate_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            imaging.validate_image(np.array([[1.5]]))
        with pytest.raises(ValueError):
            imaging.validate_image(np.array([[-0.1]]))
