import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from mristage import imaging
from mristage.manifest import ClassLabel, SampleRecord
from tests.conftest import build_tree, write_png


class TestDecodeAndResize:
    def test_identity_geometry_passes_through(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(244, 244, 3), dtype=np.uint8)
        path = write_png(tmp_path / "x.png", arr)
        out = imaging.decode_and_resize(path)
        assert out.shape == (244, 244, 3)
        np.testing.assert_array_equal(out, arr.astype(np.float32))

    def test_grayscale_replicated_across_channels(self, tmp_path):
        gray = np.random.default_rng(1).integers(0, 256, size=(100, 128), dtype=np.uint8)
        path = tmp_path / "g.png"
        Image.fromarray(gray, mode="L").save(path)
        out = imaging.decode_and_resize(path)
        assert out.shape == (244, 244, 3)
        np.testing.assert_array_equal(out[..., 0], out[..., 1])
        np.testing.assert_array_equal(out[..., 0], out[..., 2])

    def test_undecodable_file_errors_with_path(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"this is not an image")
        with pytest.raises(imaging.ImageDecodeError, match="bad.png"):
            imaging.decode_and_resize(bad)

    def test_checkerboard_bilinear_blend_oracle(self):
        # 2x2 checkerboard upscaled to 4x4 with half-pixel centers:
        # output pixel (1,1) samples source coords (0.25, 0.25), so the
        # blend is (1-.25)(1-.25)*a + .25(1-.25)*b + (1-.25).25*c + .0625*d
        board = np.array([[0.0, 255.0], [255.0, 0.0]], dtype=np.float32)[..., None]
        board = np.repeat(board, 3, axis=2)
        out = imaging.resize_bilinear(board, 4, 4)
        a, b, c, d = 0.0, 255.0, 255.0, 0.0
        expected = 0.75 * 0.75 * a + 0.25 * 0.75 * b + 0.75 * 0.25 * c + 0.25 * 0.25 * d
        assert out[1, 1, 0] == pytest.approx(expected, abs=1e-4)

    def test_resize_matches_naive_loop_oracle(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 255, size=(5, 7, 3)).astype(np.float32)
        out = imaging.resize_bilinear(img, 11, 4)

        def naive(image, oh, ow):
            ih, iw = image.shape[:2]
            res = np.zeros((oh, ow, 3))
            for y in range(oh):
                for x in range(ow):
                    sy = min(max((y + 0.5) * ih / oh - 0.5, 0), ih - 1)
                    sx = min(max((x + 0.5) * iw / ow - 0.5, 0), iw - 1)
                    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                    y1, x1 = min(y0 + 1, ih - 1), min(x0 + 1, iw - 1)
                    wy, wx = sy - y0, sx - x0
                    res[y, x] = (
                        image[y0, x0] * (1 - wy) * (1 - wx)
                        + image[y0, x1] * (1 - wy) * wx
                        + image[y1, x0] * wy * (1 - wx)
                        + image[y1, x1] * wy * wx
                    )
            return res

        np.testing.assert_allclose(out, naive(img, 11, 4), atol=1e-4)


class TestNormalize:
    def test_bounds_and_midpoint(self):
        vals = np.array([0.0, 127.5, 255.0], dtype=np.float32)
        out = imaging.normalize(vals)
        np.testing.assert_array_equal(out, np.array([-1.0, 0.0, 1.0], dtype=np.float32))

    @given(st.lists(st.floats(min_value=0, max_value=255, width=32), min_size=1, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_denormalize_inverts(self, values):
        x = np.asarray(values, dtype=np.float32)
        np.testing.assert_allclose(imaging.denormalize(imaging.normalize(x)), x, atol=1e-5)

    def test_output_range(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 255, size=(10, 10, 3)).astype(np.float32)
        out = imaging.normalize(x)
        assert out.min() >= -1.0 and out.max() <= 1.0


class TestOneHot:
    def test_index_2_of_4(self):
        np.testing.assert_array_equal(imaging.one_hot(2, 4), [0, 0, 1, 0])

    def test_degenerate_single_class(self):
        np.testing.assert_array_equal(imaging.one_hot(0, 1), [1.0])

    def test_all_indices_form_identity(self):
        rows = np.stack([imaging.one_hot(i, 4) for i in range(4)])
        np.testing.assert_array_equal(rows, np.eye(4, dtype=np.float32))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            imaging.one_hot(4, 4)
        with pytest.raises(ValueError):
            imaging.one_hot(-1, 4)


class TestAugment:
    def asym_image(self):
        return np.arange(27, dtype=np.float32).reshape(3, 3, 3)

    def test_identity_policy_is_bit_exact(self):
        policy = imaging.AugmentationPolicy(
            horizontal_flip=False, rotation_degrees=0, width_shift=0, height_shift=0, zoom=0
        )
        img = self.asym_image()
        out = imaging.augment(img, policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)

    def test_flip_reverses_columns_and_is_involution(self):
        img = self.asym_image()
        flipped = imaging.flip_horizontal(img)
        np.testing.assert_array_equal(flipped, img[:, ::-1])
        np.testing.assert_array_equal(imaging.flip_horizontal(flipped), img)

    def test_rotation_90_matches_hand_rotated_fixture(self):
        img = self.asym_image()
        out = imaging.rotate(img, 90.0)
        np.testing.assert_allclose(out, np.rot90(img, 1, axes=(0, 1)), atol=1e-6)

    def test_rotation_preserves_shape(self):
        out = imaging.rotate(self.asym_image(), 33.0)
        assert out.shape == (3, 3, 3)

    def test_deterministic_given_rng_state(self):
        policy = imaging.AugmentationPolicy(seed=5)
        img = np.random.default_rng(1).uniform(0, 255, size=(16, 16, 3)).astype(np.float32)
        a = imaging.augment(img, policy, np.random.default_rng(42))
        b = imaging.augment(img, policy, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            imaging.AugmentationPolicy(width_shift=0.7)
        with pytest.raises(ValueError):
            imaging.AugmentationPolicy(rotation_degrees=-1)


def records_for(root, per_class, num_classes=2, size=16):
    names = [chr(ord("A") + i) for i in range(num_classes)]
    build_tree(root, {n: per_class for n in names}, seed=0, size=size)
    from mristage import manifest as mf

    return mf.scan_dataset(root, "original")


class TestMakeBatches:
    def test_batch_count_is_ceiling(self, tmp_path):
        m = records_for(tmp_path, per_class=5)  # N=10
        batches = list(imaging.make_batches(m.records, 2, batch_size=4, input_size=16))
        assert [b.images.shape[0] for b in batches] == [4, 4, 2]

    def test_exact_single_batch(self, tmp_path):
        m = records_for(tmp_path, per_class=2)  # N=4
        batches = list(imaging.make_batches(m.records, 2, batch_size=4, input_size=16))
        assert len(batches) == 1

    def test_unshuffled_preserves_order(self, tmp_path):
        m = records_for(tmp_path, per_class=3)
        batches = list(imaging.make_batches(m.records, 2, batch_size=2, input_size=16))
        seen = [p for b in batches for p in b.paths]
        assert seen == [r.path for r in m.records]

    def test_unshuffled_deterministic(self, tmp_path):
        m = records_for(tmp_path, per_class=3)
        a = list(imaging.make_batches(m.records, 2, batch_size=4, input_size=16))
        b = list(imaging.make_batches(m.records, 2, batch_size=4, input_size=16))
        for ba, bb in zip(a, b):
            np.testing.assert_array_equal(ba.images, bb.images)
            np.testing.assert_array_equal(ba.labels, bb.labels)

    def test_shuffle_is_permutation_per_epoch(self, tmp_path):
        m = records_for(tmp_path, per_class=4)
        for epoch in range(3):
            batches = list(
                imaging.make_batches(m.records, 2, batch_size=3, shuffle=True, seed=1, epoch=epoch, input_size=16)
            )
            seen = sorted(str(p) for b in batches for p in b.paths)
            assert seen == sorted(str(r.path) for r in m.records)

    def test_shuffle_differs_between_epochs(self, tmp_path):
        m = records_for(tmp_path, per_class=8)

        def order(epoch):
            return [
                p
                for b in imaging.make_batches(
                    m.records, 2, batch_size=4, shuffle=True, seed=1, epoch=epoch, input_size=16
                )
                for p in b.paths
            ]

        assert order(0) != order(1)

    def test_batch_invariants(self, tmp_path):
        m = records_for(tmp_path, per_class=5)
        for batch in imaging.make_batches(m.records, 2, batch_size=4, input_size=16):
            assert batch.images.min() >= -1.0 and batch.images.max() <= 1.0
            assert batch.images.dtype == np.float32
            np.testing.assert_array_equal(batch.labels.sum(axis=1), np.ones(batch.labels.shape[0]))
            assert ((batch.labels == 0) | (batch.labels == 1)).all()

    def test_empty_records_error(self):
        with pytest.raises(ValueError, match="no samples"):
            list(imaging.make_batches([], 2))

    def test_batches_from_arrays_matches_order(self):
        images = np.random.default_rng(0).uniform(-1, 1, (7, 8, 8, 3)).astype(np.float32)
        labels = np.eye(4, dtype=np.float32)[np.arange(7) % 4]
        batches = list(imaging.batches_from_arrays(images, labels, batch_size=3))
        np.testing.assert_array_equal(np.concatenate([b.images for b in batches]), images)
        np.testing.assert_array_equal(np.concatenate([b.labels for b in batches]), labels)
