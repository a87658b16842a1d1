import numpy as np
import pytest
from scipy import ndimage

from esoseg.phantom import (
    PhantomConfig,
    generate_dataset,
    generate_phantom,
    read_manifest,
)
from esoseg.volume import read_volume


@pytest.fixture(scope="module")
def default_pair():
    return generate_phantom(PhantomConfig(seed=11))


class TestGeneration:
    def test_deterministic(self):
        a_ct, a_mask = generate_phantom(PhantomConfig(seed=5))
        b_ct, b_mask = generate_phantom(PhantomConfig(seed=5))
        assert a_ct == b_ct and a_mask == b_mask
        c_ct, _ = generate_phantom(PhantomConfig(seed=6))
        assert not np.array_equal(a_ct.data, c_ct.data)

    def test_shapes_and_kinds(self, default_pair):
        ct, mask = default_pair
        assert ct.dims == (64, 64, 48) and mask.dims == (64, 64, 48)
        assert ct.spacing == (1.0, 1.0, 3.0)
        assert ct.kind == "HU" and mask.kind == "mask"

    def test_hu_is_integral_and_clipped(self, default_pair):
        ct, _ = default_pair
        assert np.all(ct.data == np.rint(ct.data))
        assert ct.data.min() >= -1000 and ct.data.max() <= 2000

    def test_tube_spans_every_slice(self, default_pair):
        _, mask = default_pair
        per_slice = mask.data.sum(axis=(0, 1))
        assert np.all(per_slice > 0)

    def test_tube_is_6_connected(self):
        for seed in range(5):
            _, mask = generate_phantom(PhantomConfig(seed=seed))
            st = ndimage.generate_binary_structure(3, 1)
            _, n = ndimage.label(mask.data > 0, structure=st)
            assert n == 1, seed

    def test_slice_areas_match_radius_range(self, default_pair):
        _, mask = default_pair
        cfg = PhantomConfig()
        areas = mask.data.sum(axis=(0, 1))  # voxels of 1 mm^2
        r = np.sqrt(areas / np.pi)
        assert r.min() >= cfg.radius_range_mm[0] - 1.0
        assert r.max() <= cfg.radius_range_mm[1] + 1.0

    def test_tissue_hu_distribution(self):
        ct, mask = generate_phantom(PhantomConfig(seed=3, air_pocket_prob=0.0))
        inside = ct.data[mask.data == 1.0]
        assert abs(inside.mean() - 30.0) < 3.0
        assert abs(inside.std() - np.hypot(15.0, 4.0)) < 2.0

    def test_air_pockets_present_when_forced(self):
        ct, mask = generate_phantom(PhantomConfig(seed=3, air_pocket_prob=1.0))
        inside = ct.data[mask.data == 1.0]
        assert (inside < -500).sum() > 0

    def test_distractors_leave_mask_clean(self):
        # distractor structures are background: tissue-like HU may appear
        # outside the mask, but the mask itself is the single true tube
        ct, mask = generate_phantom(PhantomConfig(seed=9))
        outside_tissueish = ((np.abs(ct.data - 15.0) < 30.0) & (mask.data == 0)).sum()
        assert outside_tissueish > 100  # the distractor tube exists

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PhantomConfig(dims=(16, 64, 48))
        with pytest.raises(ValueError):
            PhantomConfig(radius_range_mm=(0.0, 8.0))


class TestDataset:
    def test_write_and_read_manifest(self, tmp_path):
        cfg = PhantomConfig(dims=(32, 32, 8))
        manifest = generate_dataset(cfg, 3, 100, str(tmp_path))
        pairs = read_manifest(manifest)
        assert len(pairs) == 3
        for ct_path, mask_path in pairs:
            ct = read_volume(ct_path)
            mask = read_volume(mask_path)
            assert ct.dims == (32, 32, 8)
            assert mask.kind == "mask"
        # seeds in the manifest line up with direct generation
        ct0 = read_volume(pairs[0][0])
        want, _ = generate_phantom(PhantomConfig(dims=(32, 32, 8), seed=100))
        assert ct0 == want

    def test_bad_n(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(PhantomConfig(), 0, 0, str(tmp_path))

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("\n")
        with pytest.raises(ValueError):
            read_manifest(str(path))
