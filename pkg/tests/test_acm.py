import numpy as np
import pytest

from esoseg.acm import (
    ACMConfig,
    Centerline,
    centerline_distance_map,
    fit_centerline,
    init_centerline,
    load_centerline,
    save_centerline,
)
from esoseg.volume import KIND_HU, KIND_PROBABILITY, Volume3D


def gaussian_tube_probmap(centers, dims=(24, 24, 8), sigma=2.5):
    """Probability map with a smooth in-plane bump at centers[z]."""
    nx, ny, nz = dims
    gx = np.arange(nx)[:, None]
    gy = np.arange(ny)[None, :]
    data = np.zeros(dims)
    for z in range(nz):
        cx, cy = centers[z]
        data[:, :, z] = np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * sigma**2))
    return Volume3D(data, (1.0, 1.0, 3.0), KIND_PROBABILITY)


class TestInit:
    def test_centroid_exact_on_point_mass(self):
        data = np.zeros((10, 10, 3))
        data[2, 7, 0] = 1.0
        data[5, 5, 1] = 1.0
        data[8, 1, 2] = 0.5
        pm = Volume3D(data, (1, 1, 1), KIND_PROBABILITY)
        c = init_centerline(pm)
        assert np.allclose(c.points, [[2, 7], [5, 5], [8, 1]])

    def test_empty_slices_inherit_nearest(self):
        data = np.zeros((10, 10, 4))
        data[3, 4, 1] = 1.0
        pm = Volume3D(data, (1, 1, 1), KIND_PROBABILITY)
        c = init_centerline(pm)
        assert np.allclose(c.points, [[3, 4]] * 4)

    def test_all_empty_falls_back_to_center(self):
        pm = Volume3D(np.zeros((9, 11, 2)), (1, 1, 1), KIND_PROBABILITY)
        c = init_centerline(pm)
        assert np.allclose(c.points, [[4.0, 5.0]] * 2)

    def test_requires_probability_volume(self):
        with pytest.raises(ValueError):
            init_centerline(Volume3D(np.zeros((4, 4, 4)), (1, 1, 1), KIND_HU))


class TestFit:
    def test_straight_tube_recovered_within_a_voxel(self):
        true = [(11.3, 12.6)] * 8
        pm = gaussian_tube_probmap(true)
        c = fit_centerline(pm)
        err = np.abs(c.points - np.array(true)).max()
        assert err <= 1.0

    def test_energy_non_increasing(self):
        rng = np.random.default_rng(0)
        centers = [(12 + 3 * np.sin(z), 12 + 2 * np.cos(z)) for z in range(8)]
        pm = gaussian_tube_probmap(centers)
        noisy = Volume3D(
            np.clip(pm.data + 0.1 * rng.random(pm.dims), 0, 1),
            pm.spacing,
            KIND_PROBABILITY,
        )
        _, energies = fit_centerline(noisy, return_energies=True)
        assert len(energies) >= 2
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))

    def test_large_alpha_straightens_the_line(self):
        centers = [(12 + 4 * np.sin(z * 0.9), 12) for z in range(8)]
        pm = gaussian_tube_probmap(centers)
        loose = fit_centerline(pm, ACMConfig(alpha=0.0))
        stiff = fit_centerline(pm, ACMConfig(alpha=50.0, max_iters=2000))
        spread = lambda c: float(np.ptp(c.points[:, 0]))
        assert spread(stiff) < 0.25 * spread(loose)

    def test_translation_equivariance(self):
        base = [(9.0, 10.0)] * 6
        shifted = [(12.0, 15.0)] * 6
        c1 = fit_centerline(gaussian_tube_probmap(base, dims=(28, 28, 6)))
        c2 = fit_centerline(gaussian_tube_probmap(shifted, dims=(28, 28, 6)))
        assert np.abs((c2.points - c1.points) - [3.0, 5.0]).max() < 0.05

    def test_custom_init_is_used(self):
        pm = gaussian_tube_probmap([(12, 12)] * 8)
        init = Centerline(np.full((8, 2), 2.0))
        c = fit_centerline(pm, ACMConfig(max_iters=1, tol=1e9), init=init)
        # one accepted step from the custom start, far from the centroid
        assert np.all(c.points[:, 0] < 6.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ACMConfig(step=0.0)
        with pytest.raises(ValueError):
            ACMConfig(alpha=-1.0)


class TestDistanceMap:
    def test_exact_values_at_known_distances(self):
        # spacing chosen so voxel offsets land exactly at 12.5 and 25 mm
        geom = Volume3D(np.zeros((5, 1, 2)), (12.5, 1.0, 3.0), KIND_HU)
        c = Centerline(np.array([[0.0, 0.0], [0.0, 0.0]]))
        dm = centerline_distance_map(c, geom)
        assert dm.data[0, 0, 0] == 1.0
        assert dm.data[1, 0, 0] == 0.5
        assert dm.data[2, 0, 0] == 0.0
        assert dm.data[4, 0, 1] == 0.0

    def test_distance_to_polyline_not_points(self):
        # a voxel midway between two slice points is closer to the segment
        geom = Volume3D(np.zeros((3, 3, 2)), (1.0, 1.0, 10.0), KIND_HU)
        c = Centerline(np.array([[0.0, 0.0], [2.0, 0.0]]))
        dm = centerline_distance_map(c, geom)
        # voxel (1, 0, z) projects onto the tilted segment
        seg_a = np.array([0.0, 0.0, 0.0])
        seg_b = np.array([2.0, 0.0, 10.0])
        p = np.array([1.0, 0.0, 0.0])
        t = np.clip(np.dot(p - seg_a, seg_b - seg_a) / np.dot(seg_b - seg_a, seg_b - seg_a), 0, 1)
        d = np.linalg.norm(p - (seg_a + t * (seg_b - seg_a)))
        assert abs(dm.data[1, 0, 0] - max(0.0, 1.0 - d / 25.0)) < 1e-12

    def test_slice_count_must_match(self):
        geom = Volume3D(np.zeros((3, 3, 4)), (1, 1, 1), KIND_HU)
        with pytest.raises(ValueError):
            centerline_distance_map(Centerline(np.zeros((3, 2))), geom)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        c = Centerline(np.array([[1.25, 2.5], [3.0, 4.125]]))
        path = str(tmp_path / "c.txt")
        save_centerline(c, path)
        back = load_centerline(path)
        assert np.allclose(back.points, c.points, atol=1e-6)
