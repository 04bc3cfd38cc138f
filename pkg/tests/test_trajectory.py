import numpy as np
import pytest

from subdc.trajectory import (GOLDEN_ANGLE, SamplingSchedule, Trajectory, area_density_weights,
                              cartesian_readouts, check_radial, golden_angle_spokes,
                              linear_schedule, ramp_density_comp, spoke_angles)
from subdc.transform import ndft_adjoint, ndft_forward


def test_first_spoke():
    tr = golden_angle_spokes(3, 8)
    np.testing.assert_allclose(tr.coords[0, 0], [-0.5, 0.0], atol=1e-15)
    assert np.all(tr.coords[0, :, 1] == 0)


def test_golden_angle_values():
    th = spoke_angles(3)
    assert th[0] == 0
    assert th[1] == pytest.approx(1.941611, abs=1e-6)
    assert np.rad2deg(th[1]) == pytest.approx(111.2461, abs=1e-4)
    assert np.rad2deg(th[2] % (2 * np.pi)) == pytest.approx(222.4922, abs=1e-4)
    assert GOLDEN_ANGLE == pytest.approx(np.pi * (np.sqrt(5) - 1) / 2, rel=1e-15)


def test_coordinates_in_range_and_radial():
    tr = golden_angle_spokes(500, 64)
    assert tr.coords.min() >= -0.5
    assert tr.coords.max() < 0.5
    check_radial(tr)


def test_azimuths_distinct_mod_pi():
    th = np.sort(spoke_angles(1000) % np.pi)
    assert np.min(np.diff(th)) > 1e-9


def test_check_radial_rejects_random():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        check_radial(Trajectory(rng.uniform(-0.5, 0.5, (2, 6, 2))))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.full((1, 2, 2), 0.5))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)))
    tr = golden_angle_spokes(2, 4)
    with pytest.raises(ValueError):
        tr.coords[0, 0, 0] = 0.1


@pytest.mark.parametrize("n, rpf, idx, frames", [
    (4, 2, [0, 0, 1, 1], 2),
    (5, 2, [0, 0, 1, 1, 2], 3),
    (3, 1, [0, 1, 2], 3),
])
def test_linear_schedule(n, rpf, idx, frames):
    s = linear_schedule(n, rpf)
    assert s.time_index.tolist() == idx
    assert s.n_frames == frames


def test_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        SamplingSchedule(np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        linear_schedule(4, 0)


def test_ramp_values():
    tr = golden_angle_spokes(1, 8)                   # dk = 1/8
    w = ramp_density_comp(tr, normalize=False)
    r = np.linalg.norm(tr.coords[0], axis=-1)
    assert w[0, np.argmin(np.abs(r - 0.25))] == pytest.approx(0.25)
    assert w[0, 4] == pytest.approx(1 / 32)          # DC sample: dk / 4
    assert np.all(w >= 0)
    wn = ramp_density_comp(tr)
    assert wn.max() == pytest.approx(0.5)


def test_ramp_depends_on_radius_only():
    tr = golden_angle_spokes(7, 16)
    w = ramp_density_comp(tr, normalize=False)
    np.testing.assert_allclose(w, w[0][None, :].repeat(7, 0), rtol=1e-12)


def test_ramp_scales_with_radius():
    tr = golden_angle_spokes(3, 16)
    s = 0.6
    scaled = Trajectory(tr.coords * s)
    w0 = ramp_density_comp(tr, normalize=False)
    w1 = ramp_density_comp(scaled, normalize=False)
    dc = np.linalg.norm(tr.coords, axis=-1) == 0
    np.testing.assert_allclose(w1[~dc], s * w0[~dc], rtol=1e-12)


def test_gridding_recovery_gaussian():
    n = 32
    x, y = np.meshgrid(np.arange(n) - n // 2, np.arange(n) - n // 2, indexing="ij")
    img = np.exp(-(x ** 2 + y ** 2) / (2 * 4.0 ** 2))
    tr = golden_angle_spokes(128, 2 * n)             # 2 n_samples spokes
    sched = linear_schedule(128, 128)
    w = area_density_weights(tr, sched)
    k = ndft_forward(img.astype(complex), tr.flat())
    rec = ndft_adjoint(k * w.ravel(), tr.flat(), (n, n))
    err = np.linalg.norm(rec - img) / np.linalg.norm(img)
    assert err <= 0.05


def test_cartesian_readouts_cover_grid():
    tr, s = cartesian_readouts((4, 6), 3)
    assert tr.coords.shape == (12, 6, 2)
    assert s.readouts_per_frame().tolist() == [4, 4, 4]
    bins = {tuple(np.round(c * [4, 6]).astype(int)) for c in tr.coords[:4].reshape(-1, 2)}
    assert len(bins) == 24
