import numpy as np
import pytest

from xmodal import dataio
from xmodal.annotate import (NormalEstimationConfig, angular_error_deg, discontinuity_mask, flow_magnitude,
                             flow_to_color, label_to_rgb, normal_to_rgb, normals_from_depth)
from xmodal.errors import ConfigError, PaletteError, ValidationError
from xmodal.scenegen import (LIGHTING_PRESETS, CameraTrajectory, Primitive, SceneDescription,
                             generate_scene, generate_trajectory, look_rotation, render_frame)
from xmodal.scenegen.dataset import palette_entries

INTR = dataio.Intrinsics(40.0, 24.0, 24.0)


def plane_depth(slope, z0=5.0, size=48):
    """Depth of the camera-space plane Z = z0 + slope * X."""
    xs = (np.arange(size) + 0.5 - INTR.cx) / INTR.f
    return np.tile(z0 / (1 - slope * xs), (size, 1))


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_fronto_parallel_plane(backend):
    n, ok = normals_from_depth(np.full((48, 48), 7.0), INTR, backend=backend)
    inner = (slice(1, -1), slice(1, -1))
    assert ok[inner].all()
    assert np.max(angular_error_deg(n[inner], np.array([0.0, 0.0, -1.0]))) < 1e-6


def test_slanted_plane():
    n, ok = normals_from_depth(plane_depth(0.1), INTR)
    truth = np.array([0.1, 0.0, -1.0]) / np.linalg.norm([0.1, 0.0, -1.0])
    inner = (slice(2, -2), slice(2, -2))
    assert ok[inner].all()
    assert np.max(angular_error_deg(n[inner], truth)) < 0.5


def test_sphere_oracle():
    prims = (Primitive("plane", (0.0,), 1, (0.3, 0.5, 0.2)),
             Primitive("sphere", (0.0, 0.0, 1.5, 1.4), 4, (0.3, 0.6, 0.2)))
    scene = SceneDescription(prims, (), LIGHTING_PRESETS["clear"], 12.0)
    R = look_rotation([0.0, 1.0, 0.0])
    pose = dataio.Pose(R.tolist(), [0.0, -3.2, 1.5])
    traj = CameraTrajectory(dataio.Intrinsics(32.0, 32.0, 32.0), [pose, pose], (64, 64))
    fr = render_frame(scene, traj, 0, with_flow=False)
    n, ok = normals_from_depth(fr.depth, traj.intrinsics)
    sphere = (fr.label == 4) & ~discontinuity_mask(fr.depth, 0.05, band=2)
    assert sphere.sum() > 300
    err = angular_error_deg(n, fr.normal)[sphere & ok]
    assert np.median(err) < 2.0


@pytest.mark.parametrize("seed", range(4))
def test_scene_error_concentrates_at_discontinuities(seed):
    s = generate_scene(seed)
    tr = generate_trajectory(seed, s, 2)
    fr = render_frame(s, tr, 0)
    n, ok = normals_from_depth(fr.depth, tr.intrinsics_for((64, 64)))
    away = fr.surface & ~discontinuity_mask(fr.depth, 0.05, band=2)
    good = ok & (angular_error_deg(n, fr.normal) < 3.0)
    assert good[away].mean() >= 0.95


def test_normals_unit_and_facing():
    rng = np.random.default_rng(0)
    depth = plane_depth(0.2) + rng.uniform(0, 0.01, (48, 48))
    n, ok = normals_from_depth(depth, INTR)
    assert np.all(np.abs(np.linalg.norm(n[ok], axis=-1) - 1) < 1e-5)
    from xmodal.annotate import backproject
    X = backproject(depth, INTR)
    assert np.all(np.sum(n[ok] * X[ok], axis=-1) < 0)
    assert np.all(n[~ok] == 0)


def test_normals_errors_and_config():
    d = np.full((8, 8), 3.0)
    d[2, 2] = -1.0
    with pytest.raises(ValidationError):
        normals_from_depth(d, INTR, valid=np.ones((8, 8), bool))
    with pytest.raises(ConfigError):
        NormalEstimationConfig(window=4)
    with pytest.raises(ConfigError):
        NormalEstimationConfig(depth_discontinuity_ratio=1.5)


def test_isolated_pixel_invalid():
    d = np.full((5, 5), 1e9)
    d[2, 2] = 4.0
    _, ok = normals_from_depth(d, INTR)
    assert not ok.any()


def test_discontinuity_mask():
    d = np.full((6, 6), 5.0)
    d[:, 3:] = 8.0
    m = discontinuity_mask(d, 0.05)
    assert m[:, 2:4].all() and not m[:, :2].any() and not m[:, 4:].any()
    assert discontinuity_mask(d, 0.05, band=1)[:, 1:5].all()


# -- visual encoders --------------------------------------------------------------

def test_flow_color_zero_is_white():
    assert np.all(flow_to_color(np.zeros((3, 3, 2))) == 255)


def test_flow_color_wheel_origin():
    img = flow_to_color(np.array([[[2.0, 0.0]]]), max_magnitude=2.0)
    assert img[0, 0].tolist() == [255, 0, 0]


def test_flow_color_rotation_equivariant():
    theta = 0.7
    c, s = np.cos(theta), np.sin(theta)
    for a in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        f = np.array([[[np.cos(a), np.sin(a)]]]) * 3.0
        rot = np.array([[[np.cos(a + theta), np.sin(a + theta)]]]) * 3.0
        fr = f @ np.array([[c, s], [-s, c]])
        got = flow_to_color(fr, 3.0).astype(int)
        want = flow_to_color(rot, 3.0).astype(int)
        assert np.max(np.abs(got - want)) <= 2


def test_flow_color_continuous_sweep():
    a = np.linspace(0, 2 * np.pi, 2000)
    f = np.stack([np.cos(a), np.sin(a)], -1)[None]
    img = flow_to_color(f, 1.0).astype(int)[0]
    assert np.max(np.abs(np.diff(img, axis=0))) <= 8
    assert len({tuple(x) for x in img}) > 50


def test_flow_color_errors_and_auto():
    with pytest.raises(ConfigError):
        flow_to_color(np.zeros((2, 2, 2)), max_magnitude=0.0)
    f = np.zeros((10, 10, 2))
    f[..., 0] = np.arange(100).reshape(10, 10)
    img = flow_to_color(f)
    assert img[0, 0].tolist() == [255, 255, 255]
    assert img[-1, -1].tolist() == [255, 0, 0]


def test_flow_magnitude_gray():
    f = np.zeros((1, 101, 2))
    f[0, :, 1] = np.arange(101)
    g = flow_magnitude(f)
    assert g.dtype == np.uint8 and g[0, 0] == 0 and g[0, -1] == 255


def test_normal_rgb():
    n = np.array([[[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]])
    assert normal_to_rgb(n).tolist() == [[[128, 128, 0], [255, 128, 128], [0, 0, 0]]]


def test_label_rgb():
    pal = palette_entries()
    lab = np.arange(8).reshape(2, 4)
    img = label_to_rgb(lab, pal)
    assert len({tuple(c) for c in img.reshape(-1, 3)}) == 8
    with pytest.raises(PaletteError):
        label_to_rgb(np.array([[9]]), pal)
