import numpy as np
import pytest

from gprae.preprocess import estimate_lag
from gprae.synth import (
    SceneError,
    SceneSpec,
    TargetSpec,
    affected_scans,
    apex_time,
    default_targets,
    format_scene,
    generate_background,
    generate_dataset,
    inject_target,
    parse_scene,
    ricker,
    travel_time,
)

SMALL = SceneSpec(T=256, X=48, Y=12, seed=3)


def test_ricker_centre_and_symmetry():
    w = ricker(2.0, 0.0117, 101)
    assert w[50] == 1.0 and w.max() == 1.0
    np.testing.assert_allclose(w, w[::-1], rtol=0, atol=0)


def test_ricker_zero_mean():
    # 6 periods of a 2 GHz wavelet at dt = 0.0117 ns
    n = int(np.ceil(6 / (2.0 * 0.0117))) | 1
    w = ricker(2.0, 0.0117, n)
    # continuous integral of the Ricker pulse is exactly zero
    assert abs(w.sum()) < 1e-6 * w.max()


def test_ricker_rejects_bad_input():
    with pytest.raises(SceneError):
        ricker(0.0, 0.01, 11)


def test_background_deterministic():
    a_h, a_v = generate_background(SMALL)
    b_h, b_v = generate_background(SMALL)
    np.testing.assert_array_equal(a_h.data, b_h.data)
    np.testing.assert_array_equal(a_v.data, b_v.data)
    c_h, _ = generate_background(SceneSpec(T=256, X=48, Y=12, seed=4))
    assert not np.array_equal(a_h.data, c_h.data)


def test_background_zero_amplitudes():
    spec = SceneSpec(T=64, X=8, Y=3, layer_amplitude=0, speckle=0, noise=0)
    v_h, v_v = generate_background(spec)
    assert not v_h.data.any() and not v_v.data.any()
    assert v_h.polarization.name == "H" and v_v.polarization.name == "V"


def test_background_stationary_in_y():
    v_h, _ = generate_background(SceneSpec(T=256, X=64, Y=20, seed=1))
    means = v_h.data.mean(axis=(0, 1))
    sigma = v_h.data.std(axis=(0, 1)) / np.sqrt(256 * 64)
    # 3-sigma band around the grand mean, with sigma from per-scan spread
    spread = max(sigma.max(), means.std())
    assert np.all(np.abs(means - means.mean()) <= 3 * spread)


def test_apex_sample_for_depth_10_velocity_10():
    spec = SceneSpec(T=512, X=64, Y=5, velocity=10.0, layer_amplitude=0, speckle=0, noise=0)
    assert apex_time(10.0, 10.0) == 2.0
    v_h, v_v = generate_background(spec)
    target = TargetSpec(x0=32 * spec.dx, y0=2 * spec.dy, depth=10.0, extent=1)
    h, _, _ = inject_target(v_h, v_v, target, spec)
    trace = h.data[:, 32, 2]
    assert abs(np.argmax(trace) - 2.0 / spec.dt) <= 1


def test_travel_time_minimum_at_apex():
    x = np.linspace(0, 40, 401)
    t = travel_time(x, 17.3, 8.0, 14.0)
    assert np.argmin(t) == np.argmin(np.abs(x - 17.3))
    assert t.min() == pytest.approx(apex_time(8.0, 14.0), rel=1e-6)


def test_extent_three_flips_three_labels():
    v_h, v_v = generate_background(SMALL)
    target = TargetSpec(x0=8.0, y0=6 * SMALL.dy, depth=8.0, extent=3)
    new_h, new_v, labels = inject_target(v_h, v_v, target, SMALL)
    assert labels.sum() == 3
    changed = np.flatnonzero(np.any(new_h.data != v_h.data, axis=(0, 1)))
    np.testing.assert_array_equal(changed, np.flatnonzero(labels))
    np.testing.assert_array_equal(changed, affected_scans(target, SMALL))


def test_apex_outside_record():
    v_h, v_v = generate_background(SMALL)
    deep = TargetSpec(x0=8.0, y0=6 * SMALL.dy, depth=100.0)
    with pytest.raises(SceneError):
        inject_target(v_h, v_v, deep, SMALL)


def test_no_targets_all_negative():
    ds = generate_dataset(SMALL, targets=[])
    assert not ds.labels.any()


def test_target_in_training_scans_rejected():
    with pytest.raises(SceneError):
        generate_dataset(SMALL, [TargetSpec(x0=8.0, y0=2 * SMALL.dy, depth=6.0)], 5)


def test_default_scene_label_count():
    spec = SceneSpec(T=256, X=32, Y=66, seed=2)
    targets = default_targets(spec, n=8)
    ds = generate_dataset(spec, targets)
    expected = len(set(np.concatenate([affected_scans(t, spec) for t in targets])))
    assert ds.labels.sum() == expected
    assert not ds.labels[:5].any()
    # the changed scans are exactly the labelled ones
    clean = generate_dataset(spec, [])
    changed = np.any(ds.v_h.data != clean.v_h.data, axis=(0, 1))
    np.testing.assert_array_equal(changed, ds.labels.astype(bool))


@pytest.mark.parametrize("velocity,noise", [(14.0, 0.01), (10.0, 0.05)])
def test_two_soils_generate(velocity, noise):
    spec = SceneSpec(T=256, X=32, Y=20, velocity=velocity, noise=noise)
    ds = generate_dataset(spec, default_targets(spec, n=2))
    assert ds.v_h.velocity == velocity and ds.labels.sum() > 0


def test_lag_recovered_at_high_snr():
    spec = SceneSpec(T=256, X=24, Y=4, pol_lag=5, noise=0.002, seed=9)
    v_h, v_v = generate_background(spec)
    for x in range(spec.X):
        for y in range(spec.Y):
            tau = estimate_lag(v_h.data[:, x, y], v_v.data[:, x, y]).tau_hat
            assert abs(tau - 5) <= 1


def test_scene_file_roundtrip():
    spec = SceneSpec(T=128, X=40, Y=16, seed=11, noise=0.03)
    targets = [TargetSpec(x0=5.0, y0=8.0, depth=7.5, extent=2, lag=4)]
    text = format_scene(spec, targets, train_bscans=4)
    spec2, targets2, n = parse_scene(text)
    assert spec2 == spec and targets2 == targets and n == 4


def test_scene_file_defaults_and_errors():
    spec, targets, n = parse_scene("[scene]\nY = 30  # short\nn_targets = 2\n")
    assert spec.Y == 30 and len(targets) == 2 and n == 5
    assert parse_scene("")[1] is None
    with pytest.raises(SceneError):
        parse_scene("[scene]\nbogus = 1\n")
    with pytest.raises(SceneError):
        parse_scene("[scene]\nT = abc\n")
