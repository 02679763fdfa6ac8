import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gprae.estimator import (
    HiddenInstabilityDetector,
    PolarizationFuser,
    check_labels,
    check_pair,
    check_volume,
)
from gprae.synth import SceneSpec, TargetSpec, generate_dataset
from gprae.volume import Polarization, Volume


def small_detector(**kw):
    params = dict(family="a1", dims="2d", block_size=32, stride=16, n_training_bscans=3,
                  epochs_max=2, batch_size=8, max_train_blocks=24, seed=0)
    params.update(kw)
    return HiddenInstabilityDetector(**params)


@pytest.fixture(scope="module")
def dataset():
    spec = SceneSpec(T=64, X=64, Y=8, seed=2)
    target = TargetSpec(x0=12.0, y0=5 * spec.dy, depth=4.0, extent=1)
    return generate_dataset(spec, [target], train_bscans=3)


def test_validation_helpers():
    vol = check_volume(np.zeros((2, 3, 4)))
    assert isinstance(vol, Volume) and vol.shape == (2, 3, 4)
    with pytest.raises(ValueError):
        check_volume(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        check_volume(np.full((1, 1, 1), np.nan))
    assert check_labels([0, 1], 2).dtype == np.int8
    with pytest.raises(ValueError):
        check_labels([0, 1], 3)
    with pytest.raises(ValueError):
        check_labels([0, 2], 2)
    with pytest.raises(ValueError):
        check_pair(np.zeros((1, 1, 1)))


def test_get_set_params_and_clone():
    det = small_detector()
    params = det.get_params()
    assert params["family"] == "a1" and params["block_size"] == 32
    det.set_params(stride=8)
    assert det.stride == 8
    twin = clone(det)
    assert twin.get_params() == det.get_params() and twin is not det


def test_not_fitted():
    with pytest.raises(NotFittedError):
        small_detector().predict(np.zeros((64, 64, 4)))


def test_fuser(dataset):
    fuser = PolarizationFuser()
    fused = fuser.fit_transform((dataset.v_h, dataset.v_v))
    assert fused.polarization is Polarization.A
    assert np.abs(fused.data).max() == 1.0
    assert fuser.lags_.shape == (64, 8)


def test_fit_predict(dataset):
    fused = PolarizationFuser().transform((dataset.v_h, dataset.v_v))
    det = small_detector().fit(fused, dataset.labels)
    assert len(det.history_) == 2 and det.n_train_blocks_ == 24
    scores = det.score_samples(fused)
    assert scores.shape == (8,)
    det.calibrate(fused, dataset.labels, scans=np.arange(3, 8))
    pred = det.predict(fused)
    np.testing.assert_array_equal(pred, (scores > det.gamma_).astype(int))
    np.testing.assert_allclose(det.decision_function(fused), scores - det.gamma_)
    # determinism of the whole fit
    again = small_detector().fit(fused, dataset.labels)
    np.testing.assert_array_equal(again.score_samples(fused), scores)


def test_fit_rejects_labelled_training_scans(dataset):
    labels = dataset.labels.copy()
    labels[0] = 1
    with pytest.raises(ValueError):
        small_detector().fit(dataset.v_h, labels)
    with pytest.raises(ValueError):
        small_detector(n_training_bscans=9).fit(dataset.v_h)
