import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from selfcal_sfm import SelfCalibratingSfM
from selfcal_sfm.estimator import check_measurement_matrix, check_track_mask
from selfcal_sfm.exceptions import DimensionError
from selfcal_sfm.synthgen import SceneConfig, make_problem


@pytest.fixture(scope="module")
def fitted():
    scene, M = make_problem(SceneConfig(n_views=5, m_points=30, outlier_rate=0.4, seed=21))
    est = SelfCalibratingSfM(max_iters=300).fit(M)
    return scene, M, est


def test_params_and_clone():
    est = SelfCalibratingSfM(alpha=2.0, beta=0.0)
    params = est.get_params()
    assert params["alpha"] == 2.0 and params["beta"] == 0.0
    twin = clone(est)
    assert twin.get_params() == params
    assert est.set_params(max_iters=7).max_iters == 7
    assert est.solver_config().max_iters == 7


def test_invalid_param_raises_on_fit(clean_problem):
    with pytest.raises(Exception, match="alpha"):
        SelfCalibratingSfM(alpha=-1).fit(clean_problem[1])


def test_not_fitted(clean_problem):
    with pytest.raises(NotFittedError):
        SelfCalibratingSfM().predict(clean_problem[1])


def test_fit_attributes(fitted):
    _, M, est = fitted
    assert est.inlier_mask_.shape == (30,)
    assert est.soft_weights_.shape == (30,)
    assert est.calibration_.K.shape == (3, 3)
    assert est.n_features_in_ == 30


def test_predict_and_score(fitted):
    scene, M, est = fitted
    np.testing.assert_array_equal(est.predict(M), est.inlier_mask_)
    assert 0.0 <= est.score(M, scene.inlier_mask_true) <= 1.0
    with pytest.raises(DimensionError):
        est.score(M, np.ones(3))


def test_transform_is_rank_four(fitted):
    _, M, est = fitted
    Z = est.transform(M)
    assert Z.shape == (15, int(est.inlier_mask_.sum()))
    s = np.linalg.svd(Z, compute_uv=False)
    assert s[4] < 1e-10 * s[0]


def test_shape_change_rejected(fitted):
    _, _, est = fitted
    with pytest.raises(DimensionError, match="per instance"):
        est.predict(np.ones((15, 20)))


def test_plain_array_input(clean_problem):
    _, M = clean_problem
    est = SelfCalibratingSfM(max_iters=50).fit(M.valid_block())
    assert est.predict(M.valid_block()).shape == (40,)


def test_validation_helpers(rng):
    with pytest.raises(DimensionError):
        check_measurement_matrix(rng.normal(size=(7, 10)))
    with pytest.raises(ValueError):
        check_measurement_matrix(np.full((9, 10), np.nan))
    with pytest.raises(ValueError):
        check_measurement_matrix(rng.normal(size=(9, 3)))
    assert check_track_mask([1, 0, 1], 3).dtype == bool
