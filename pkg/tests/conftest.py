import numpy as np
import pytest

from selfcal_sfm.factorization import MeasurementMatrix
from selfcal_sfm.geometry import ProjectiveReconstruction
from selfcal_sfm.synthgen import SceneConfig, generate_scene, make_problem


def naive_matmul(A, B):
    """Triple-loop matrix product, used as an oracle."""
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float)
    vec = B.ndim == 1
    B = B[:, None] if vec else B
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            acc = 0.0
            for k in range(A.shape[1]):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc
    return out[:, 0] if vec else out


def central_diff(f, x, h=1e-4):
    """Fourth-order central differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        g.flat[j] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def assert_gradient_close(g, fd, rel=1e-4, floor=1e-6, abs_tol=1e-10):
    """Relative agreement where ``|fd| > floor``, absolute agreement elsewhere."""
    g, fd = np.asarray(g), np.asarray(fd)
    big = np.abs(fd) > floor
    if big.any():
        worst = np.max(np.abs(g - fd)[big] / np.abs(fd)[big])
        assert worst < rel, f"relative gradient error {worst:.3g}"
    if (~big).any():
        assert np.max(np.abs(g - fd)[~big]) < abs_tol


def random_reconstruction(rng, n=3, m=5):
    cams = rng.normal(size=(n, 3, 4))
    pts = rng.normal(size=(4, m))
    pts[3] = rng.uniform(0.5, 2.0, size=m)
    return ProjectiveReconstruction(cams, pts)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneConfig(n_views=5, m_points=40, seed=3))


@pytest.fixture(scope="session")
def clean_problem():
    return make_problem(SceneConfig(n_views=6, m_points=40, seed=11))


@pytest.fixture
def small_matrix(rng):
    return MeasurementMatrix(rng.normal(size=(9, 6)))
