import numpy as np
import pytest
from scipy import stats

from mlmc_elliptic.errors import InputError, ResourceError
from mlmc_elliptic.mesh import restrict_nodal, structured_mesh
from mlmc_elliptic.random_field import (
    CoefficientModel,
    CovarianceSpec,
    build_sampler,
    element_coefficient,
    element_coefficients,
    sample_field,
    sample_fields,
    smooth_for_level,
    standard_normals,
)


def test_covariance_validation():
    with pytest.raises(InputError):
        CovarianceSpec("exponential", 0.0, 0.5)
    with pytest.raises(InputError):
        CovarianceSpec("gaussian", 1.0, -1.0)
    with pytest.raises(ValueError):
        CovarianceSpec("matern", 1.0, 1.0)


def test_kernel_values():
    assert CovarianceSpec("exponential", 1.0, 0.5)(0.5) == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert CovarianceSpec("gaussian", 2.0, 1.0)(1.0) == pytest.approx(2 * np.exp(-1.0), abs=1e-15)
    assert CovarianceSpec("exponential", 1.0, 0.5)(0.5) == pytest.approx(0.367879, abs=1e-6)
    assert CovarianceSpec("gaussian", 2.0, 1.0)(1.0) == pytest.approx(0.735759, abs=1e-6)


def test_matrix_symmetric_stationary():
    mesh = structured_mesh(4)
    C = CovarianceSpec("exponential", 1.3, 0.3).matrix(mesh.nodes)
    np.testing.assert_array_equal(C, C.T)
    # translated pairs at equal distance share the entry
    assert C[0, 1] == C[5, 6]


def test_factor_reproduces_diagonal():
    mesh = structured_mesh(2)
    cov = CovarianceSpec("exponential", 1.0, 0.3)
    s = build_sampler(mesh, cov, base_seed=1)
    assert s.factor.shape == (9, 9)
    LLt = s.factor @ s.factor.T
    np.testing.assert_allclose(np.diag(LLt), 1.0 + s.jitter, atol=1e-8)
    np.testing.assert_allclose(LLt, cov.matrix(mesh.nodes) + s.jitter * np.eye(9), atol=1e-8)


def test_node_cap():
    with pytest.raises(ResourceError, match="level 0"):
        build_sampler(structured_mesh(8), CovarianceSpec("gaussian", 1.0, 0.5), 0, max_nodes=80)


def test_gaussian_kernel_fine_mesh_factorizes():
    s = build_sampler(structured_mesh(32), CovarianceSpec("gaussian", 1.0, 0.5), 0)
    assert s.jitter <= 1e-6


def test_sample_determinism_and_independence():
    s = build_sampler(structured_mesh(4), CovarianceSpec("gaussian", 1.0, 0.5), base_seed=42)
    a = sample_field(s, 7)
    np.testing.assert_array_equal(a, sample_field(s, 7))
    assert not np.array_equal(a, sample_field(s, 8))
    # batched draws equal single draws bit for bit, in any order
    batch = sample_fields(s, [9, 7, 3])
    np.testing.assert_array_equal(batch[:, 1], a)
    np.testing.assert_array_equal(batch[:, 2], sample_field(s, 3))


def test_rng_key_components_all_matter():
    base = standard_normals(1, 2, 3, 0, 5)
    for args in [(2, 2, 3, 0), (1, 3, 3, 0), (1, 2, 4, 0), (1, 2, 3, 1)]:
        assert not np.array_equal(base, standard_normals(*args, 5))


def test_tiny_variance_gives_mean():
    s = build_sampler(structured_mesh(4), CovarianceSpec("gaussian", 1e-30, 0.5, mean=0.7), 0)
    assert np.max(np.abs(sample_field(s, 0) - 0.7)) < 1e-10


def test_node_variance_small_sample():
    cov = CovarianceSpec("exponential", 2.0, 0.4)
    s = build_sampler(structured_mesh(2), cov, base_seed=5)
    X = sample_fields(s, range(4000))
    var = X.var(axis=1, ddof=1)
    tol = 3 * np.sqrt(2 / 4000) * cov.sigma2
    assert np.all(np.abs(var - cov.sigma2) < 1.5 * tol)  # 9 nodes, mild multiplicity slack


def test_restricted_samples_have_coarse_law(hier3):
    cov = CovarianceSpec("gaussian", 1.0, 0.5)
    s = build_sampler(hier3[1], cov, base_seed=3)
    X = restrict_nodal(hier3, 1, sample_fields(s, range(4000)))
    emp = np.cov(X)
    exact = cov.matrix(hier3[0].nodes)
    # sampling error of a covariance entry is at most sqrt(2/N) sigma^2
    assert np.max(np.abs(emp - exact)) < 4 * np.sqrt(2 / 4000)


def test_scalar_identity_for_zero_field():
    mesh = structured_mesh(2)
    m = CoefficientModel("scalar", CovarianceSpec("gaussian", 1.0, 0.5))
    np.testing.assert_array_equal(element_coefficient(m, mesh, np.zeros(9), 3), np.eye(2))


def test_tensor_sum_of_matrices():
    mesh = structured_mesh(2)
    cov = CovarianceSpec("gaussian", 1.0, 0.5)
    m = CoefficientModel("tensor", cov, cov, K1=[[2, 0], [0, 1]], K2=[[0, 0], [0, 1]])
    A = element_coefficient(m, mesh, [np.zeros(9), np.zeros(9)], 0)
    np.testing.assert_array_equal(A, np.diag([2.0, 2.0]))


def test_linear_field_centroid_value():
    mesh = structured_mesh(4)
    m = CoefficientModel("scalar", CovarianceSpec("gaussian", 1.0, 0.5))
    g = 0.3 + 1.7 * mesh.nodes[:, 0] - 0.4 * mesh.nodes[:, 1]
    A = element_coefficients(m, mesh, g)
    c = mesh.centroids
    np.testing.assert_allclose(A[:, 0, 0], np.exp(0.3 + 1.7 * c[:, 0] - 0.4 * c[:, 1]), rtol=1e-14)
    for t in (0, 5, 31):
        np.testing.assert_allclose(element_coefficient(m, mesh, g, t), A[t], rtol=1e-15)


@pytest.mark.parametrize(
    "K1,K2",
    [
        ([[1, 2], [0, 1]], [[0, 0], [0, 0]]),
        ([[1, 0], [0, -1]], [[0, 0], [0, 0]]),
        ([[1, 0], [0, 1]], [[-1, 0], [0, 0]]),
    ],
)
def test_tensor_model_validation(K1, K2):
    cov = CovarianceSpec("gaussian", 1.0, 0.5)
    with pytest.raises(InputError):
        CoefficientModel("tensor", cov, cov, K1=K1, K2=K2)


def test_tensor_coefficients_spd():
    mesh = structured_mesh(4)
    cov = CovarianceSpec("exponential", 1.0, 0.3)
    m = CoefficientModel("tensor", cov, cov, K1=[[1, 0.3], [0.3, 1]], K2=[[1, -1], [-1, 1]])
    rng = np.random.default_rng(0)
    A = element_coefficients(m, mesh, [rng.normal(size=25), rng.normal(size=25)])
    assert np.all(np.linalg.eigvalsh(A)[:, 0] > 0)
    np.testing.assert_array_equal(A, np.transpose(A, (0, 2, 1)))


def test_field_count_checked():
    mesh = structured_mesh(2)
    m = CoefficientModel("scalar", CovarianceSpec("gaussian", 1.0, 0.5))
    with pytest.raises(InputError):
        element_coefficients(m, mesh, [np.zeros(9), np.zeros(9)])
    with pytest.raises(InputError):
        element_coefficients(m, mesh, np.zeros(8))


def test_lognormal_skewness():
    mesh = structured_mesh(4)
    cov = CovarianceSpec("gaussian", 1.0, 0.5)
    m = CoefficientModel("scalar", cov)
    s = build_sampler(mesh, cov, 9)
    N = 4000
    vals = np.array([np.log(element_coefficient(m, mesh, g, 10)[0, 0]) for g in sample_fields(s, range(N)).T])
    skew = stats.skew(vals)
    assert abs(skew) < 3 * np.sqrt(6 / N)


def test_smoothing_identity_and_constants():
    mesh = structured_mesh(4)
    g = np.random.default_rng(0).random(25)
    np.testing.assert_array_equal(smooth_for_level(g, mesh, 0), g)
    np.testing.assert_allclose(smooth_for_level(np.full(25, 2.0), mesh, 3), 2.0, rtol=1e-15)
    with pytest.raises(InputError):
        smooth_for_level(g, mesh, -1)


def test_smoothing_spike():
    mesh = structured_mesh(4)
    node = 12  # the centre node (2, 2)
    spike = np.zeros(25)
    spike[node] = 1.0
    out = smooth_for_level(spike, mesh, 1)
    assert mesh.degree[node] == 6
    assert out[node] == pytest.approx(1 / 7, abs=1e-15)
