"""Gaussian random fields on mesh nodes and log-normal coefficient tensors.

Fields are sampled at the nodes of one level with a dense Cholesky factor of
the node covariance matrix. The coarse view of a fine realization is its
restriction to the coarse nodes, which has exactly the law of the field on
those nodes.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import kernels
from .errors import InputError, NumericalError, ResourceError

DEFAULT_MAX_NODES = 66 * 66
JITTER_START = 1e-10
JITTER_GROWTH = 10.0
JITTER_ESCALATIONS = 4


class CovarianceKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class CovarianceSpec:
    """Stationary isotropic covariance with constant mean.

    ``exponential``: ``sigma2 * exp(-r / length)``;
    ``gaussian``: ``sigma2 * exp(-r**2 / length**2)``, ``r`` the Euclidean
    distance.
    """

    kind: CovarianceKind
    sigma2: float
    length: float
    mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CovarianceKind(self.kind))
        if not self.sigma2 > 0:
            raise InputError(f"sigma2 must be > 0, got {self.sigma2}")
        if not self.length > 0:
            raise InputError(f"correlation length must be > 0, got {self.length}")

    @property
    def holder_exponent(self):
        """Hoelder exponent of the coefficient paths.

        The exponential kernel gives every exponent strictly below 1/2, so
        the returned 0.5 is a supremum there; the Gaussian kernel gives 1.
        """
        return 0.5 if self.kind is CovarianceKind.EXPONENTIAL else 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind is CovarianceKind.EXPONENTIAL:
            return self.sigma2 * np.exp(-r / self.length)
        return self.sigma2 * np.exp(-((r / self.length) ** 2))

    def matrix(self, points, other=None):
        other = points if other is None else other
        return self(cdist(points, other))


@dataclass(frozen=True, eq=False)
class FieldSampler:
    level: int
    mesh: object
    covariance: CovarianceSpec
    factor: np.ndarray
    base_seed: int
    jitter: float
    stream: int = 0

    @property
    def n_nodes(self):
        return self.factor.shape[0]


def build_sampler(mesh, cov, base_seed, stream=0, max_nodes=DEFAULT_MAX_NODES):
    """Factorize the node covariance matrix of ``mesh``.

    A jitter ``eps * sigma2 * I`` is added, starting at ``1e-10`` and growing
    tenfold up to four times before giving up.
    """
    n = mesh.n_nodes
    if n > max_nodes:
        raise ResourceError(
            f"level {mesh.level} has {n} nodes, above the dense factorization cap of {max_nodes}"
        )
    C = cov.matrix(mesh.nodes)
    jitter = JITTER_START * cov.sigma2
    for _ in range(JITTER_ESCALATIONS + 1):
        C_j = C.copy()
        C_j[np.diag_indices(n)] += jitter
        try:
            factor = np.linalg.cholesky(C_j)
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
            continue
        factor = np.ascontiguousarray(factor)
        factor.setflags(write=False)
        return FieldSampler(
            level=mesh.level,
            mesh=mesh,
            covariance=cov,
            factor=factor,
            base_seed=int(base_seed),
            jitter=jitter,
            stream=stream,
        )
    raise NumericalError(
        f"Cholesky factorization failed on level {mesh.level} even with jitter "
        f"{jitter / JITTER_GROWTH:.1e}"
    )


def standard_normals(base_seed, level, index, stream, n):
    """Standard normal vector from a Philox stream keyed by the arguments.

    The key is hashed through ``SeedSequence`` so distinct tuples give
    independent streams, and the output depends on nothing else.
    """
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(level), int(index), int(stream)))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n)


def sample_fields(sampler, indices):
    """Realizations for several sample indices, shape ``(n_nodes, len(indices))``."""
    indices = list(indices)
    n = sampler.n_nodes
    Z = np.empty((n, len(indices)))
    for c, idx in enumerate(indices):
        Z[:, c] = standard_normals(sampler.base_seed, sampler.level, idx, sampler.stream, n)
    return sampler.covariance.mean + kernels.tril_matmat(sampler.factor, Z)


def sample_field(sampler, sample_index):
    return sample_fields(sampler, [sample_index])[:, 0]


class CoefficientKind(str, enum.Enum):
    SCALAR_LOGNORMAL = "scalar"
    TENSOR_TWO_FIELD = "tensor"


@dataclass(frozen=True)
class CoefficientModel:
    """``A = exp(g1) K1 + exp(g2) K2`` (tensor) or ``A = exp(g) I`` (scalar)."""

    kind: CoefficientKind
    cov1: CovarianceSpec
    cov2: CovarianceSpec = None
    K1: tuple = ((1.0, 0.0), (0.0, 1.0))
    K2: tuple = ((0.0, 0.0), (0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "kind", CoefficientKind(self.kind))
        K1 = np.asarray(self.K1, dtype=float)
        K2 = np.asarray(self.K2, dtype=float)
        if K1.shape != (2, 2) or K2.shape != (2, 2):
            raise InputError("K1 and K2 must be 2x2 matrices")
        object.__setattr__(self, "K1", tuple(map(tuple, K1)))
        object.__setattr__(self, "K2", tuple(map(tuple, K2)))
        if self.kind is CoefficientKind.TENSOR_TWO_FIELD:
            if self.cov2 is None:
                raise InputError("tensor coefficient model needs a second covariance")
            for name, K in (("K1", K1), ("K2", K2)):
                if not np.allclose(K, K.T, rtol=0.0, atol=1e-14):
                    raise InputError(f"{name} must be symmetric")
            ev1 = np.linalg.eigvalsh(K1)
            ev2 = np.linalg.eigvalsh(K2)
            if ev1[0] <= 0:
                raise InputError(f"K1 must be positive definite, eigenvalues {ev1}")
            if ev2[0] < -1e-14 * max(1.0, abs(ev2[-1])):
                raise InputError(f"K2 must be positive semidefinite, eigenvalues {ev2}")

    @property
    def covariances(self):
        if self.kind is CoefficientKind.SCALAR_LOGNORMAL:
            return (self.cov1,)
        return (self.cov1, self.cov2)

    @property
    def n_fields(self):
        return len(self.covariances)


def _centroid_values(mesh, field):
    return np.asarray(field, dtype=float)[mesh.triangles].mean(axis=1)


def element_coefficients(model, mesh, fields):
    """Per-triangle coefficient tensors, shape ``(T, 2, 2)``.

    Each field is interpolated to the centroid (mean of the vertex values)
    and exponentiated.
    """
    fields = _as_field_list(fields, model, mesh)
    e1 = np.exp(_centroid_values(mesh, fields[0]))
    if model.kind is CoefficientKind.SCALAR_LOGNORMAL:
        out = np.zeros((mesh.n_triangles, 2, 2))
        out[:, 0, 0] = e1
        out[:, 1, 1] = e1
        return out
    e2 = np.exp(_centroid_values(mesh, fields[1]))
    K1 = np.asarray(model.K1)
    K2 = np.asarray(model.K2)
    return e1[:, None, None] * K1 + e2[:, None, None] * K2


def element_coefficient(model, mesh, fields, triangle):
    """Coefficient tensor on a single triangle."""
    fields = _as_field_list(fields, model, mesh)
    tri = mesh.triangles[triangle]
    vals = [np.exp(np.asarray(f, dtype=float)[tri].mean()) for f in fields]
    if model.kind is CoefficientKind.SCALAR_LOGNORMAL:
        return vals[0] * np.eye(2)
    return vals[0] * np.asarray(model.K1) + vals[1] * np.asarray(model.K2)


def _as_field_list(fields, model, mesh):
    if isinstance(fields, np.ndarray) and fields.ndim == 1:
        fields = [fields]
    fields = list(fields)
    if len(fields) != model.n_fields:
        raise InputError(f"model needs {model.n_fields} field(s), got {len(fields)}")
    for f in fields:
        if np.shape(f)[0] != mesh.n_nodes:
            raise InputError(f"field has {np.shape(f)[0]} values, mesh has {mesh.n_nodes} nodes")
    return fields


def smooth_for_level(nodal_field, mesh, passes):
    """Repeated neighbour averaging: each node takes the mean of itself and
    its edge-connected neighbours. ``passes == 0`` returns the input."""
    if passes < 0:
        raise InputError(f"passes must be >= 0, got {passes}")
    nodal_field = np.asarray(nodal_field, dtype=float)
    if passes == 0:
        return nodal_field
    indptr, indices = mesh.node_adjacency
    return kernels.neighbor_average(indptr, indices, nodal_field, passes)
