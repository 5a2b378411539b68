"""P1 finite elements for ``-div(A grad u) = f`` with ``u = 0`` on the boundary."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import ConvergenceError, InputError, SPDViolationError

DEFAULT_REL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class _Pattern:
    free_nodes: np.ndarray
    free_index: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    scatter: np.ndarray
    local_mask: np.ndarray


@lru_cache(maxsize=32)
def _assembly_pattern(mesh):
    """CSR layout over free nodes and the scatter map from local entries."""
    free_nodes = np.flatnonzero(~mesh.boundary_mask)
    nf = free_nodes.size
    free_index = np.full(mesh.n_nodes, -1, dtype=np.int64)
    free_index[free_nodes] = np.arange(nf)
    ft = free_index[mesh.triangles]  # (T, 3)
    rows = np.repeat(ft[:, :, None], 3, axis=2)
    cols = np.repeat(ft[:, None, :], 3, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    keys = rows[mask] * nf + cols[mask]
    uniq, scatter = np.unique(keys, return_inverse=True)
    r, c = np.divmod(uniq, nf)
    indptr = np.zeros(nf + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=nf), out=indptr[1:])
    return _Pattern(free_nodes, free_index, indptr, c.astype(np.int64), scatter.ravel(), mask)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Stiffness system restricted to the free (interior) nodes."""

    mesh: object
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free_nodes: np.ndarray
    free_index: np.ndarray

    @property
    def nnz(self):
        return self.matrix.nnz


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    mesh: object
    values: np.ndarray
    gradients: np.ndarray


def _source_values(mesh, f):
    if f is None:
        return np.zeros(mesh.n_nodes)
    if callable(f):
        vals = np.asarray(f(mesh.nodes), dtype=float)
        return np.broadcast_to(vals, (mesh.n_nodes,)).astype(float)
    return np.full(mesh.n_nodes, float(f))


def check_spd(coefficients):
    """Raise on the first triangle whose 2x2 tensor is not SPD."""
    a11 = coefficients[:, 0, 0]
    a22 = coefficients[:, 1, 1]
    a12 = coefficients[:, 0, 1]
    a21 = coefficients[:, 1, 0]
    bad = ~((a11 > 0) & (a11 * a22 - a12 * a21 > 0) & np.isclose(a12, a21, rtol=1e-12, atol=0))
    if bad.any():
        t = int(np.flatnonzero(bad)[0])
        raise InputError(f"coefficient on triangle {t} is not symmetric positive definite: {coefficients[t].tolist()}")


def assemble(mesh, coefficients, f=1.0):
    """Assemble the Dirichlet-eliminated stiffness matrix and load vector.

    ``coefficients`` holds one SPD tensor per triangle. The element stiffness
    ``|t| G^T A_t G`` is exact for piecewise-constant ``A``. The load uses the
    vertex rule ``|t|/3 * f(x_i)``; ``f`` may be a callable on ``(N, 2)``
    node arrays, a constant, or ``None`` for zero.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (mesh.n_triangles, 2, 2):
        raise InputError(
            f"expected coefficients of shape ({mesh.n_triangles}, 2, 2), got {coefficients.shape}"
        )
    check_spd(coefficients)
    pat = _assembly_pattern(mesh)
    local = kernels.element_stiffness(mesh.areas, mesh.basis_gradients, coefficients)
    data = kernels.scatter_add(pat.scatter, local[pat.local_mask], pat.indices.size)
    nf = pat.free_nodes.size
    A = sp.csr_matrix((data, pat.indices, pat.indptr), shape=(nf, nf))

    fv = _source_values(mesh, f)
    contrib = (mesh.areas / 3.0)[:, None] * fv[mesh.triangles]
    load = np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)
    return SparseSystem(mesh, A, load[pat.free_nodes], pat.free_nodes, pat.free_index)


def solution_from_nodal(mesh, values):
    """Wrap nodal values as a P1 function with per-triangle gradients."""
    values = np.asarray(values, dtype=float)
    grads = np.einsum("ta,tai->ti", values[mesh.triangles], mesh.basis_gradients)
    return DiscreteSolution(mesh, values, grads)


def solve_cg(system, rel_tol=DEFAULT_REL_TOL, max_iter=None, preconditioner=None):
    """Solve with conjugate gradients; returns ``(solution, iterations, residual)``.

    ``preconditioner`` is ``None`` or ``"jacobi"``.
    """
    A = system.matrix
    n = A.shape[0]
    if max_iter is None:
        max_iter = max(100, 10 * n)
    if preconditioner in (None, "none"):
        diag_inv = np.ones(n)
    elif preconditioner == "jacobi":
        diag_inv = 1.0 / A.diagonal()
    else:
        raise InputError(f"unknown preconditioner {preconditioner!r}")
    x, it, res, status = kernels.cg(
        A.indptr.astype(np.int64),
        A.indices.astype(np.int64),
        A.data,
        np.ascontiguousarray(system.rhs, dtype=float),
        diag_inv,
        float(rel_tol),
        int(max_iter),
    )
    if status == kernels.CG_NEGATIVE_CURVATURE:
        raise SPDViolationError(f"non-positive curvature in CG after {it} iterations")
    if status == kernels.CG_MAX_ITER:
        raise ConvergenceError(
            f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations (residual {res:.3e})",
            residual=res,
            iterations=it,
        )
    values = np.zeros(system.mesh.n_nodes)
    values[system.free_nodes] = x
    return solution_from_nodal(system.mesh, values), int(it), float(res)


def h1_seminorm(sol):
    sq = np.einsum("ti,ti->t", sol.gradients, sol.gradients)
    return float(np.sqrt(np.dot(sol.mesh.areas, sq)))


def l2_norm(sol):
    """Exact L2 norm of the P1 function via the local mass matrix."""
    u = sol.values[sol.mesh.triangles]
    local = (np.einsum("ta,ta->t", u, u) + u.sum(axis=1) ** 2) / 12.0
    return float(np.sqrt(np.dot(sol.mesh.areas, local)))


def energy_norm(sol, coefficients):
    """``sqrt(int A grad u . grad u)`` for piecewise-constant ``A``."""
    g = sol.gradients
    e = np.einsum("ti,tij,tj->t", g, coefficients, g)
    return float(np.sqrt(np.dot(sol.mesh.areas, e)))


# Strang-Fix 6-point rule, exact for degree 4 (barycentric points, weights sum to 1)
_Q6_A, _Q6_B = 0.816847572980459, 0.091576213509771
_Q6_C, _Q6_D = 0.108103018168070, 0.445948490915965
_Q6_POINTS = np.array(
    [
        [_Q6_A, _Q6_B, _Q6_B],
        [_Q6_B, _Q6_A, _Q6_B],
        [_Q6_B, _Q6_B, _Q6_A],
        [_Q6_C, _Q6_D, _Q6_D],
        [_Q6_D, _Q6_C, _Q6_D],
        [_Q6_D, _Q6_D, _Q6_C],
    ]
)
_Q6_WEIGHTS = np.array([0.109951743655322] * 3 + [0.223381589678011] * 3)


def _quad_points(mesh):
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    return np.einsum("qa,tai->tqi", _Q6_POINTS, p)


def l2_error(sol, exact):
    """``||u - u_h||_{L2}`` against a callable ``exact(xy) -> values``."""
    mesh = sol.mesh
    xq = _quad_points(mesh)
    uh = np.einsum("qa,ta->tq", _Q6_POINTS, sol.values[mesh.triangles])
    ue = np.asarray(exact(xq.reshape(-1, 2))).reshape(uh.shape)
    return float(np.sqrt(np.dot(mesh.areas, ((ue - uh) ** 2) @ _Q6_WEIGHTS)))


def h1_error(sol, exact_gradient):
    """``|u - u_h|_{H1}`` against a callable returning ``(n, 2)`` gradients."""
    mesh = sol.mesh
    xq = _quad_points(mesh)
    ge = np.asarray(exact_gradient(xq.reshape(-1, 2))).reshape(xq.shape)
    diff = ge - sol.gradients[:, None, :]
    return float(np.sqrt(np.dot(mesh.areas, np.einsum("tqi,tqi->tq", diff, diff) @ _Q6_WEIGHTS)))
