"""Brute-force reference implementations used by the test suite.

Nothing here shares code with the modules it checks: assembly is a plain
per-triangle loop into a dense matrix, norms use their own quadrature, and
the allocation search is exhaustive.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError, ResourceError

MAX_DENSE_UNKNOWNS = 500


@dataclass
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    free_nodes: np.ndarray


def dense_assemble(mesh, coefficients, f=1.0):
    """Dense Dirichlet-eliminated system assembled triangle by triangle."""
    free = [i for i in range(mesh.n_nodes) if not mesh.boundary_mask[i]]
    pos = {node: k for k, node in enumerate(free)}
    n = len(free)
    if n > MAX_DENSE_UNKNOWNS:
        raise ResourceError(f"{n} unknowns exceed the dense oracle cap {MAX_DENSE_UNKNOWNS}")
    K = np.zeros((n, n))
    b = np.zeros(n)
    for t, tri in enumerate(mesh.triangles):
        P = mesh.nodes[tri]
        # gradients of the hat functions from [1 x y] coefficient inversion
        M = np.column_stack([np.ones(3), P])
        Minv = np.linalg.inv(M)
        G = Minv[1:, :].T  # row a = grad phi_a
        area = 0.5 * abs(np.linalg.det(M))
        A = np.asarray(coefficients[t])
        fv = f(P) if callable(f) else np.full(3, 0.0 if f is None else float(f))
        for a in range(3):
            if tri[a] not in pos:
                continue
            ia = pos[tri[a]]
            b[ia] += area / 3.0 * fv[a]
            for c in range(3):
                if tri[c] in pos:
                    K[ia, pos[tri[c]]] += area * G[a] @ A @ G[c]
    return DenseSystem(K, b, np.array(free))


def dense_solve(system):
    """Direct Cholesky solve; accepts a ``DenseSystem`` or a sparse system.

    Returns the full nodal vector with zeros on the boundary when the system
    knows its mesh, otherwise the free-node solution.
    """
    K = system.matrix.toarray() if hasattr(system.matrix, "toarray") else np.asarray(system.matrix)
    n = K.shape[0]
    if n > MAX_DENSE_UNKNOWNS:
        raise ResourceError(f"{n} unknowns exceed the dense oracle cap {MAX_DENSE_UNKNOWNS}")
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(K), system.rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"dense factorization failed: {exc}") from exc
    mesh = getattr(system, "mesh", None)
    if mesh is None:
        return x
    full = np.zeros(mesh.n_nodes)
    full[system.free_nodes] = x
    return full


def brute_force_allocation(variances, costs, eps, N_cap=200, variance_fraction=0.5, min_samples=2):
    """Exhaustive minimum-cost integer allocation with ``sum V/N <= f eps**2``."""
    V = np.asarray(variances, dtype=float)
    C = np.asarray(costs, dtype=float)
    if V.size > 3:
        raise InputError("brute force supports at most 3 levels")
    if N_cap > 200:
        raise InputError("N_cap must be <= 200")
    budget = variance_fraction * eps**2
    # evaluate every grid point at once by broadcasting one axis per level
    grid = np.arange(min_samples, N_cap + 1, dtype=float)
    shape = [1] * V.size
    var = np.zeros(())
    cost = np.zeros(())
    for k in range(V.size):
        axis = grid.reshape(shape[:k] + [-1] + shape[k + 1 :])
        var = var + V[k] / axis
        cost = cost + C[k] * axis
    cost = np.where(var <= budget, cost, np.inf)
    flat = int(np.argmin(cost))  # first minimum in lexicographic order
    if not np.isfinite(cost.flat[flat]):
        raise InputError(f"no feasible allocation with N <= {N_cap}")
    best = np.array(np.unravel_index(flat, cost.shape)) + min_samples
    return best


# 7-point rule exact for degree 5 (Radon); barycentric points and weights
_R = np.sqrt(15.0)
_A1, _B1 = (6 - _R) / 21, (9 + 2 * _R) / 21
_A2, _B2 = (6 + _R) / 21, (9 - 2 * _R) / 21
_Q7_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_B1, _A1, _A1],
        [_A1, _B1, _A1],
        [_A1, _A1, _B1],
        [_B2, _A2, _A2],
        [_A2, _B2, _A2],
        [_A2, _A2, _B2],
    ]
)
_Q7_WEIGHTS = np.array([9 / 40] + [(155 - _R) / 1200] * 3 + [(155 + _R) / 1200] * 3)


def quadrature_norm(mesh, values, kind):
    """``"l2"`` norm or ``"h1"`` seminorm of the P1 interpolant of ``values``."""
    values = np.asarray(values, dtype=float)
    total = 0.0
    for tri in mesh.triangles:
        P = mesh.nodes[tri]
        u = values[tri]
        area = 0.5 * abs((P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[2, 0] - P[0, 0]) * (P[1, 1] - P[0, 1]))
        if kind == "l2":
            uq = _Q7_POINTS @ u
            total += area * np.dot(_Q7_WEIGHTS, uq**2)
        elif kind == "h1":
            # the linear function u(x) = c0 + c1 x + c2 y through the vertex values
            c = np.linalg.solve(np.column_stack([np.ones(3), P]), u)
            total += area * np.dot(_Q7_WEIGHTS, np.full(7, c[1] ** 2 + c[2] ** 2))
        else:
            raise InputError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(total))
