"""Hot inner loops with a numba path and a pure numpy/scipy path.

The numba implementations are used when numba is importable and the
environment variable ``MLMC_ELLIPTIC_DISABLE_NUMBA`` is not set to a true
value. Both paths are always importable under explicit names
(``cg_numba``/``cg_numpy`` etc.) so tests and the benchmark can compare them.
The active implementation is bound to the unsuffixed name.

Results are bitwise reproducible within one backend; the two backends agree
to rounding only.
"""

import os

import numpy as np
import scipy.sparse as sp

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

ENV_FLAG = "MLMC_ELLIPTIC_DISABLE_NUMBA"

CG_CONVERGED = 0
CG_MAX_ITER = 1
CG_NEGATIVE_CURVATURE = 2


def numba_disabled_by_env():
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not numba_disabled_by_env()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy / scipy implementations
# --------------------------------------------------------------------------


def cg_numpy(indptr, indices, data, b, diag_inv, rel_tol, max_iter):
    """Conjugate gradients on a CSR matrix, optionally Jacobi preconditioned.

    Returns ``(x, iterations, relative_residual, status)``. Convergence is
    declared on the true residual ``b - A x``; when the recursive residual
    drifts below the target but the true one does not, the iteration is
    restarted from the true residual.
    """
    n = b.shape[0]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    x = np.zeros(n)
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return x, 0, 0.0, CG_CONVERGED
    target = rel_tol * bnorm
    r = b.copy()
    z = r * diag_inv
    p = z.copy()
    rz = np.dot(r, z)
    rnorm = bnorm
    it = 0
    status = CG_MAX_ITER
    while it < max_iter:
        Ap = A @ p
        pAp = np.dot(p, Ap)
        if not pAp > 0.0:
            status = CG_NEGATIVE_CURVATURE
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        it += 1
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= target:
            r = b - A @ x
            rnorm = np.sqrt(np.dot(r, r))
            if rnorm <= target:
                status = CG_CONVERGED
                break
            z = r * diag_inv
            p = z.copy()
            rz = np.dot(r, z)
            continue
        z = r * diag_inv
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, rnorm / bnorm, status


def tril_matmat_numpy(L, Z):
    """``L @ Z`` for lower-triangular ``L``, one column at a time.

    Column-wise evaluation keeps each column's result independent of how many
    columns are batched together.
    """
    out = np.empty((L.shape[0], Z.shape[1]))
    for c in range(Z.shape[1]):
        out[:, c] = L @ np.ascontiguousarray(Z[:, c])
    return out


def element_stiffness_numpy(areas, grads, coeffs):
    return np.einsum("t,tai,tij,tbj->tab", areas, grads, coeffs, grads, optimize=False)


def scatter_add_numpy(index, weights, size):
    return np.bincount(index, weights=weights, minlength=size)


def neighbor_average_numpy(indptr, indices, values, passes):
    n = values.shape[0]
    adj = sp.csr_matrix((np.ones(indices.shape[0]), indices, indptr), shape=(n, n))
    denom = 1.0 + np.diff(indptr)
    out = np.array(values, dtype=float)
    for _ in range(passes):
        out = (out + adj @ out) / denom
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _spmv(indptr, indices, data, x, out):
        for i in range(indptr.shape[0] - 1):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * x[indices[k]]
            out[i] = s

    @numba.njit(cache=True, nogil=True)
    def _dot(a, b):
        s = 0.0
        for i in range(a.shape[0]):
            s += a[i] * b[i]
        return s

    @numba.njit(cache=True, nogil=True)
    def cg_numba(indptr, indices, data, b, diag_inv, rel_tol, max_iter):
        n = b.shape[0]
        x = np.zeros(n)
        bnorm = np.sqrt(_dot(b, b))
        if bnorm == 0.0:
            return x, 0, 0.0, 0
        target = rel_tol * bnorm
        r = b.copy()
        z = np.empty(n)
        for i in range(n):
            z[i] = r[i] * diag_inv[i]
        p = z.copy()
        Ap = np.empty(n)
        rz = _dot(r, z)
        rnorm = bnorm
        it = 0
        status = 1
        while it < max_iter:
            _spmv(indptr, indices, data, p, Ap)
            pAp = _dot(p, Ap)
            if not pAp > 0.0:
                status = 2
                break
            a = rz / pAp
            for i in range(n):
                x[i] += a * p[i]
                r[i] -= a * Ap[i]
            it += 1
            rnorm = np.sqrt(_dot(r, r))
            if rnorm <= target:
                _spmv(indptr, indices, data, x, Ap)
                for i in range(n):
                    r[i] = b[i] - Ap[i]
                rnorm = np.sqrt(_dot(r, r))
                if rnorm <= target:
                    status = 0
                    break
                for i in range(n):
                    z[i] = r[i] * diag_inv[i]
                    p[i] = z[i]
                rz = _dot(r, z)
                continue
            for i in range(n):
                z[i] = r[i] * diag_inv[i]
            rz_new = _dot(r, z)
            beta = rz_new / rz
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            rz = rz_new
        return x, it, rnorm / bnorm, status

    @numba.njit(cache=True, nogil=True)
    def tril_matmat_numba(L, Z):
        # per-column accumulation order is fixed, so batching does not change bits
        n = L.shape[0]
        k = Z.shape[1]
        out = np.zeros((n, k))
        for i in range(n):
            for j in range(i + 1):
                lij = L[i, j]
                if lij == 0.0:
                    continue
                for c in range(k):
                    out[i, c] += lij * Z[j, c]
        return out

    @numba.njit(cache=True, nogil=True)
    def element_stiffness_numba(areas, grads, coeffs):
        T = areas.shape[0]
        out = np.empty((T, 3, 3))
        for t in range(T):
            a00 = coeffs[t, 0, 0]
            a01 = coeffs[t, 0, 1]
            a10 = coeffs[t, 1, 0]
            a11 = coeffs[t, 1, 1]
            for a in range(3):
                gx = grads[t, a, 0]
                gy = grads[t, a, 1]
                for b in range(3):
                    hx = grads[t, b, 0]
                    hy = grads[t, b, 1]
                    out[t, a, b] = areas[t] * (
                        gx * (a00 * hx + a01 * hy) + gy * (a10 * hx + a11 * hy)
                    )
        return out

    @numba.njit(cache=True, nogil=True)
    def scatter_add_numba(index, weights, size):
        out = np.zeros(size)
        for k in range(index.shape[0]):
            out[index[k]] += weights[k]
        return out

    @numba.njit(cache=True, nogil=True)
    def neighbor_average_numba(indptr, indices, values, passes):
        n = values.shape[0]
        cur = values.astype(np.float64).copy()
        nxt = np.empty(n)
        for _ in range(passes):
            for i in range(n):
                s = cur[i]
                for k in range(indptr[i], indptr[i + 1]):
                    s += cur[indices[k]]
                nxt[i] = s / (1.0 + (indptr[i + 1] - indptr[i]))
            cur, nxt = nxt, cur
        return cur

else:  # pragma: no cover
    cg_numba = tril_matmat_numba = element_stiffness_numba = None
    scatter_add_numba = neighbor_average_numba = None


if USE_NUMBA:
    cg = cg_numba
    tril_matmat = tril_matmat_numba
    element_stiffness = element_stiffness_numba
    scatter_add = scatter_add_numba
    neighbor_average = neighbor_average_numba
else:
    cg = cg_numpy
    tril_matmat = tril_matmat_numpy
    element_stiffness = element_stiffness_numpy
    scatter_add = scatter_add_numpy
    neighbor_average = neighbor_average_numpy
