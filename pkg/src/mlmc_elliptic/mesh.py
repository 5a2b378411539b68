"""Nested structured triangulations of the unit square.

Node ``(i, j)`` of a mesh with ``n`` cells per side sits at ``(i/n, j/n)``
and has index ``j*(n+1) + i``. Cell ``(i, j)`` is split along the diagonal
from ``(i, j)`` to ``(i+1, j+1)`` into triangles ``2*(j*n+i)`` (below the
diagonal) and ``2*(j*n+i)+1`` (above it), both counterclockwise. Splitting
every cell along the same diagonal makes uniform refinement nested.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, InputError, ResourceError

DEFAULT_MAX_SIDE = 257
_BARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured right-triangle mesh of [0,1]^2 at one hierarchy level."""

    level: int
    n_side: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray

    @property
    def n_cells(self):
        return self.n_side - 1

    @property
    def h(self):
        """Cell edge length ``1/(n_side-1)``."""
        return 1.0 / (self.n_side - 1)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self):
        """Gradients of the three P1 hat functions, shape ``(T, 3, 2)``."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (y[:, b] - y[:, c]) / two_area
            g[:, a, 1] = (x[:, c] - x[:, b]) / two_area
        return g

    @cached_property
    def node_adjacency(self):
        """Edge-connected neighbours as CSR ``(indptr, indices)``."""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
        keys = np.unique(pairs[:, 0] * self.n_nodes + pairs[:, 1])
        rows, cols = np.divmod(keys, self.n_nodes)
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n_nodes), out=indptr[1:])
        return indptr, cols.astype(np.int64)

    @cached_property
    def degree(self):
        return np.diff(self.node_adjacency[0])


def structured_mesh(n_cells, level=0):
    """Build the structured mesh with ``n_cells`` cells per side."""
    if n_cells < 1:
        raise InputError(f"n_cells must be >= 1, got {n_cells}")
    n = n_cells
    ticks = np.arange(n + 1) / n
    X, Y = np.meshgrid(ticks, ticks)  # X[j, i] = i/n
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    on_edge = (nodes == 0.0) | (nodes == 1.0)
    boundary = on_edge[:, 0] | on_edge[:, 1]
    for arr in (nodes, tris, boundary):
        arr.setflags(write=False)
    return TriMesh(level=level, n_side=n + 1, nodes=nodes, triangles=tris, boundary_mask=boundary)


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Meshes for levels ``0..L`` with coarse-to-fine node maps.

    ``coarse_to_fine[l-1][i]`` is the index on level ``l`` of node ``i`` of
    level ``l-1``.
    """

    meshes: list
    coarse_to_fine: list = field(default_factory=list)

    @property
    def L(self):
        return len(self.meshes) - 1

    def __getitem__(self, level):
        return self.meshes[level]

    def __len__(self):
        return len(self.meshes)

    def node_map(self, coarse_level, fine_level):
        """Compose the injective maps from ``coarse_level`` up to ``fine_level``."""
        if not 0 <= coarse_level <= fine_level <= self.L:
            raise DomainError(f"invalid level pair ({coarse_level}, {fine_level})")
        idx = np.arange(self.meshes[coarse_level].n_nodes)
        for lev in range(coarse_level + 1, fine_level + 1):
            idx = self.coarse_to_fine[lev - 1][idx]
        return idx


def build_hierarchy(m0=4, L=0, max_side=DEFAULT_MAX_SIDE):
    """Uniformly refined hierarchy with ``m0 * 2**l`` cells per side on level ``l``.

    Raises
    ------
    ResourceError
        If a level would have more than ``max_side`` nodes per side.
    """
    if m0 < 2:
        raise InputError(f"m0 must be >= 2, got {m0}")
    if L < 0:
        raise InputError(f"L must be >= 0, got {L}")
    for lev in range(L + 1):
        n_side = m0 * 2**lev + 1
        if n_side > max_side:
            raise ResourceError(
                f"level {lev} needs {n_side} nodes per side, exceeding the cap of {max_side}"
            )
    meshes = [structured_mesh(m0 * 2**lev, level=lev) for lev in range(L + 1)]
    maps = []
    for lev in range(1, L + 1):
        nc = m0 * 2 ** (lev - 1)
        jc, ic = np.divmod(np.arange((nc + 1) ** 2), nc + 1)
        m = (2 * jc) * (2 * nc + 1) + 2 * ic
        m.setflags(write=False)
        maps.append(m)
    return MeshHierarchy(meshes=meshes, coarse_to_fine=maps)


def locate_point(mesh, x):
    """Find the triangle containing ``x`` and its barycentric coordinates.

    Points on shared edges or vertices go to the lowest-indexed containing
    triangle.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise DomainError(f"expected a finite 2D point, got {x!r}")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError(f"point {tuple(x)} lies outside the closed unit square")
    n = mesh.n_cells
    ci, cj = np.floor(x * n).astype(int)
    cand = []
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            i, j = ci + di, cj + dj
            if 0 <= i < n and 0 <= j < n:
                base = 2 * (j * n + i)
                cand.extend((base, base + 1))
    cand = np.array(sorted(cand))
    bary = _barycentric(mesh, cand, x)
    inside = np.all(bary >= -_BARY_TOL, axis=1)
    k = int(np.argmax(inside))
    if not inside[k]:  # pragma: no cover - candidates always cover the point
        raise DomainError(f"no triangle contains {tuple(x)}")
    lam = np.clip(bary[k], 0.0, 1.0)
    lam /= lam.sum()
    return int(cand[k]), lam


def _barycentric(mesh, tri_idx, x):
    p = mesh.nodes[mesh.triangles[tri_idx]]
    v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
    det = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])
    l1 = ((x[0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (x[1] - v0[:, 1])) / det
    l2 = ((v1[:, 0] - v0[:, 0]) * (x[1] - v0[:, 1]) - (x[0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def restrict_nodal(hierarchy, fine_level, values):
    """Subsample nodal values from ``fine_level`` onto ``fine_level - 1``."""
    if fine_level < 1 or fine_level > hierarchy.L:
        raise DomainError(f"cannot restrict from level {fine_level}")
    values = np.asarray(values)
    n_fine = hierarchy[fine_level].n_nodes
    if values.shape[0] != n_fine:
        raise InputError(f"expected {n_fine} nodal values, got {values.shape[0]}")
    return values[hierarchy.coarse_to_fine[fine_level - 1]]
