"""Discrete bi-Laplacian operators and density-weighted mass matrices.

Hinged (Navier) plates use the mixed Ciarlet-Raviart method with P1 spaces
for the displacement ``u`` and for ``w = -Laplace(u)``. Under Navier
conditions both vanish on the boundary, so the system splits into two
Dirichlet Laplacians and condenses to ``K = A Mw^-1 A`` with ``Mw`` the lumped
P1 mass.

Clamped plates use the nonconforming Morley element: vertex values plus the
normal derivative at each edge midpoint (times the edge length), with the
broken Hessian energy.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import TriMesh, element_measures

HINGED = "hinged"
CLAMPED = "clamped"
BC_KINDS = (HINGED, CLAMPED)

# Symmetric 6-point rule on the reference triangle, exact for degree 4.
# Columns: barycentric coordinates; weights sum to one.
_Q4_BARY = np.array([
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
])
_Q4_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_Q4_W = _Q4_W / _Q4_W.sum()


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness matrix restricted to the active (unconstrained) DOFs.

    ``elem_dofs`` holds the global DOF ids of each element and ``elem_mass``
    the unit-density local mass matrices, so that for any density the mass
    matrix is ``sum_T rho_T * elem_mass[T]``.
    """

    bc_kind: str
    stiffness: sp.csr_matrix
    n_dofs: int
    constrained_dofs: np.ndarray
    elem_dofs: np.ndarray
    elem_mass: np.ndarray
    elem_load: np.ndarray
    areas: np.ndarray
    n_vertices: int

    @cached_property
    def active_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Global DOF id -> active index, -1 for constrained DOFs."""
        out = np.full(self.n_dofs, -1, dtype=np.int64)
        out[self.active_dofs] = np.arange(len(self.active_dofs))
        return out

    @property
    def n_active(self) -> int:
        return len(self.active_dofs)

    @cached_property
    def factor(self):
        """Sparse LU factorization of the stiffness, computed once and reused."""
        if self.n_active == 0:
            raise AssemblyError("no active degrees of freedom; mesh has no interior vertex")
        try:
            return splu(self.stiffness.tocsc())
        except RuntimeError as exc:
            raise AssemblyError(f"stiffness factorization failed: {exc}") from exc

    def expand(self, u) -> np.ndarray:
        """Active-DOF vector -> full DOF vector with zeros on constrained DOFs."""
        full = np.zeros(self.n_dofs)
        full[self.active_dofs] = u
        return full

    def vertex_values(self, u) -> np.ndarray:
        """Displacement at mesh vertices (vertex DOFs come first in both elements)."""
        return self.expand(u)[: self.n_vertices]


@dataclass(frozen=True, eq=False)
class MassMatrix:
    matrix: sp.csr_matrix
    load: np.ndarray  # integral of rho * basis function, for the sign convention
    density: np.ndarray

    @property
    def density_version(self) -> int:
        return hash(self.density.tobytes())


def _scatter(elem_dofs, local, size, keep=None):
    """Assemble element matrices; ``keep`` maps global DOFs to rows (-1 drops)."""
    k = elem_dofs.shape[1]
    rows = np.repeat(elem_dofs, k, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, k)).ravel()
    vals = local.reshape(-1)
    if keep is not None:
        rows, cols = keep[rows], keep[cols]
        ok = (rows >= 0) & (cols >= 0)
        rows, cols, vals = rows[ok], cols[ok], vals[ok]
    return sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()


def _p1_gradients(mesh: TriMesh, areas):
    p = mesh.vertices[mesh.triangles]
    # grad of barycentric coordinate k is the rotated opposite edge over 2|T|
    grads = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grads[:, k, 0] = -e[:, 1]
        grads[:, k, 1] = e[:, 0]
    return grads / (2 * areas[:, None, None])


def assemble_hinged(mesh: TriMesh) -> DiscreteOperator:
    areas = element_measures(mesh).areas
    nv = mesh.n_vertices
    grads = _p1_gradients(mesh, areas)
    local_k = np.einsum("tid,tjd->tij", grads, grads) * areas[:, None, None]
    local_m = areas[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    constrained = mesh.boundary_vertices.copy()
    keep = np.full(nv, -1, dtype=np.int64)
    active = np.setdiff1d(np.arange(nv), constrained)
    keep[active] = np.arange(len(active))
    if len(active) == 0:
        raise AssemblyError("mesh has no interior vertex")
    A = _scatter(mesh.triangles, local_k, len(active), keep)
    lumped = np.zeros(nv)
    np.add.at(lumped, mesh.triangles.ravel(), np.repeat(areas / 3.0, 3))
    lumped = lumped[active]
    if np.any(lumped <= 0):
        raise AssemblyError("degenerate mesh: non-positive lumped mass")
    K = (A @ sp.diags(1.0 / lumped) @ A).tocsr()
    K = ((K + K.T) * 0.5).tocsr()
    load = np.repeat((areas / 3.0)[:, None], 3, axis=1)
    return DiscreteOperator(HINGED, K, nv, constrained, mesh.triangles.copy(), local_m, load,
                            areas, nv)


def _morley_local(mesh: TriMesh, areas):
    """Morley basis coefficients in scaled monomials, per triangle.

    Returns (coef, centre, scale) where basis function j on triangle
    t is ``sum_k coef[t, k, j] * m_k((x - centre) / scale)`` with monomials
    ``1, s, r, s^2, s r, r^2``.
    """
    nt = mesh.n_triangles
    p = mesh.vertices[mesh.triangles]
    centre = p.mean(axis=1)
    scale = np.sqrt(areas)
    q = (p - centre[:, None, :]) / scale[:, None, None]
    edges = mesh.edges[mesh.triangle_edges]  # (nt, 3, 2) sorted global vertex ids
    a = mesh.vertices[edges[:, :, 0]]
    b = mesh.vertices[edges[:, :, 1]]
    t = b - a
    length = np.linalg.norm(t, axis=2, keepdims=True)
    t /= length
    normals = np.stack([t[:, :, 1], -t[:, :, 0]], axis=2)
    mid = (0.5 * (a + b) - centre[:, None, :]) / scale[:, None, None]
    D = np.zeros((nt, 6, 6))
    s, r = q[:, :, 0], q[:, :, 1]
    D[:, :3, :] = np.stack([np.ones_like(s), s, r, s * s, s * r, r * r], axis=2)
    ms, mr = mid[:, :, 0], mid[:, :, 1]
    zero = np.zeros_like(ms)
    ds = np.stack([zero, zero + 1, zero, 2 * ms, mr, zero], axis=2)
    dr = np.stack([zero, zero, zero + 1, zero, ms, 2 * mr], axis=2)
    # edge DOFs are length * normal derivative, which keeps K well scaled
    D[:, 3:, :] = (normals[:, :, 0:1] * ds + normals[:, :, 1:2] * dr) * (length / scale[:, None, None])
    try:
        coef = np.linalg.inv(D)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError("degenerate triangle in Morley assembly") from exc
    return coef, centre, scale


def _monomials(s, r):
    return np.stack([np.ones_like(s), s, r, s * s, s * r, r * r], axis=-1)


def assemble_clamped(mesh: TriMesh) -> DiscreteOperator:
    areas = element_measures(mesh).areas
    nv = mesh.n_vertices
    ne = len(mesh.edges)
    coef, centre, scale = _morley_local(mesh, areas)
    inv2 = 1.0 / scale ** 2
    hxx = 2 * coef[:, 3, :] * inv2[:, None]
    hxy = coef[:, 4, :] * inv2[:, None]
    hyy = 2 * coef[:, 5, :] * inv2[:, None]
    local_k = (np.einsum("ti,tj->tij", hxx, hxx) + 2 * np.einsum("ti,tj->tij", hxy, hxy)
               + np.einsum("ti,tj->tij", hyy, hyy)) * areas[:, None, None]
    # monomial values at the quadrature points of each triangle, in scaled coordinates
    p = mesh.vertices[mesh.triangles]
    xq = np.einsum("qk,tkd->tqd", _Q4_BARY, p)
    sq = (xq - centre[:, None, :]) / scale[:, None, None]
    phi = np.einsum("tqk,tkj->tqj", _monomials(sq[..., 0], sq[..., 1]), coef)
    local_m = np.einsum("q,tqi,tqj->tij", _Q4_W, phi, phi) * areas[:, None, None]
    load = np.einsum("q,tqi->ti", _Q4_W, phi) * areas[:, None]
    elem_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
    constrained = np.concatenate([mesh.boundary_vertices,
                                  nv + np.flatnonzero(mesh.boundary_edge_mask)])
    n = nv + ne
    keep = np.full(n, -1, dtype=np.int64)
    active = np.setdiff1d(np.arange(n), constrained)
    keep[active] = np.arange(len(active))
    K = _scatter(elem_dofs, local_k, len(active), keep)
    K = ((K + K.T) * 0.5).tocsr()
    return DiscreteOperator(CLAMPED, K, n, constrained, elem_dofs, local_m, load, areas, nv)


def assemble(mesh: TriMesh, bc_kind: str) -> DiscreteOperator:
    if bc_kind == HINGED:
        return assemble_hinged(mesh)
    if bc_kind == CLAMPED:
        return assemble_clamped(mesh)
    raise ValueError(f"unknown boundary condition {bc_kind!r}; expected one of {BC_KINDS}")


def _density_values(rho, n_triangles):
    values = np.asarray(getattr(rho, "values", rho), dtype=float)
    if values.shape != (n_triangles,):
        raise ValueError(f"density has shape {values.shape}, expected ({n_triangles},)")
    return values


def assemble_mass(mesh: TriMesh, rho, op: DiscreteOperator, active_only=True) -> MassMatrix:
    """Mass matrix ``M_ij = sum_T rho_T int_T phi_i phi_j``.

    With ``active_only=False`` the matrix spans every DOF, including those
    removed by boundary conditions.
    """
    values = _density_values(rho, mesh.n_triangles)
    if len(op.areas) != mesh.n_triangles:
        raise ValueError("operator was assembled on a different mesh")
    local = values[:, None, None] * op.elem_mass
    load_local = values[:, None] * op.elem_load
    if active_only:
        M = _scatter(op.elem_dofs, local, op.n_active, op.dof_map)
        load = np.zeros(op.n_dofs)
        np.add.at(load, op.elem_dofs.ravel(), load_local.ravel())
        load = load[op.active_dofs]
    else:
        M = _scatter(op.elem_dofs, local, op.n_dofs)
        load = np.zeros(op.n_dofs)
        np.add.at(load, op.elem_dofs.ravel(), load_local.ravel())
    values = values.copy()
    values.setflags(write=False)
    return MassMatrix(M, load, values)


def element_mean_square(op: DiscreteOperator, u) -> np.ndarray:
    """Per-element average of ``u_h^2``, integrated exactly.

    ``sum_T rho_T * f_T * |T|`` equals ``u^T M(rho) u`` for the same ``u``.
    """
    full = op.expand(u)
    ue = full[op.elem_dofs]
    f = np.einsum("ti,tij,tj->t", ue, op.elem_mass, ue) / op.areas
    return np.maximum(f, 0.0)
