"""Ground truth for verification: exhaustive search on tiny meshes and closed forms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import iv, jv

from . import fem
from .eig import principal_eigenpair
from .rearrange import DensityField, RearrangementClass

MAX_ASSIGNMENTS = 10**6


class OracleRefused(RuntimeError):
    def __init__(self, count):
        super().__init__(f"instance has more than {MAX_ASSIGNMENTS} feasible assignments "
                         f"(counted at least {count}); refusing to enumerate")
        self.count = count


@dataclass(frozen=True, eq=False)
class OracleResult:
    optimum_value: float
    density: DensityField
    description: str
    count: int
    values: np.ndarray  # eigenvalue of every enumerated assignment, in enumeration order


def count_feasible(areas, rclass: RearrangementClass, area_tol=None, limit=MAX_ASSIGNMENTS) -> int:
    """Number of feasible label vectors, or a lower bound once it passes ``limit``.

    Dynamic programming over elements; the state is the tuple of areas used
    so far, so equal-area meshes collapse to the multinomial count quickly.
    """
    areas = np.asarray(areas, dtype=float)
    tol = _default_tol(areas) if area_tol is None else area_tol
    targets = np.asarray(rclass.target_areas)
    suffix = np.concatenate([np.cumsum(areas[::-1])[::-1], [0.0]])
    states = {tuple([0.0] * rclass.m): 1}
    for k, a in enumerate(areas):
        nxt = {}
        for used, cnt in states.items():
            for i in range(rclass.m):
                u = list(used)
                u[i] = round(u[i] + a, 9)
                if u[i] > targets[i] + tol:
                    continue
                if np.sum(np.maximum(targets - tol - np.array(u), 0)) > suffix[k + 1] + 1e-12:
                    continue
                key = tuple(u)
                nxt[key] = nxt.get(key, 0) + cnt
        states = nxt
        if len(states) > limit:
            return len(states)
    return sum(c for u, c in states.items() if np.all(np.abs(np.array(u) - targets) <= tol))


def _default_tol(areas):
    return 0.5 * float(areas.max()) * (1 + 1e-9)


def feasible_assignments(areas, rclass: RearrangementClass, area_tol=None, limit=MAX_ASSIGNMENTS):
    """All label vectors whose material areas are within ``area_tol`` of the targets.

    ``area_tol`` defaults to half the largest element area, so on equal-area
    meshes with targets that are whole multiples of the element area the
    feasible set is exactly the multinomial set of element counts. Raises
    :class:`OracleRefused` before enumerating when there are more than
    ``limit`` of them.
    """
    areas = np.asarray(areas, dtype=float)
    n, m = len(areas), rclass.m
    tol = _default_tol(areas) if area_tol is None else area_tol
    total = count_feasible(areas, rclass, tol, limit)
    if total > limit:
        raise OracleRefused(total)
    targets = np.asarray(rclass.target_areas)
    suffix = np.concatenate([np.cumsum(areas[::-1])[::-1], [0.0]])
    out = []
    labels = np.zeros(n, dtype=np.int64)
    used = np.zeros(m)

    def rec(k):
        if k == n:
            if np.all(np.abs(used - targets) <= tol):
                out.append(labels.copy())
            return
        for i in range(m):
            used[i] += areas[k]
            # prune: over target, or the rest cannot fill every material
            if used[i] <= targets[i] + tol and np.sum(np.maximum(targets - tol - used, 0)) <= suffix[k + 1] + 1e-12:
                labels[k] = i
                rec(k + 1)
            used[i] -= areas[k]

    rec(0)
    return out


def exhaustive_extremum(mesh, rclass: RearrangementClass, bc_kind, direction,
                        area_tol=None, tol=1e-12, max_iter=2000) -> OracleResult:
    """Solve the eigenproblem for every feasible layout and return the extremum."""
    op = fem.assemble(mesh, bc_kind)
    areas = op.areas
    layouts = feasible_assignments(areas, rclass, area_tol)
    if not layouts:
        raise ValueError("no feasible assignment for these target areas")
    c = np.asarray(rclass.densities)
    values = np.empty(len(layouts))
    for k, labels in enumerate(layouts):
        M = fem.assemble_mass(mesh, c[labels], op)
        values[k] = principal_eigenpair(op, M, tol=tol, max_iter=max_iter).value
    best = int(np.argmin(values) if direction == "minimize" else np.argmax(values))
    desc = (f"{bc_kind} {direction} over {len(layouts)} layouts of {mesh.n_triangles} elements, "
            f"densities {rclass.densities}")
    return OracleResult(float(values[best]), DensityField.from_labels(layouts[best], rclass, areas),
                        desc, len(layouts), values)


def bessel_j0_root() -> float:
    return brentq(lambda x: jv(0, x), 2.0, 3.0, xtol=1e-15)


def clamped_disk_root() -> float:
    """First positive root of ``J0(k) I1(k) + I0(k) J1(k) = 0``."""
    return brentq(lambda k: jv(0, k) * iv(1, k) + iv(0, k) * jv(1, k), 2.5, 3.8, xtol=1e-15)


def analytic_homogeneous(domain, bc_kind, c=1.0) -> float:
    """Principal eigenvalue of a homogeneous plate with density ``c``.

    ``domain`` is ``("disk", R)`` or ``("rectangle", a, b)``. Supported:
    hinged disk, hinged rectangle and clamped disk.
    """
    kind, *dims = domain
    if kind == "disk" and bc_kind == fem.HINGED:
        (R,) = dims
        return (bessel_j0_root() ** 2 / R**2) ** 2 / c
    if kind == "disk" and bc_kind == fem.CLAMPED:
        (R,) = dims
        return clamped_disk_root() ** 4 / (R**4 * c)
    if kind == "rectangle" and bc_kind == fem.HINGED:
        a, b = dims
        return math.pi**4 * (1 / a**2 + 1 / b**2) ** 2 / c
    raise ValueError(f"no closed form for a {bc_kind} {kind}")


def double_hexagon() -> "TriMesh":
    """Ten equilateral triangles: the stars of two adjacent lattice points.

    Two interior vertices, eight on the boundary, all elements of equal area.
    """
    from .mesh import mesh_from_triangles

    s = math.sqrt(3) / 2
    # interior points P=(0,0), Q=(1,0); boundary ring counter-clockwise
    pts = np.array([[0, 0], [1, 0],
                    [2, 0], [1.5, s], [0.5, s], [-0.5, s], [-1, 0], [-0.5, -s], [0.5, -s], [1.5, -s]])
    tris = [(0, 8, 1), (0, 1, 4), (0, 4, 5), (0, 5, 6), (0, 6, 7), (0, 7, 8),
            (1, 8, 9), (1, 9, 2), (1, 2, 3), (1, 3, 4)]
    return mesh_from_triangles(pts, tris)
