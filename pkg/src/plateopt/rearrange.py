"""Discrete rearrangement classes and bathtub-type selection on element fields.

A density is piecewise constant on triangles and takes values in the class
densities ``c_1 < ... < c_m``. Because element areas are finite, the area of
each material can only match its target up to one element.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

MIN = "min"
MAX = "max"


class QuantizationWarning(UserWarning):
    """Bisection could not bring an area within tolerance of its target."""


class NoSwapAvailable(RuntimeError):
    pass


@dataclass(frozen=True)
class RearrangementClass:
    densities: tuple
    target_areas: tuple

    def __post_init__(self):
        c = tuple(float(x) for x in self.densities)
        s = tuple(float(x) for x in self.target_areas)
        object.__setattr__(self, "densities", c)
        object.__setattr__(self, "target_areas", s)
        if len(c) < 2:
            raise ValueError("a rearrangement class needs at least two materials")
        if len(s) != len(c):
            raise ValueError("densities and target_areas must have the same length")
        if c[0] <= 0 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError(f"densities must be positive and strictly increasing: {c}")
        if any(x <= 0 for x in s):
            raise ValueError(f"target areas must be positive: {s}")

    @property
    def m(self) -> int:
        return len(self.densities)

    @property
    def total_area(self) -> float:
        return math.fsum(self.target_areas)

    def check_domain(self, areas):
        """Raise unless the targets add up to the mesh area within one element."""
        areas = np.asarray(areas)
        gap = abs(self.total_area - float(np.sum(areas)))
        if gap > float(areas.max()):
            raise ValueError(f"target areas sum to {self.total_area:.6g} but the mesh area is "
                             f"{float(np.sum(areas)):.6g}")

    def fitted(self, areas) -> "RearrangementClass":
        """Same class with target areas rescaled to the mesh total area."""
        total = float(np.sum(areas))
        return RearrangementClass(self.densities,
                                  tuple(x * total / self.total_area for x in self.target_areas))

    @classmethod
    def from_fractions(cls, densities, fractions, areas):
        total = float(np.sum(areas))
        fr = np.asarray(fractions, dtype=float)
        return cls(tuple(densities), tuple(fr / fr.sum() * total))


@dataclass(frozen=True, eq=False)
class DensityField:
    values: np.ndarray
    rclass: RearrangementClass
    areas: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        a = np.asarray(self.areas, dtype=float)
        if v.shape != a.shape:
            raise ValueError(f"density has {v.size} values for {a.size} elements")
        if not np.all(np.isin(v, self.rclass.densities)):
            raise ValueError("density takes values outside the class densities")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_labels(cls, labels, rclass, areas):
        return cls(np.asarray(rclass.densities)[np.asarray(labels)], rclass, areas)

    @property
    def labels(self) -> np.ndarray:
        return np.searchsorted(self.rclass.densities, self.values)

    @property
    def achieved_areas(self) -> np.ndarray:
        return np.bincount(self.labels, weights=self.areas, minlength=self.rclass.m)

    def area_error(self) -> float:
        return float(np.max(np.abs(self.achieved_areas - np.asarray(self.rclass.target_areas))))

    def in_class(self) -> bool:
        return self.area_error() <= float(np.max(self.areas)) * (1 + 1e-9)

    def objective(self, f) -> float:
        """``sum_T rho_T f_T |T|``, the discrete ``int rho f``."""
        return float(np.sum(self.values * np.asarray(f) * self.areas))

    def __eq__(self, other):
        return isinstance(other, DensityField) and np.array_equal(self.values, other.values)

    __hash__ = None


def distribution_function(f, areas, s) -> float:
    """Area of the elements where ``f > s``."""
    f = np.asarray(f)
    return float(np.sum(np.asarray(areas)[f > s]))


def _cut_labels(order, areas, rclass):
    """Assign materials 0..m-1 along ``order``, cutting at cumulative targets.

    Each cut is the prefix whose cumulative area is closest to the running
    target sum (ties go to the shorter prefix), so every material lands
    within one element area of its target.
    """
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(areas)[order])])
    targets = np.cumsum(rclass.target_areas)[:-1]
    labels = np.empty(len(order), dtype=np.int64)
    start = 0
    for i, t in enumerate(targets):
        k = int(np.searchsorted(cum, t))
        k = min(max(k, start), len(cum) - 1)
        if k > start and abs(cum[k - 1] - t) <= abs(cum[k] - t):
            k -= 1
        labels[order[start:k]] = i
        start = k
    labels[order[start:]] = rclass.m - 1
    return labels


def _order(f, mode):
    f = np.asarray(f, dtype=float)
    idx = np.arange(len(f))
    key = -f if mode == MIN else f
    return np.lexsort((idx, key))


def bathtub_minimize(f, rclass, areas, method="sort", tol=None) -> DensityField:
    """Member of the class minimizing ``sum rho f |T|``: lightest material where ``f`` is largest."""
    return _bathtub(f, rclass, areas, MIN, method, tol)


def bathtub_maximize(f, rclass, areas, method="sort", tol=None) -> DensityField:
    """Member of the class maximizing ``sum rho f |T|``: heaviest material where ``f`` is largest."""
    return _bathtub(f, rclass, areas, MAX, method, tol)


def _bathtub(f, rclass, areas, mode, method, tol):
    f = np.asarray(f, dtype=float)
    areas = np.asarray(areas, dtype=float)
    if np.any(f < 0):
        raise ValueError("f must be non-negative")
    if method == "sort":
        labels = _cut_labels(_order(f, mode), areas, rclass)
    elif method == "bisection":
        labels = levels_bisection(f, rclass, areas, mode, tol).labels
    else:
        raise ValueError(f"unknown bathtub method {method!r}")
    return DensityField.from_labels(labels, rclass, areas)


@dataclass(frozen=True)
class Levels:
    thresholds: np.ndarray
    labels: np.ndarray


def levels_bisection(f, rclass, areas, mode=MIN, tol=None, max_bisections=200) -> Levels:
    """Thresholds ``t_1..t_{m-1}`` by bisection on the distribution function.

    ``mode="min"`` builds the minimizing layout: material ``i`` takes
    ``{f > t_i}`` of what the earlier materials left over. ``mode="max"``
    mirrors it with ``{f <= t_i}``. The area target of material ``i`` is
    corrected for the quantization error already committed by materials
    ``1..i-1``. When no threshold gets within ``tol`` (the distribution
    function jumps by more than ``tol``) the closest achievable area is used
    and a :class:`QuantizationWarning` is emitted; elements tied at the
    threshold are split by element index.
    """
    f = np.asarray(f, dtype=float)
    areas = np.asarray(areas, dtype=float)
    if mode not in (MIN, MAX):
        raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
    if np.any(f < 0):
        raise ValueError("f must be non-negative")
    if tol is None:
        tol = 0.499 * float(areas.min())
    if not tol > 0:
        raise ValueError("tol must be positive")

    labels = np.full(len(f), rclass.m - 1, dtype=np.int64)
    remaining = np.ones(len(f), dtype=bool)
    thresholds = []
    assigned = 0.0
    for i in range(rclass.m - 1):
        target = math.fsum(rclass.target_areas[: i + 1]) - assigned

        def taken_area(theta):
            sel = remaining & ((f > theta) if mode == MIN else (f <= theta))
            return float(np.sum(areas[sel]))

        # f >= 0, so a negative lower bracket keeps zero-valued elements selectable
        lo, hi = -1.0, float(f[remaining].max()) if remaining.any() else 0.0
        theta = 0.5 * (lo + hi)
        found = False
        for _ in range(max_bisections):
            theta = 0.5 * (lo + hi)
            F = taken_area(theta)
            if abs(F - target) < tol:
                found = True
                break
            # MIN: F decreases in theta; MAX: F increases in theta
            if (F < target) == (mode == MIN):
                hi = theta
            else:
                lo = theta
        if found:
            sel = remaining & ((f > theta) if mode == MIN else (f <= theta))
        else:
            # the target sits inside a jump of F; fill the jump in index order
            strict = remaining & ((f > hi) if mode == MIN else (f <= lo))
            band = np.flatnonzero(remaining & ~strict & ((f > lo) if mode == MIN else (f <= hi)))
            band = band[_order(f[band], mode)]
            cum = float(np.sum(areas[strict])) + np.concatenate([[0.0], np.cumsum(areas[band])])
            k = int(np.argmin(np.abs(cum - target)))
            sel = strict.copy()
            sel[band[:k]] = True
            theta = hi if mode == MIN else lo
            if abs(cum[k] - target) >= tol:
                warnings.warn(f"material {i + 1}: area {cum[k]:.6g} vs target {target:.6g} exceeds "
                              f"tolerance {tol:.3g}", QuantizationWarning, stacklevel=2)
        labels[sel] = i
        remaining &= ~sel
        assigned += float(np.sum(areas[sel]))
        thresholds.append(theta)
    return Levels(np.array(thresholds), labels)


def partial_swap(rho: DensityField, f, areas, swap_area) -> DensityField:
    """Exchange small equal-area pieces between two materials to lower ``sum rho f |T|``.

    Material pairs ``(j, i)`` with ``c_j < c_i`` are tried by decreasing
    density gap. Within a pair, ``B`` collects the elements of material ``i``
    with the largest ``f`` and ``A`` those of material ``j`` with the
    smallest ``f``; ``A`` becomes material ``i`` and ``B`` material ``j``.
    ``B`` grows until its area reaches ``swap_area`` (at least one element)
    and ``A`` is sized so that material ``i`` stays as close as possible to
    its target area. A pair qualifies when both the total and the mean of
    ``f`` over ``B`` exceed those over ``A``.
    """
    if not swap_area > 0:
        raise ValueError("swap_area must be positive")
    f = np.asarray(f, dtype=float)
    areas = np.asarray(areas, dtype=float)
    rclass = rho.rclass
    labels = rho.labels
    used = np.unique(labels)
    if len(used) < 2:
        raise NoSwapAvailable("density uses a single material")
    c = np.asarray(rclass.densities)
    pairs = [(j, i) for j in used for i in used if j < i]
    pairs.sort(key=lambda p: (-(c[p[1]] - c[p[0]]), p[0], p[1]))
    achieved = rho.achieved_areas
    slack = float(areas.max()) * (1 + 1e-9)
    for j, i in pairs:
        hi_el = np.flatnonzero(labels == i)
        lo_el = np.flatnonzero(labels == j)
        hi_el = hi_el[np.lexsort((hi_el, -f[hi_el]))]  # largest f first
        lo_el = lo_el[np.lexsort((lo_el, f[lo_el]))]  # smallest f first
        cum_b = np.cumsum(areas[hi_el])
        kb = min(int(np.searchsorted(cum_b, swap_area)) + 1, len(hi_el))
        if kb > 1 and abs(cum_b[kb - 2] - swap_area) <= abs(cum_b[kb - 1] - swap_area):
            kb -= 1
        deficit = rclass.target_areas[i] - achieved[i]
        cum_a = np.cumsum(areas[lo_el])
        # shrink B until a matching A keeps both materials within one element of target
        while kb >= 1:
            area_b = cum_b[kb - 1]
            ka = 1 + int(np.argmin(np.abs(cum_a - area_b - deficit)))
            shift = cum_a[ka - 1] - area_b
            if (abs(achieved[i] + shift - rclass.target_areas[i]) <= slack
                    and abs(achieved[j] - shift - rclass.target_areas[j]) <= slack):
                break
            kb -= 1
        if kb == 0:
            continue
        A, B = lo_el[:ka], hi_el[:kb]
        int_a = float(np.sum(f[A] * areas[A]))
        int_b = float(np.sum(f[B] * areas[B]))
        if int_b > int_a and int_b / area_b > int_a / cum_a[ka - 1]:
            new = labels.copy()
            new[A] = i
            new[B] = j
            out = DensityField.from_labels(new, rclass, areas)
            # guard against improvements lost to rounding
            if out.objective(f) < rho.objective(f):
                return out
    raise NoSwapAvailable("no pair of element sets lowers the weighted objective")


def l2_distance(rho_a, rho_b, areas) -> float:
    a = np.asarray(getattr(rho_a, "values", rho_a), dtype=float)
    b = np.asarray(getattr(rho_b, "values", rho_b), dtype=float)
    areas = np.asarray(areas, dtype=float)
    if a.shape != b.shape or a.shape != areas.shape:
        raise ValueError("density fields and areas must have the same length")
    return float(np.sqrt(np.sum((a - b) ** 2 * areas)))


def stripes(centroids, rclass, areas) -> DensityField:
    """Materials in vertical stripes, lightest on the left."""
    order = np.lexsort((np.arange(len(areas)), np.asarray(centroids)[:, 0]))
    return DensityField.from_labels(_cut_labels(order, areas, rclass), rclass, areas)


def random_layout(rclass, areas, seed) -> DensityField:
    order = np.random.default_rng(seed).permutation(len(areas))
    return DensityField.from_labels(_cut_labels(order, areas, rclass), rclass, areas)


def save_density(rho: DensityField, path):
    header = {
        "densities": list(rho.rclass.densities),
        "target_areas": list(rho.rclass.target_areas),
        "achieved_areas": [float(x) for x in rho.achieved_areas],
        "n_elements": int(len(rho.values)),
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        for k, v in enumerate(rho.values.tolist()):
            fh.write(f"{k} {v!r}\n")


def load_density(path, areas) -> DensityField:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError("density file must start with a '# {json}' header")
        header = json.loads(first[1:])
        rows = [line.split() for line in fh if line.strip() and not line.startswith("#")]
    idx = np.array([int(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows])
    if len(vals) != header["n_elements"] or not np.array_equal(np.sort(idx), np.arange(len(idx))):
        raise ValueError("density file element indices are incomplete")
    values = np.empty(len(vals))
    values[idx] = vals
    rclass = RearrangementClass(tuple(header["densities"]), tuple(header["target_areas"]))
    return DensityField(values, rclass, areas)
