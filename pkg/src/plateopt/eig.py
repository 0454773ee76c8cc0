"""Principal eigenpair of ``K u = lambda M u`` by inverse iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import splu

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500
DEGENERACY_GAP = 1e-8
STALL = 25
BLOCK = 4


class ConvergenceError(RuntimeError):
    """Inverse iteration hit ``max_iter``; ``eigenpair`` holds the last iterate."""

    def __init__(self, message, eigenpair):
        super().__init__(message)
        self.eigenpair = eigenpair


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalue, eigenvector with ``u^T M u = 1``, and the relative residual."""

    value: float
    u: np.ndarray
    residual: float
    iterations: int
    near_degenerate: bool = False


def _as_matrix(obj):
    mat = getattr(obj, "stiffness", None)
    if mat is None:
        mat = getattr(obj, "matrix", obj)
    return sp.csr_matrix(mat) if not sp.issparse(mat) else mat.tocsr()


def rayleigh_quotient(u, K, M) -> float:
    Kmat, Mmat = _as_matrix(K), _as_matrix(M)
    u = np.asarray(u, dtype=float)
    den = float(u @ (Mmat @ u))
    if not den > 0:
        raise ValueError("u has zero M-norm")
    return float(u @ (Kmat @ u)) / den


def _fix_sign(u, load):
    s = float(load @ u) if load is not None else float(np.sum(u))
    scale = max(float(np.abs(load).max()) if load is not None else 1.0, 1e-300)
    if abs(s) <= 1e-12 * scale * float(np.abs(u).sum()):
        s = u[np.argmax(np.abs(u))]
    return -u if s < 0 else u


def principal_eigenpair(K, M, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, u0=None) -> EigenPair:
    """Smallest eigenvalue of ``K u = lambda M u`` and its M-normalized eigenvector.

    ``K`` may be a :class:`~plateopt.fem.DiscreteOperator` (its cached
    factorization is reused) or any symmetric positive definite matrix; ``M``
    a :class:`~plateopt.fem.MassMatrix` or matrix. ``u0`` warm-starts the
    iteration. The sign is fixed so that the density-weighted mean of ``u``
    is non-negative.
    """
    if not 0 < tol <= 1e-2:
        raise ValueError(f"tol must lie in (0, 1e-2], got {tol}")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    Kmat, Mmat = _as_matrix(K), _as_matrix(M)
    n = Kmat.shape[0]
    load = getattr(M, "load", None)
    factor = getattr(K, "factor", None) if hasattr(K, "stiffness") else None
    try:
        if factor is None:
            factor = splu(Kmat.tocsc())
    except RuntimeError as exc:
        raise NumericalError(f"factorization of K failed: {exc}") from exc

    x = np.asarray(u0, dtype=float).copy() if u0 is not None else None
    if x is None or x.shape != (n,) or not np.any(x):
        x = np.array(load, dtype=float) if load is not None else np.ones(n)
        if not np.any(x):
            x = np.ones(n)
    mx = Mmat @ x
    nrm = float(x @ mx)
    if not nrm > 0:
        x = np.ones(n)
        mx = Mmat @ x
        nrm = float(x @ mx)
    x /= np.sqrt(nrm)
    mx /= np.sqrt(nrm)

    lam, res = np.inf, np.inf
    history = []
    for it in range(1, max_iter + 1):
        y = factor.solve(mx)
        if not np.all(np.isfinite(y)):
            raise NumericalError("non-finite iterate in inverse iteration")
        my = Mmat @ y
        nrm = float(y @ my)
        if not nrm > 0:
            raise NumericalError("iterate lost its M-norm; is M positive definite?")
        s = np.sqrt(nrm)
        x, mx = y / s, my / s
        kx = Kmat @ x
        lam = float(x @ kx)
        r = kx - lam * mx
        res = float(np.linalg.norm(r) / np.linalg.norm(kx))
        if res <= tol:
            return EigenPair(lam, _fix_sign(x, load), res, it)
        history.append(res)
        # round-off floor: no halving of the residual over the last STALL iterations
        if len(history) > STALL and min(history[-STALL:]) > 0.5 * history[-STALL - 1]:
            break

    # slow or stalled: the second eigenvalue is close to the first. Switch to
    # block inverse iteration with Rayleigh-Ritz, which converges at the rate
    # lambda_1 / lambda_{p+1} and resolves the near-equal pair explicitly.
    last = EigenPair(lam, _fix_sign(x, load), res, it)
    if n < 2:
        raise ConvergenceError(
            f"inverse iteration did not converge in {it} iterations (residual {res:.3e})", last)
    return _block_iteration(Kmat, Mmat, factor, x, load, tol, max_iter - it, it, last)


def _block_iteration(Kmat, Mmat, factor, x, load, tol, budget, used, last):
    n = Kmat.shape[0]
    p = min(BLOCK, n)
    rng = np.random.default_rng(0)
    X = np.column_stack([x] + [rng.standard_normal(n) for _ in range(p - 1)])
    history = []
    it = 0
    vals = np.array([last.value])
    res = last.residual
    for it in range(1, max(budget, 1) + 1):
        Y = factor.solve(np.asarray(Mmat @ X))
        if not np.all(np.isfinite(Y)):
            raise NumericalError("non-finite iterate in block inverse iteration")
        Y, _ = np.linalg.qr(Y)
        try:
            vals, V = eigh(Y.T @ (Kmat @ Y), Y.T @ (Mmat @ Y))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Rayleigh-Ritz projection failed: {exc}") from exc
        X = Y @ V
        x = X[:, 0]
        kx = Kmat @ x
        res = float(np.linalg.norm(kx - vals[0] * (Mmat @ x)) / np.linalg.norm(kx))
        gap = (vals[1] - vals[0]) / abs(vals[1]) if p > 1 else np.inf
        if res <= tol:
            return EigenPair(float(vals[0]), _fix_sign(x, load), res, used + it,
                             near_degenerate=bool(gap < DEGENERACY_GAP))
        history.append(res)
        if len(history) > STALL and min(history[-STALL:]) > 0.5 * history[-STALL - 1]:
            if gap < DEGENERACY_GAP:
                return EigenPair(float(vals[0]), _fix_sign(x, load), res, used + it,
                                 near_degenerate=True)
            break
    last = EigenPair(float(vals[0]), _fix_sign(X[:, 0], load), res, used + it)
    raise ConvergenceError(
        f"inverse iteration did not converge in {used + it} iterations (residual {res:.3e})", last)
