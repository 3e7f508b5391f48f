"""Shared numerical kernels: Newton with line search, non-negative least
squares, symmetric eigendecomposition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class NewtonError(RuntimeError):
    """Newton failure: singular Jacobian, stalled line search or NaNs."""


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_norm: float
    history: list = field(default_factory=list)


def newton_solve(residual_fn, jacobian_fn, x0, tol=1e-9, max_iter=25,
                 *, linear_solve=None, norm_fn=None, max_halvings=8):
    """Damped Newton iteration with residual-norm backtracking.

    ``residual_fn(x)`` returns the residual vector, ``jacobian_fn(x)`` the
    Jacobian in whatever format ``linear_solve(J, r) -> dx`` understands
    (dense ``numpy.linalg.solve`` by default).  A step is halved, up to
    ``max_halvings`` times, until the residual norm strictly decreases; a
    non-finite trial residual also triggers halving.
    """
    if linear_solve is None:
        linear_solve = lambda J, r: np.linalg.solve(J, r)
    if norm_fn is None:
        norm_fn = lambda r: float(np.linalg.norm(r))

    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    if not np.all(np.isfinite(r)):
        raise NewtonError("non-finite residual at the initial guess")
    rn = norm_fn(r)
    history = [rn]
    for it in range(max_iter):
        if rn <= tol:
            return x, NewtonReport(True, it, rn, history)
        J = jacobian_fn(x)
        try:
            dx = linear_solve(J, -r)
        except Exception as exc:  # singular factorization
            raise NewtonError(f"linear solve failed at iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonError(f"singular Jacobian at iteration {it}")
        step = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + step * dx
            r_try = residual_fn(x_try)
            if np.all(np.isfinite(r_try)):
                rn_try = norm_fn(r_try)
                if rn_try < rn:
                    break
            step *= 0.5
        else:
            raise NewtonError(
                f"line search stalled at iteration {it} (residual {rn:.3e})"
            )
        x, r, rn = x_try, r_try, rn_try
        history.append(rn)
    if rn <= tol:
        return x, NewtonReport(True, max_iter, rn, history)
    raise NewtonError(f"no convergence in {max_iter} iterations (residual {rn:.3e})")


@dataclass
class NnlsResult:
    weights: np.ndarray
    active: np.ndarray
    residual: float
    iterations: int
    converged: bool = True

    def kkt_violation(self, C, b):
        """Max violation of the optimality conditions (0 when optimal or
        terminated early with the gradient still descending only on the
        active set)."""
        grad = C.T @ (C @ self.weights - b)  # gradient of 0.5*||C w - b||^2
        act = np.zeros(len(self.weights), dtype=bool)
        act[self.active] = True
        v_active = np.abs(grad[act]).max() if act.any() else 0.0
        v_inactive = float(max(0.0, -(grad[~act]).min())) if (~act).any() else 0.0
        return max(v_active, v_inactive)


def nnls(C, b, tol=0.0, *, max_iter=None, kkt_tol=None):
    """Lawson-Hanson active-set non-negative least squares.

    Terminates early once ``||C w - b|| <= tol * ||b||`` (the sparsity knob
    used by the empirical-quadrature training), otherwise runs to the KKT
    optimum.  Ties in the gradient selection break to the lowest index.  If
    the iteration cap is hit the best iterate is returned with
    ``converged=False``.
    """
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    if C.ndim != 2 or C.shape[1] < 1:
        raise ValueError("C must be a matrix with at least one column")
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    m, n = C.shape
    if max_iter is None:
        max_iter = max(3 * n, 30)
    bnorm = float(np.linalg.norm(b))
    col_norms = np.linalg.norm(C, axis=0)
    max_col = max(col_norms.max(), 1e-300)
    if kkt_tol is None:
        # gradient resolution limit: no column can still improve the fit by
        # more than a relative epsilon of the current residual
        kkt_rel = 100 * np.finfo(float).eps * np.sqrt(m)
    else:
        kkt_rel = kkt_tol

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    resid = b.copy()
    rnorm = bnorm

    def solve_passive():
        cols = np.flatnonzero(passive)
        Cp = C[:, cols]
        sol, *_ = sla.lstsq(Cp, b, lapack_driver="gelsd")
        # one step of iterative refinement: the weights are benign even when
        # the passive columns are nearly collinear, so this buys several
        # digits of achievable residual
        corr, *_ = sla.lstsq(Cp, b - Cp @ sol, lapack_driver="gelsd")
        z = np.zeros(n)
        z[cols] = sol + corr
        return z

    it = 0
    stall = 0
    while it < max_iter:
        if rnorm <= tol * bnorm:
            break
        w = C.T @ resid
        w[passive] = -np.inf
        j = int(np.argmax(w))  # argmax returns the lowest index on ties
        if w[j] <= kkt_rel * max_col * rnorm:
            break
        it += 1
        passive[j] = True
        z = solve_passive()
        # inner loop: restore feasibility by stepping toward z
        while True:
            neg = passive & (z <= 0.0)
            if not neg.any():
                break
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > 1e-300
            x[~passive] = 0.0
            z = solve_passive()
        x = z
        rnorm_prev = rnorm
        resid = b - C @ x
        rnorm = float(np.linalg.norm(resid))
        # numerical floor: no meaningful descent over several iterations
        if rnorm > rnorm_prev * (1.0 - 1e-12):
            stall += 1
            if stall >= 5:
                break
        else:
            stall = 0
    converged = rnorm <= tol * bnorm or it < max_iter
    active = np.flatnonzero(x > 0.0)
    keep = np.zeros(n, dtype=bool)
    keep[active] = True
    x = np.where(keep, x, 0.0)
    return NnlsResult(weights=x, active=active, residual=rnorm,
                      iterations=it, converged=converged)


def sym_eig(A, *, asym_tol=1e-12):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    A = np.asarray(A, dtype=float)
    scale = max(abs(A).max(), 1.0)
    if abs(A - A.T).max() > asym_tol * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]
