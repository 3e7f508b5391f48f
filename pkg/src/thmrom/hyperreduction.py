"""Empirical-quadrature training: constraint assembly, sparse weights,
reduced-mesh packing.

The sparse element weights are the approximate solution of a sparse
representation problem: keep the constant function exactly integrated and
keep Jacobian-preconditioned reduced residuals at training states unchanged,
while touching as few elements as possible.  Both requirements are rows of a
single least-squares system solved by non-negative least squares with an
early-termination tolerance; the right-hand side is the row action on the
all-ones (full quadrature) weight vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import nnls


@dataclass
class EqRule:
    """Sparse nonnegative element weights with bookkeeping."""

    weights: np.ndarray           # (n_elements,), >= 0, mostly zero
    residual: float               # achieved ||C w - b||
    delta_const: float            # |sum_k w_k |D_k| - |Omega||
    provenance: dict = field(default_factory=dict)

    @property
    def elems(self):
        return np.flatnonzero(self.weights > 0.0)

    @property
    def n_sampled(self):
        return int((self.weights > 0.0).sum())

    def consistent(self):
        w = self.weights
        return np.all(w >= 0.0) and np.array_equal(
            np.flatnonzero(w > 0.0), self.elems
        )


@dataclass
class EqConstraintSystem:
    """Stacked constraint matrix; the target is the full-quadrature action."""

    matrix: np.ndarray            # (n_rows, n_elements)
    block_slices: list            # provenance of row blocks
    areas: np.ndarray

    @property
    def rhs(self):
        return self.matrix.sum(axis=1)  # C @ rho_hf with rho_hf = ones


def stack_constraints(blocks, areas, *, normalize="area", labels=None):
    """Stack per-parameter constraint blocks and append the area row.

    ``normalize='area'`` rescales each block so its RMS row norm matches the
    norm of the constant-function (area) row: every parameter block and the
    area constraint then contribute comparably to the least-squares fit,
    regardless of the residual magnitudes reached during training.  ``None``
    leaves blocks as built.
    """
    areas = np.asarray(areas, dtype=float)
    area_norm = float(np.linalg.norm(areas))
    rows = []
    slices = []
    start = 0
    for i, blk in enumerate(blocks):
        blk = np.atleast_2d(np.asarray(blk, dtype=float))
        if normalize == "area":
            s = np.sqrt((blk**2).sum() / max(blk.shape[0], 1))
            if s > 0:
                blk = blk * (area_norm / s)
        rows.append(blk)
        label = labels[i] if labels is not None else i
        slices.append((label, slice(start, start + blk.shape[0])))
        start += blk.shape[0]
    rows.append(areas[None, :])
    slices.append(("area", slice(start, start + 1)))
    return EqConstraintSystem(matrix=np.vstack(rows), block_slices=slices,
                              areas=areas)


def compute_eq_rule(system: EqConstraintSystem, tol_eq, *, max_iter=None) -> EqRule:
    """Sparse weights via non-negative least squares on the stacked system."""
    C = system.matrix
    b = system.rhs
    res = nnls(C, b, tol=tol_eq, max_iter=max_iter)
    w = res.weights
    delta_const = float(abs(w @ system.areas - system.areas.sum()))
    return EqRule(
        weights=w,
        residual=res.residual,
        delta_const=delta_const,
        provenance={
            "tol_eq": tol_eq,
            "n_rows": C.shape[0],
            "nnls_iterations": res.iterations,
            "nnls_converged": res.converged,
            "rhs_norm": float(np.linalg.norm(b)),
        },
    )


def hf_rule(n_elements) -> EqRule:
    """The trivial full-quadrature rule (all weights one)."""
    return EqRule(weights=np.ones(n_elements), residual=0.0, delta_const=0.0,
                  provenance={"tol_eq": 0.0, "kind": "hf"})


def reduce_basis_storage(space, Z, Y, elems_eq, elems_eq_r):
    """Pack restricted basis blocks for online assembly.

    Trial modes are stored on the union of the two sampled sets, test modes
    only where the indicator residual is evaluated.  Returns the packed
    arrays, index maps and the payload size in bytes.
    """
    union = np.union1d(elems_eq, elems_eq_r).astype(int)
    l2g = space.loc2glob[union]
    Z_packed = np.asarray(Z)[l2g]                     # (ne_u, 18, N)
    pos_eqr = np.searchsorted(union, np.asarray(elems_eq_r, dtype=int))
    Y_packed = np.asarray(Y)[space.loc2glob[np.asarray(elems_eq_r, dtype=int)]]
    nbytes = Z_packed.nbytes + Y_packed.nbytes
    return {
        "union": union,
        "Z_packed": Z_packed,
        "pos_eqr": pos_eqr,
        "Y_packed": Y_packed,
        "nbytes": int(nbytes),
    }
