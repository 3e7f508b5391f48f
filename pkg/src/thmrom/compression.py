"""POD by the method of snapshots plus the two greedy-loop update rules.

All orthonormality is with respect to the weighted field inner product, not
the Euclidean one.  ``pod`` sizes the basis with the relative-energy
criterion; the hierarchical update ``hpod_update`` keeps the existing modes
verbatim (nested spaces) and sizes the complement basis by the worst-case
relative projection error over the new snapshots, which is robust to the
relative-energy pitfall of a fixed tolerance; ``hapod_update`` re-compresses
the new snapshots together with the eigenvalue-scaled old modes and is not
nested in general.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fespace import InnerProduct
from .numerics import sym_eig

EIG_FLOOR = 1e-14  # modes with lambda below this times lambda_1 are noise


@dataclass
class ReducedBasis:
    modes: np.ndarray   # (n_dofs, N), orthonormal under ip
    eigs: np.ndarray    # (N,)
    ip: InnerProduct

    @property
    def size(self):
        return self.modes.shape[1]

    def truncate(self, n):
        return ReducedBasis(self.modes[:, :n].copy(), self.eigs[:n].copy(), self.ip)

    def orthonormality_defect(self):
        G = self.ip.gram(self.modes)
        return float(np.abs(G - np.eye(self.size)).max()) if self.size else 0.0


def orthonormalize(ip, V, against=None, drop_tol=1e-10):
    """Modified Gram-Schmidt under the weighted product (two passes).

    Columns that collapse below ``drop_tol`` of their incoming norm are
    dropped.  Returns the kept columns and their original positions.
    """
    V = np.array(V, dtype=float)
    kept = []
    idx = []
    for j in range(V.shape[1]):
        v = V[:, j]
        n0 = ip.norm(v)
        if n0 == 0.0:
            continue
        for _ in range(2):
            if against is not None and against.shape[1]:
                v = v - against @ ip.project_coeffs(against, v)
            for u in kept:
                v = v - u * ip.inner(u, v)
        n1 = ip.norm(v)
        if n1 <= drop_tol * n0:
            continue
        kept.append(v / n1)
        idx.append(j)
    if not kept:
        return np.zeros((V.shape[0], 0)), []
    return np.stack(kept, axis=1), idx


def pod(snapshots, ip: InnerProduct, tol_pod, *, n_max=None) -> ReducedBasis:
    """Method-of-snapshots POD sized by the energy criterion."""
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("need at least one snapshot column")
    if not 0.0 < tol_pod < 1.0:
        raise ValueError("tol_pod must lie in (0, 1)")
    C = ip.gram(S)
    lam, vecs = sym_eig(C)
    total = lam.sum()
    if total <= 0.0 or lam[0] <= 0.0:
        raise ValueError("all snapshots are zero")
    lam = np.maximum(lam, 0.0)
    cum = np.cumsum(lam)
    N = int(np.searchsorted(cum, (1.0 - tol_pod**2) * total) + 1)
    N = min(N, int(np.sum(lam > EIG_FLOOR * lam[0])))
    if n_max is not None:
        N = min(N, n_max)
    modes = S @ (vecs[:, :N] / np.sqrt(lam[:N]))
    modes, kept = orthonormalize(ip, modes)
    return ReducedBasis(modes=modes, eigs=lam[:N][kept], ip=ip)


def projection_errors(ip, Z, snapshots):
    """Relative projection errors of snapshot columns onto span(Z)."""
    S = np.asarray(snapshots, dtype=float)
    norms = np.sqrt(np.maximum(np.einsum("ik,ik->k", S, ip.matrix @ S), 0.0))
    if Z.shape[1] == 0:
        return np.ones(S.shape[1]), norms
    D = S - Z @ ip.project_coeffs(Z, S)
    dn = np.sqrt(np.maximum(np.einsum("ik,ik->k", D, ip.matrix @ D), 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(norms > 0, dn / norms, 0.0)
    return rel, norms


def hpod_update(basis: ReducedBasis | None, snapshots, ip: InnerProduct,
                tol_pod) -> ReducedBasis:
    """Hierarchical update: POD of the projection complements.

    The number of new modes is the smallest count for which the worst
    relative in-sample projection error drops below ``tol_pod``.  Existing
    modes are preserved verbatim, so successive spaces are nested.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("need at least one snapshot column")
    if basis is None or basis.size == 0:
        Z = np.zeros((S.shape[0], 0))
        old_eigs = np.zeros(0)
    else:
        Z = basis.modes
        old_eigs = basis.eigs
    rel0, norms = projection_errors(ip, Z, S)
    usable = norms > 0
    if not usable.any():
        raise ValueError("all snapshots are zero")
    if rel0[usable].max() <= tol_pod:
        return ReducedBasis(Z.copy(), old_eigs.copy(), ip)

    D = S - Z @ ip.project_coeffs(Z, S) if Z.shape[1] else S.copy()
    C = ip.gram(D)
    lam, vecs = sym_eig(C)
    lam = np.maximum(lam, 0.0)
    n_avail = int(np.sum(lam > EIG_FLOOR * max(lam[0], 1e-300)))
    if n_avail == 0:
        return ReducedBasis(Z.copy(), old_eigs.copy(), ip)
    # residual^2 of snapshot j after M complement modes:
    # ||d_j||^2 - sum_{m<=M} lam_m vecs[j,m]^2
    d2 = np.einsum("ik,ik->k", D, ip.matrix @ D)
    drop = lam[None, :n_avail] * vecs[:, :n_avail] ** 2
    resid2 = np.maximum(d2[:, None] - np.cumsum(drop, axis=1), 0.0)
    rel = np.sqrt(resid2[usable]) / norms[usable, None]
    ok = rel.max(axis=0) <= tol_pod
    n_new = int(np.argmax(ok) + 1) if ok.any() else n_avail
    new_modes = D @ (vecs[:, :n_new] / np.sqrt(lam[:n_new]))
    new_modes, kept = orthonormalize(ip, new_modes, against=Z)
    modes = np.hstack([Z, new_modes])
    eigs = np.concatenate([old_eigs, lam[:n_new][kept]])
    return ReducedBasis(modes, eigs, ip)


def hapod_update(basis: ReducedBasis | None, snapshots, ip: InnerProduct,
                 tol_pod) -> ReducedBasis:
    """Hierarchical-approximate update: single POD of the new snapshots
    joined with the eigenvalue-scaled current modes."""
    S = np.asarray(snapshots, dtype=float)
    if basis is None or basis.size == 0:
        joint = S
    else:
        joint = np.hstack([S, basis.modes * basis.eigs[None, :]])
    return pod(joint, ip, tol_pod)
