"""Mixed P2/P1 finite-element spaces, restriction operators and inner products.

Displacement uses continuous P2 (one scalar space per component), pressure
and temperature continuous P1, satisfying the degree / degree-1 pairing that
keeps the coupled saddle-point discretisation stable.  Global coefficient
vectors are field-blocked: ``[u1 | u2 | p | T]``.

The weighted inner product combines per-field H1 products scaled by the
largest eigenvalue of each field Gramian, so fields with different physical
magnitudes contribute comparably to norms, POD and error measures.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, TAG_ALVEOLUS, TAG_TOP

N_LOCAL_U = 6
N_LOCAL_P = 3
N_LOCAL = 2 * N_LOCAL_U + 2 * N_LOCAL_P  # element-local dof count (18)

_EDGE_LOCAL = ((0, 1), (1, 2), (2, 0))

# 2-point Gauss rule on [0, 1] (degree 3), for boundary edge integrals
_EDGE_QP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_EDGE_QW = np.array([0.5, 0.5])


def p2_basis(ref_pts):
    """P2 values and reference gradients at reference points (xi, eta)."""
    xi = ref_pts[:, 0]
    eta = ref_pts[:, 1]
    l1 = 1.0 - xi - eta
    l2, l3 = xi, eta
    vals = np.stack(
        [
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            l3 * (2 * l3 - 1),
            4 * l1 * l2,
            4 * l2 * l3,
            4 * l3 * l1,
        ],
        axis=1,
    )
    # d/dxi, d/deta with dl1 = (-1,-1), dl2 = (1,0), dl3 = (0,1)
    z = np.zeros_like(xi)
    d1 = 4 * l1 - 1
    d2 = 4 * l2 - 1
    d3 = 4 * l3 - 1
    grads = np.stack(
        [
            np.stack([-d1, -d1], axis=1),
            np.stack([d2, z], axis=1),
            np.stack([z, d3], axis=1),
            np.stack([4 * (l1 - l2), -4 * l2], axis=1),
            np.stack([4 * l3, 4 * l2], axis=1),
            np.stack([-4 * l3, 4 * (l1 - l3)], axis=1),
        ],
        axis=1,
    )
    return vals, grads


def p1_basis(ref_pts):
    xi = ref_pts[:, 0]
    eta = ref_pts[:, 1]
    vals = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    ones = np.ones_like(xi)
    z = np.zeros_like(xi)
    grads = np.stack(
        [
            np.stack([-ones, -ones], axis=1),
            np.stack([ones, z], axis=1),
            np.stack([z, ones], axis=1),
        ],
        axis=1,
    )
    return vals, grads


@dataclass
class MixedSpace:
    """DOF maps, basis tables and essential-constraint indices."""

    mesh: Mesh
    degree_u: int = 2

    n_u: int = field(init=False)
    n_p: int = field(init=False)
    u_nodes: np.ndarray = field(init=False)
    elem_u: np.ndarray = field(init=False)   # (ne, 6) scalar P2 dofs
    elem_p: np.ndarray = field(init=False)   # (ne, 3) scalar P1 dofs
    loc2glob: np.ndarray = field(init=False)  # (ne, 18) mixed local->global
    dirichlet_idx: np.ndarray = field(init=False)
    free_idx: np.ndarray = field(init=False)
    phi_u: np.ndarray = field(init=False)    # (nq, 6)
    dphi_u: np.ndarray = field(init=False)   # (nq, 6, 2) reference grads
    phi_p: np.ndarray = field(init=False)
    dphi_p: np.ndarray = field(init=False)
    grad_u: np.ndarray = field(init=False)   # (ne, nq, 6, 2) physical grads
    grad_p: np.ndarray = field(init=False)   # (ne, nq, 3, 2)

    def __post_init__(self):
        if self.degree_u != 2:
            raise NotImplementedError("only the P2/P1 pair is implemented")
        mesh = self.mesh
        nv = mesh.n_nodes
        edges = {}
        elem_u = np.empty((mesh.n_elements, 6), dtype=np.int64)
        elem_u[:, :3] = mesh.elements
        for e, conn in enumerate(mesh.elements):
            for le, (a, b) in enumerate(_EDGE_LOCAL):
                key = (min(conn[a], conn[b]), max(conn[a], conn[b]))
                idx = edges.setdefault(key, len(edges))
                elem_u[e, 3 + le] = nv + idx
        self.n_u = nv + len(edges)
        self.n_p = nv
        self.elem_u = elem_u
        self.elem_p = mesh.elements.copy()

        coords = np.empty((self.n_u, 2))
        coords[:nv] = mesh.nodes
        for (a, b), idx in edges.items():
            coords[nv + idx] = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        self.u_nodes = coords

        off_u2, off_p, off_t = self.offsets[1:]
        self.loc2glob = np.concatenate(
            [elem_u, off_u2 + elem_u, off_p + self.elem_p, off_t + self.elem_p],
            axis=1,
        )

        cfg = mesh.config
        w = cfg.width if cfg is not None else mesh.nodes[:, 0].max()
        tol = 1e-10 * max(w, 1.0)
        on_left = np.abs(coords[:, 0]) < tol
        on_right = np.abs(coords[:, 0] - w) < tol
        on_bottom = np.abs(coords[:, 1]) < tol
        dir_idx = np.concatenate(
            [
                np.flatnonzero(on_left | on_right),            # u1 = 0
                off_u2 + np.flatnonzero(on_bottom),            # u2 = 0
            ]
        )
        self.dirichlet_idx = np.unique(dir_idx)
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_idx] = False
        self.free_idx = np.flatnonzero(mask)

        self.phi_u, self.dphi_u = p2_basis(mesh.quad_ref)
        self.phi_p, self.dphi_p = p1_basis(mesh.quad_ref)
        self.grad_u = np.einsum("eab,qib->eqia", mesh.grad_map, self.dphi_u)
        self.grad_p = np.einsum("eab,qib->eqia", mesh.grad_map, self.dphi_p)

    @property
    def offsets(self):
        return (0, self.n_u, 2 * self.n_u, 2 * self.n_u + self.n_p)

    @property
    def n_dofs(self):
        return 2 * self.n_u + 2 * self.n_p

    def split(self, U):
        """Views of the u1, u2, p, T blocks of a state vector (or matrix)."""
        o = self.offsets
        return U[..., o[0]:o[1]], U[..., o[1]:o[2]], U[..., o[2]:o[3]], U[..., o[3]:]

    def zero_state(self):
        return np.zeros(self.n_dofs)

    def restrict_state(self, k, U):
        """Element-local mixed coefficient block, shape (18,)."""
        if not 0 <= k < self.mesh.n_elements:
            raise IndexError(f"element index {k} out of range")
        return np.asarray(U)[self.loc2glob[k]]

    def local_blocks(self, U, elems=None):
        """Local coefficient blocks for a set of elements, shape (ne, 18)."""
        l2g = self.loc2glob if elems is None else self.loc2glob[elems]
        return np.asarray(U)[l2g]

    def scatter_add(self, local, elems=None):
        """Sum local blocks (ne, 18) into a global vector."""
        out = np.zeros(self.n_dofs)
        l2g = self.loc2glob if elems is None else self.loc2glob[elems]
        np.add.at(out, l2g.ravel(), np.asarray(local).ravel())
        return out

    def eval_at_quad(self, k, U):
        """Values (nq, 4) and gradients (nq, 4, 2) of all fields at the
        quadrature points of element k, ordered (u1, u2, p, T)."""
        loc = self.restrict_state(k, U)
        u1, u2 = loc[:6], loc[6:12]
        p, T = loc[12:15], loc[15:18]
        gu = self.grad_u[k]
        gp = self.grad_p[k]
        vals = np.stack(
            [self.phi_u @ u1, self.phi_u @ u2, self.phi_p @ p, self.phi_p @ T],
            axis=1,
        )
        grads = np.stack(
            [
                np.einsum("qia,i->qa", gu, u1),
                np.einsum("qia,i->qa", gu, u2),
                np.einsum("qia,i->qa", gp, p),
                np.einsum("qia,i->qa", gp, T),
            ],
            axis=1,
        )
        return vals, grads

    def boundary_edge_data(self, tag):
        """Per-edge arrays for boundary assembly: element ids, local P2 node
        triple (two vertices + midpoint), local P1 node pair, edge lengths."""
        mesh = self.mesh
        sel = mesh.boundary_tags == tag
        pairs = mesh.boundary_edges[sel]
        elems = pairs[:, 0]
        le = pairs[:, 1]
        a = np.array([_EDGE_LOCAL[i][0] for i in le])
        b = np.array([_EDGE_LOCAL[i][1] for i in le])
        nodes_p = np.stack([a, b], axis=1)
        nodes_u = np.stack([a, b, 3 + le], axis=1)
        va = mesh.nodes[mesh.elements[elems, a]]
        vb = mesh.nodes[mesh.elements[elems, b]]
        lengths = np.linalg.norm(vb - va, axis=1)
        return elems, nodes_u, nodes_p, lengths


def _assemble_scalar_h1(mesh, phi, grad, elem_dofs, n_dofs):
    w = mesh.quad_weights
    mass = np.einsum("eq,qi,qj->eij", w, phi, phi)
    stiff = np.einsum("eq,eqia,eqja->eij", w, grad, grad)
    loc = mass + stiff
    nb = phi.shape[1]
    rows = np.repeat(elem_dofs, nb, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, nb)).ravel()
    A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))
    return A.tocsr()


def _largest_eigenvalue(A, tol=1e-10):
    n = A.shape[0]
    if n <= 16:
        return float(np.linalg.eigvalsh(A.toarray())[-1])
    v0 = np.ones(n) / np.sqrt(n)
    lam = float(
        spla.eigsh(A, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False)[0]
    )
    return lam


@dataclass
class MatrixInner:
    """Inner product induced by an SPD matrix (single-field compression)."""

    matrix: sp.csr_matrix

    def inner(self, U, V):
        U = np.asarray(U)
        V = np.asarray(V)
        return (self.matrix @ U).T @ V if U.ndim > 1 or V.ndim > 1 else U @ (self.matrix @ V)

    def norm(self, U):
        return float(np.sqrt(max(self.inner(U, U), 0.0)))

    def gram(self, S):
        return np.asarray(S.T @ (self.matrix @ S))

    def project_coeffs(self, Z, U):
        return np.asarray(Z.T @ (self.matrix @ U))


@dataclass
class InnerProduct:
    """Field-weighted H1 inner product and its Riesz machinery."""

    space: MixedSpace
    gram_u: sp.csr_matrix
    gram_p: sp.csr_matrix
    gram_t: sp.csr_matrix
    lam_u: float
    lam_p: float
    lam_t: float
    matrix: sp.csr_matrix = field(init=False)
    _free_solve: object = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.matrix = sp.block_diag(
            [
                self.gram_u / self.lam_u,
                self.gram_u / self.lam_u,
                self.gram_p / self.lam_p,
                self.gram_t / self.lam_t,
            ],
            format="csr",
        )

    def inner(self, U, V):
        """Weighted inner product; accepts vectors or stacked columns."""
        U = np.asarray(U)
        V = np.asarray(V)
        if U.shape[0] != self.space.n_dofs or V.shape[0] != self.space.n_dofs:
            raise ValueError("state dimension mismatch")
        return (self.matrix @ U).T @ V if U.ndim > 1 or V.ndim > 1 else U @ (self.matrix @ V)

    def norm(self, U):
        return float(np.sqrt(max(self.inner(U, U), 0.0)))

    def gram(self, S):
        """Gram matrix S^T M S of snapshot columns."""
        return np.asarray(S.T @ (self.matrix @ S))

    def project_coeffs(self, Z, U):
        """Coefficients of the orthogonal projection onto orthonormal Z."""
        return np.asarray(Z.T @ (self.matrix @ U))

    def _solver(self):
        if self._free_solve is None:
            free = self.space.free_idx
            Mf = self.matrix[free][:, free].tocsc()
            self._free_solve = spla.splu(Mf)
        return self._free_solve

    def riesz(self, r):
        """Representer of the functional with coefficient vector ``r`` on the
        constrained space (entries at essential dofs are ignored)."""
        free = self.space.free_idx
        psi = np.zeros(self.space.n_dofs)
        psi[free] = self._solver().solve(np.asarray(r)[free])
        return psi

    def dual_norm(self, r):
        psi = self.riesz(r)
        return float(np.sqrt(max(np.asarray(r) @ psi, 0.0)))


def assemble_gramians(mesh: Mesh, space: MixedSpace) -> InnerProduct:
    """Per-field H1 Gramians with their largest eigenvalues."""
    gu = _assemble_scalar_h1(mesh, space.phi_u, space.grad_u, space.elem_u, space.n_u)
    gp = _assemble_scalar_h1(mesh, space.phi_p, space.grad_p, space.elem_p, space.n_p)
    for name, g in (("u", gu), ("p", gp)):
        asym = abs(g - g.T).max()
        if asym > 1e-12 * abs(g).max():
            raise ValueError(f"Gramian for field {name} is not symmetric")
    lam_u = _largest_eigenvalue(gu)
    lam_p = _largest_eigenvalue(gp)
    if lam_u <= 0 or lam_p <= 0:
        raise ValueError("Gramian is not positive definite (broken dof map?)")
    return InnerProduct(space=space, gram_u=gu, gram_p=gp, gram_t=gp.copy(),
                        lam_u=lam_u, lam_p=lam_p, lam_t=lam_p)


def weighted_inner(ip: InnerProduct, U, V):
    return ip.inner(U, V)
