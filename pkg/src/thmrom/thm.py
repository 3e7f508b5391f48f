"""Time-discrete weak residuals of the coupled THM system and the
full-order solver.

The residual of one implicit-Euler step decomposes into per-element blocks
(mechanics, water-mass and energy rows against the mixed test space, plus
the boundary loads of the owning element), which is what both the monolithic
Newton solver and the element-sampled reduced-order assembly consume.  The
internal variables live at the quadrature points of whichever elements are
active and are advanced pointwise through the closed-form updates in
:mod:`thmrom.physics`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import InnerProduct, MixedSpace, N_LOCAL
from .mesh import Mesh, TAG_ALVEOLUS, TAG_TOP
from .numerics import newton_solve
from .physics import (IV_H, IV_M, IV_MX, IV_MY, IV_PHI, IV_Q, IV_RHO,
                      N_INTERNAL, ThmParameters, constitutive_update,
                      thermal_load)

_SU1 = slice(0, 6)
_SU2 = slice(6, 12)
_SP = slice(12, 15)
_ST = slice(15, 18)


@dataclass
class InternalTensor:
    """Internal variables sampled at quadrature points of active elements.

    ``values[q, k, l]`` holds variable ``l`` at quadrature point ``q`` of the
    k-th *active* element; ``elems`` maps to global element indices.
    """

    values: np.ndarray
    elems: np.ndarray

    def copy(self):
        return InternalTensor(self.values.copy(), self.elems)

    def take(self, positions):
        return InternalTensor(self.values[:, positions, :], self.elems[positions])


@dataclass
class TimeGrid:
    j_max: int = 100
    t_final: float = 1.0

    @property
    def dt(self):
        return self.t_final / self.j_max

    @property
    def times(self):
        return np.linspace(0.0, self.t_final, self.j_max + 1)


def uniform_sample_steps(j_max, count):
    """``count`` near-uniform sampling steps in {1, ..., j_max}."""
    steps = np.unique(np.round(j_max * np.arange(1, count + 1) / count).astype(int))
    return steps[steps >= 1]


class ThmModel:
    """Mesh/space-bound assembly machinery, shared across parameter values.

    ``eq_scale`` multiplies the (mechanics, mass, energy) residual rows; it
    rescales equations without changing the full-order solution, but it sets
    the relative weighting the Galerkin projection sees, which controls the
    stability of the reduced time-stepper for this nearly-undrained system.
    """

    DEFAULT_EQ_SCALE = (1.0, 100.0, 1.0)

    def __init__(self, mesh: Mesh, space: MixedSpace, ip: InnerProduct,
                 eq_scale=DEFAULT_EQ_SCALE):
        self.mesh = mesh
        self.space = space
        self.ip = ip
        self.eq_scale = tuple(float(s) for s in eq_scale)
        ne = mesh.n_elements
        self.all_elems = np.arange(ne)

        # constant-datum boundary load blocks (top traction, alveolus flux)
        neu_mech = np.zeros((ne, N_LOCAL))
        elems, nodes_u, _, lengths = space.boundary_edge_data(TAG_TOP)
        for e, nu, L in zip(elems, nodes_u, lengths):
            neu_mech[e, 6 + nu[0]] += L / 6.0
            neu_mech[e, 6 + nu[1]] += L / 6.0
            neu_mech[e, 6 + nu[2]] += 2.0 * L / 3.0
        neu_alv = np.zeros((ne, N_LOCAL))
        elems, _, nodes_p, lengths = space.boundary_edge_data(TAG_ALVEOLUS)
        for e, npair, L in zip(elems, nodes_p, lengths):
            neu_alv[e, 15 + npair[0]] += 0.5 * L
            neu_alv[e, 15 + npair[1]] += 0.5 * L
        self.neu_mech = neu_mech
        self.neu_alv = neu_alv

        self._is_dir = np.zeros(space.n_dofs, dtype=bool)
        self._is_dir[space.dirichlet_idx] = True

    def problem(self, params: ThmParameters) -> "ThmProblem":
        return ThmProblem(self, params)


def _fields_at_quad(space, elems, Uloc):
    """Values and gradients of (u1, u2, p, T) on element subsets."""
    Pu, Pp = space.phi_u, space.phi_p
    Gu = space.grad_u[elems]
    Gp = space.grad_p[elems]
    u1, u2 = Uloc[:, _SU1], Uloc[:, _SU2]
    pc, Tc = Uloc[:, _SP], Uloc[:, _ST]
    out = {
        "p": np.einsum("qi,ei->eq", Pp, pc),
        "T": np.einsum("qi,ei->eq", Pp, Tc),
        "gu1": np.einsum("eqia,ei->eqa", Gu, u1),
        "gu2": np.einsum("eqia,ei->eqa", Gu, u2),
        "gp": np.einsum("eqia,ei->eqa", Gp, pc),
        "gT": np.einsum("eqia,ei->eqa", Gp, Tc),
    }
    out["eps_v"] = out["gu1"][..., 0] + out["gu2"][..., 1]
    return out


def local_system(problem, elems, Uloc_p, Uloc_m, Wm_vals, dt, t_plus,
                 *, need_jac=False, validate=False):
    """Elemental residual blocks r_k (and Jacobian blocks) for one time step.

    Returns ``(r_loc, Wp_vals, J_loc)`` with ``r_loc`` of shape (ne, 18),
    the updated internal tensor values (n_q, ne, 7) and, if requested, the
    local Jacobian blocks (ne, 18, 18) differentiated through the
    constitutive updates.  Non-finite entries signal constitutive blow-up;
    the caller is expected to shrink its step.
    """
    model = problem.model
    params = problem.params
    space = model.space
    mesh = model.mesh

    w = mesh.quad_weights[elems]
    Pu, Pp = space.phi_u, space.phi_p
    Gu = space.grad_u[elems]
    Gp = space.grad_p[elems]
    region = mesh.element_region[elems]
    reg = region[:, None]

    fp = _fields_at_quad(space, elems, Uloc_p)
    fm = _fields_at_quad(space, elems, Uloc_m)
    eps_ref = problem.eps_ref[elems]

    rho_m = Wm_vals[:, :, IV_RHO].T
    phi_m = Wm_vals[:, :, IV_PHI].T
    h_m = Wm_vals[:, :, IV_H].T
    Q_m = Wm_vals[:, :, IV_Q].T
    m_m = Wm_vals[:, :, IV_M].T

    res = constitutive_update(
        params, reg,
        fp["eps_v"] - eps_ref, fp["p"], fp["T"],
        fm["eps_v"] - eps_ref, fm["p"], fm["T"],
        rho_m, phi_m, h_m, Q_m,
        derivs=need_jac, validate=validate,
    )
    con, der = res if need_jac else (res, None)

    f_m = params.f_m
    rho = con["rho"]
    h = con["h"]
    gamma = con["gamma"]
    dm = con["m"] - m_m
    dQ = con["Q"] - Q_m

    # stress and generalized fluxes at quadrature points
    mu = params.mu_star[reg]
    lam = params.lam_star[reg]
    thc = params.therm_stress[reg]
    cond = params.cond_star[region]          # (ne, 2)
    press = lam * fp["eps_v"] - thc * fp["T"] - params.const.b * fp["p"]
    eps11 = fp["gu1"][..., 0]
    eps22 = fp["gu2"][..., 1]
    eps12 = 0.5 * (fp["gu1"][..., 1] + fp["gu2"][..., 0])
    S0 = np.stack([2 * mu * eps11 + press, 2 * mu * eps12], axis=-1)
    S1 = np.stack([2 * mu * eps12, 2 * mu * eps22 + press], axis=-1)
    body_y = (params.rho0_star[reg] + con["m"]) * f_m

    vdir = fp["gp"].copy()
    vdir[..., 1] += rho * f_m                # grad p - rho F
    vm = gamma[..., None] * vdir
    sen = h * dm / dt + dQ / dt - f_m * vm[..., 1]
    ve = h_m[..., None] * vm
    ve[..., 0] += cond[:, None, 0] * fp["gT"][..., 0]
    ve[..., 1] += cond[:, None, 1] * fp["gT"][..., 1]

    r = np.zeros((len(elems), N_LOCAL))
    r[:, _SU1] = np.einsum("eq,eqa,eqia->ei", w, S0, Gu)
    r[:, _SU2] = np.einsum("eq,eqa,eqia->ei", w, S1, Gu) \
        + np.einsum("eq,eq,qi->ei", w, body_y, Pu)
    r[:, _SP] = np.einsum("eq,eq,qi->ei", w, dm / dt, Pp) \
        + np.einsum("eq,eqa,eqia->ei", w, vm, Gp)
    r[:, _ST] = np.einsum("eq,eq,qi->ei", w, sen, Pp) \
        + np.einsum("eq,eqa,eqia->ei", w, ve, Gp)
    r += model.neu_mech[elems]
    g_t = thermal_load(params, t_plus)
    if g_t != 0.0:
        r -= g_t * model.neu_alv[elems]
    s_u, s_p, s_e = model.eq_scale
    if (s_u, s_p, s_e) != (1.0, 1.0, 1.0):
        r[:, :12] *= s_u
        r[:, _SP] *= s_p
        r[:, _ST] *= s_e

    nq = mesh.n_quad
    Wp = np.empty((nq, len(elems), N_INTERNAL))
    Wp[:, :, IV_RHO] = rho.T
    Wp[:, :, IV_PHI] = con["phi"].T
    Wp[:, :, IV_H] = h.T
    Wp[:, :, IV_Q] = con["Q"].T
    Wp[:, :, IV_MX] = -vm[..., 0].T
    Wp[:, :, IV_MY] = -vm[..., 1].T
    Wp[:, :, IV_M] = con["m"].T

    if not need_jac:
        return r, Wp, None

    J = np.zeros((len(elems), N_LOCAL, N_LOCAL))
    wmu = w * mu
    wlam = w * lam
    uslices = (_SU1, _SU2)

    base = np.einsum("eq,eqia,eqja->eij", wmu, Gu, Gu)
    for d, rowd in enumerate(uslices):
        J[:, rowd, rowd] += base
        for c, colc in enumerate(uslices):
            J[:, rowd, colc] += np.einsum(
                "eq,eqi,eqj->eij", wmu, Gu[..., c], Gu[..., d]
            )
            J[:, rowd, colc] += np.einsum(
                "eq,eqi,eqj->eij", wlam, Gu[..., d], Gu[..., c]
            )
    for c, colc in enumerate(uslices):
        J[:, _SU2, colc] += np.einsum(
            "eq,qi,eqj->eij", w * der["dm_de"] * f_m, Pu, Gu[..., c]
        )
    for d, rowd in enumerate(uslices):
        J[:, rowd, _SP] += np.einsum(
            "eq,eqi,qj->eij", -w * params.const.b, Gu[..., d], Pp
        )
        J[:, rowd, _ST] += np.einsum("eq,eqi,qj->eij", -w * thc, Gu[..., d], Pp)
    J[:, _SU2, _SP] += np.einsum("eq,qi,qj->eij", w * der["dm_dp"] * f_m, Pu, Pp)
    J[:, _SU2, _ST] += np.einsum("eq,qi,qj->eij", w * der["dm_dT"] * f_m, Pu, Pp)

    for c, colc in enumerate(uslices):
        J[:, _SP, colc] += np.einsum(
            "eq,qi,eqj->eij", w * der["dm_de"] / dt, Pp, Gu[..., c]
        )
    J[:, _SP, _SP] += np.einsum("eq,qi,qj->eij", w * der["dm_dp"] / dt, Pp, Pp)
    J[:, _SP, _SP] += np.einsum(
        "eq,eqa,eqia,qj->eij", w * der["dgam_dp"], vdir, Gp, Pp
    )
    J[:, _SP, _SP] += np.einsum("eq,eqia,eqja->eij", w * gamma, Gp, Gp)
    J[:, _SP, _SP] += np.einsum(
        "eq,eqi,qj->eij", w * gamma * der["drho_dp"] * f_m, Gp[..., 1], Pp
    )
    J[:, _SP, _ST] += np.einsum("eq,qi,qj->eij", w * der["dm_dT"] / dt, Pp, Pp)
    J[:, _SP, _ST] += np.einsum(
        "eq,eqa,eqia,qj->eij", w * der["dgam_dT"], vdir, Gp, Pp
    )
    J[:, _SP, _ST] += np.einsum(
        "eq,eqi,qj->eij", w * gamma * der["drho_dT"] * f_m, Gp[..., 1], Pp
    )

    for c, colc in enumerate(uslices):
        J[:, _ST, colc] += np.einsum(
            "eq,qi,eqj->eij", w * (h * der["dm_de"] + der["dQ_de"]) / dt,
            Pp, Gu[..., c],
        )
    s_tp = (der["dh_dp"] * dm + h * der["dm_dp"] + der["dQ_dp"]) / dt \
        - f_m * (der["dgam_dp"] * vdir[..., 1] + gamma * der["drho_dp"] * f_m)
    J[:, _ST, _SP] += np.einsum("eq,qi,qj->eij", w * s_tp, Pp, Pp)
    J[:, _ST, _SP] += np.einsum(
        "eq,qi,eqj->eij", -w * f_m * gamma, Pp, Gp[..., 1]
    )
    J[:, _ST, _SP] += np.einsum(
        "eq,eqa,eqia,qj->eij", w * h_m * der["dgam_dp"], vdir, Gp, Pp
    )
    J[:, _ST, _SP] += np.einsum("eq,eqia,eqja->eij", w * h_m * gamma, Gp, Gp)
    J[:, _ST, _SP] += np.einsum(
        "eq,eqi,qj->eij", w * h_m * gamma * der["drho_dp"] * f_m, Gp[..., 1], Pp
    )
    s_tt = (der["dh_dT"] * dm + h * der["dm_dT"] + der["dQ_dT"]) / dt \
        - f_m * (der["dgam_dT"] * vdir[..., 1] + gamma * der["drho_dT"] * f_m)
    J[:, _ST, _ST] += np.einsum("eq,qi,qj->eij", w * s_tt, Pp, Pp)
    J[:, _ST, _ST] += np.einsum(
        "eq,eqa,eqia,qj->eij", w * h_m * der["dgam_dT"], vdir, Gp, Pp
    )
    J[:, _ST, _ST] += np.einsum(
        "eq,eqi,qj->eij", w * h_m * gamma * der["drho_dT"] * f_m, Gp[..., 1], Pp
    )
    J[:, _ST, _ST] += np.einsum("eq,ea,eqia,eqja->eij", w, cond, Gp, Gp)

    if (s_u, s_p, s_e) != (1.0, 1.0, 1.0):
        J[:, :12, :] *= s_u
        J[:, _SP, :] *= s_p
        J[:, _ST, :] *= s_e

    return r, Wp, J


class ThmProblem:
    """Model bound to one parameter vector, with its initial state.

    The initial state solves the deactivated-repository equilibrium:
    hydrostatic pressure, reference temperature and the displacement field
    balancing gravity, overburden traction and the pressure coupling.  The
    volumetric strain of that displacement defines the reference for the
    mass-input bookkeeping, so the initial mass input vanishes identically.
    """

    def __init__(self, model: ThmModel, params: ThmParameters):
        self.model = model
        self.params = params
        space = model.space
        mesh = model.mesh

        # hydrostatic pressure, linear in depth (exact in P1)
        ch = params.hydrostatic_coeff()
        p0_nodal = params.p_top_star() + ch * (1.0 - mesh.nodes[:, 1])
        U0 = space.zero_state()
        o = space.offsets
        U0[o[2]:o[3]] = p0_nodal

        u0 = self._solve_initial_displacement(p0_nodal)
        U0[o[0]:o[1]] = u0[: space.n_u]
        U0[o[1]:o[2]] = u0[space.n_u:]
        self.U0 = U0

        Uloc0 = space.local_blocks(U0)
        f0 = _fields_at_quad(space, model.all_elems, Uloc0)
        self.eps_ref = f0["eps_v"].copy()

        nq = mesh.n_quad
        ne = mesh.n_elements
        c = params.const
        vals = np.zeros((nq, ne, N_INTERNAL))
        vals[:, :, IV_RHO] = params.rho_w0_star
        vals[:, :, IV_PHI] = params.phi0[mesh.element_region][None, :]
        p0_q = f0["p"]
        vals[:, :, IV_H] = ((p0_q - params.p_atm_star()) / params.rho_w0_star).T
        gamma0 = params.rho_w0_star * params.gamma_mob * np.exp(-1808.5 / c.T_ref)
        vdir0 = f0["gp"].copy()
        vdir0[..., 1] += params.rho_w0_star * params.f_m
        vals[:, :, IV_MX] = (-gamma0 * vdir0[..., 0]).T
        vals[:, :, IV_MY] = (-gamma0 * vdir0[..., 1]).T
        self.W0 = InternalTensor(vals, model.all_elems)

    def _solve_initial_displacement(self, p0_nodal):
        model = self.model
        space = model.space
        mesh = model.mesh
        params = self.params
        w = mesh.quad_weights
        Gu = space.grad_u
        Pu = space.phi_u
        reg = mesh.element_region[:, None]
        mu = params.mu_star[reg]
        lam = params.lam_star[reg]

        loc = np.zeros((mesh.n_elements, 12, 12))
        base = np.einsum("eq,eqia,eqja->eij", w * mu, Gu, Gu)
        for d, rowd in enumerate((slice(0, 6), slice(6, 12))):
            loc[:, rowd, rowd] += base
            for c, colc in enumerate((slice(0, 6), slice(6, 12))):
                loc[:, rowd, colc] += np.einsum(
                    "eq,eqi,eqj->eij", w * mu, Gu[..., c], Gu[..., d]
                )
                loc[:, rowd, colc] += np.einsum(
                    "eq,eqi,eqj->eij", w * lam, Gu[..., d], Gu[..., c]
                )

        p0_q = np.einsum("qi,ei->eq", space.phi_p, p0_nodal[space.elem_p])
        press = -params.const.b * p0_q
        body_y = params.rho0_star[reg] * params.f_m
        r_loc = np.zeros((mesh.n_elements, 12))
        r_loc[:, 0:6] = np.einsum("eq,eq,eqi->ei", w, press, Gu[..., 0])
        r_loc[:, 6:12] = np.einsum("eq,eq,eqi->ei", w, press, Gu[..., 1]) \
            + np.einsum("eq,eq,qi->ei", w, body_y, Pu)
        r_loc += model.neu_mech[:, :12]

        n2 = 2 * space.n_u
        l2g = space.loc2glob[:, :12]
        rhs = np.zeros(n2)
        np.add.at(rhs, l2g.ravel(), r_loc.ravel())

        is_dir = model._is_dir[:n2]
        drop = is_dir[l2g]
        mask = (~drop[:, :, None]) & (~drop[:, None, :])
        loc = loc * mask
        rows = np.repeat(l2g, 12, axis=1).ravel()
        cols = np.tile(l2g, (1, 12)).ravel()
        A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n2, n2)).tocsr()
        A += sp.diags(is_dir.astype(float))
        rhs[is_dir] = 0.0
        u0 = spla.spsolve(A.tocsc(), -rhs)
        if not np.all(np.isfinite(u0)):
            raise RuntimeError("singular initial mechanical system")
        return u0

    # -- global assembly ---------------------------------------------------

    def residual(self, U_p, U_m, W_m: InternalTensor, dt, t_plus, *, validate=False):
        """Assembled residual (zeroed at essential dofs) and updated W."""
        space = self.model.space
        elems = W_m.elems
        r_loc, Wp, _ = local_system(
            self, elems, space.local_blocks(U_p, elems),
            space.local_blocks(U_m, elems), W_m.values, dt, t_plus,
            validate=validate,
        )
        r = space.scatter_add(r_loc, elems)
        r[space.dirichlet_idx] = 0.0
        return r, InternalTensor(Wp, elems)

    def jacobian(self, U_p, U_m, W_m: InternalTensor, dt, t_plus):
        """Assembled sparse Jacobian with essential rows/cols pinned."""
        space = self.model.space
        elems = W_m.elems
        _, _, J_loc = local_system(
            self, elems, space.local_blocks(U_p, elems),
            space.local_blocks(U_m, elems), W_m.values, dt, t_plus,
            need_jac=True,
        )
        l2g = space.loc2glob[elems]
        drop = self.model._is_dir[l2g]
        J_loc = J_loc * ((~drop[:, :, None]) & (~drop[:, None, :]))
        rows = np.repeat(l2g, N_LOCAL, axis=1).ravel()
        cols = np.tile(l2g, (1, N_LOCAL)).ravel()
        n = space.n_dofs
        J = sp.coo_matrix((J_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        J += sp.diags(self.model._is_dir.astype(float))
        return J

    def element_residual(self, k, U_p, U_m, W_m: InternalTensor, dt, t_plus):
        """Local residual block r_k, shape (18,)."""
        space = self.model.space
        pos = int(np.flatnonzero(W_m.elems == k)[0])
        elems = np.array([k])
        r_loc, Wp, _ = local_system(
            self, elems, space.local_blocks(U_p, elems),
            space.local_blocks(U_m, elems), W_m.values[:, [pos], :], dt, t_plus,
        )
        return r_loc[0], Wp[:, 0, :]

    def element_jacobian(self, k, U_p, U_m, W_m: InternalTensor, dt, t_plus):
        space = self.model.space
        pos = int(np.flatnonzero(W_m.elems == k)[0])
        elems = np.array([k])
        _, _, J_loc = local_system(
            self, elems, space.local_blocks(U_p, elems),
            space.local_blocks(U_m, elems), W_m.values[:, [pos], :], dt, t_plus,
            need_jac=True,
        )
        return J_loc[0]


@dataclass
class FomResult:
    times: np.ndarray
    states: np.ndarray          # (j_max + 1, n_dofs)
    newton_iters: list
    snapshot_steps: np.ndarray
    wall_time: float = 0.0

    @property
    def snapshots(self):
        return self.states[self.snapshot_steps].T  # (n_dofs, K)


def fom_solve(problem: ThmProblem, grid: TimeGrid, *, snapshot_steps=None,
              newton_tol=1e-9, newton_max_iter=25) -> FomResult:
    """March the full-order system over the time grid.

    Newton convergence is measured in the dual norm of the weighted inner
    product; each accepted step must decrease that norm (backtracking line
    search, up to eight halvings).
    """
    model = problem.model
    ip = model.ip
    t0 = time.perf_counter()
    if snapshot_steps is None:
        # the initial state belongs to the compression set: the linear ansatz
        # has no affine offset, so the span must capture it
        snapshot_steps = np.arange(0, grid.j_max + 1)
    snapshot_steps = np.asarray(snapshot_steps, dtype=int)

    dt = grid.dt
    times = grid.times
    U = problem.U0.copy()
    W = problem.W0
    states = np.empty((grid.j_max + 1, model.space.n_dofs))
    states[0] = U
    iters = []

    for j in range(1, grid.j_max + 1):
        t = times[j]
        U_m, W_m = U, W

        def res_fn(x):
            r, _ = problem.residual(x, U_m, W_m, dt, t)
            return r

        def jac_fn(x):
            return problem.jacobian(x, U_m, W_m, dt, t)

        U, report = newton_solve(
            res_fn, jac_fn, U, tol=newton_tol, max_iter=newton_max_iter,
            linear_solve=lambda J, r: spla.splu(J.tocsc()).solve(r),
            norm_fn=ip.dual_norm,
        )
        _, W = problem.residual(U, U_m, W_m, dt, t)
        states[j] = U
        iters.append(report.iterations)

    return FomResult(times=times, states=states, newton_iters=iters,
                     snapshot_steps=snapshot_steps,
                     wall_time=time.perf_counter() - t0)
