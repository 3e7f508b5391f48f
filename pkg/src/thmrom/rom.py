"""Online hyper-reduced Galerkin ROM and residual-based error indicators.

A :class:`ReducedSystem` marches the Galerkin projection of the time-discrete
system over a weighted element subset; internal variables are updated only on
those elements.  Step hooks observe each converged step, which is how the
time-averaged indicator is accumulated in-stream and how the offline training
quantities (preconditioned constraint rows, unassembled average residuals,
Riesz representers) are collected from the full-quadrature ROM solves.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .compression import ReducedBasis, pod
from .hyperreduction import EqRule, reduce_basis_storage
from .numerics import NewtonError, newton_solve
from .thm import InternalTensor, ThmProblem, TimeGrid, local_system


@dataclass
class StepContext:
    """State handed to march hooks after each accepted time step."""

    j: int
    t: float
    dt: float
    alpha_p: np.ndarray
    alpha_m: np.ndarray
    r_loc: np.ndarray          # converged elemental residual blocks (ne, 18)
    W_p: np.ndarray            # (nq, ne, n_internal)
    W_m: np.ndarray
    system: "ReducedSystem"


@dataclass
class RomTrajectory:
    alphas: np.ndarray         # (j_max + 1, N)
    newton_iters: list
    delta: float | None = None
    r_avg_hat: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def states(self, Z):
        return self.alphas @ Z.T


class RomSolveError(RuntimeError):
    def __init__(self, msg, j=None, alpha=None):
        super().__init__(msg)
        self.step = j
        self.alpha = alpha


class ReducedSystem:
    """Galerkin time-marcher of the reduced coefficients on sampled elements."""

    def __init__(self, problem: ThmProblem, Z, elems, weights, *,
                 newton_tol=1e-9, newton_max_iter=25):
        if Z.shape[1] == 0:
            raise ValueError("empty reduced basis")
        self.problem = problem
        self.model = problem.model
        self.Z = np.asarray(Z)
        self.elems = np.asarray(elems, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != self.elems.shape:
            raise ValueError("one weight per sampled element required")
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        space = self.model.space
        self.Z_loc = self.Z[space.loc2glob[self.elems]]   # (ne, 18, N)
        self.alpha0 = self.model.ip.project_coeffs(self.Z, problem.U0)
        self.W0_vals = problem.W0.values[:, self.elems, :].copy()

    @property
    def n_modes(self):
        return self.Z.shape[1]

    def _locals(self, alpha):
        return np.einsum("ean,n->ea", self.Z_loc, alpha)

    def _residual_blocks(self, alpha_p, Uloc_m, W_m_vals, dt, t, *, need_jac=False):
        Uloc_p = self._locals(alpha_p)
        return local_system(self.problem, self.elems, Uloc_p, Uloc_m,
                            W_m_vals, dt, t, need_jac=need_jac)

    def reduced_residual(self, r_loc):
        return np.einsum("e,ean,ea->n", self.weights, self.Z_loc, r_loc)

    def reduced_jacobian(self, J_loc):
        return np.einsum("e,ean,eab,ebm->nm", self.weights, self.Z_loc,
                         J_loc, self.Z_loc)

    def step(self, alpha_m, W_m_vals, dt, t):
        Uloc_m = self._locals(alpha_m)

        def res_fn(a):
            r_loc, _, _ = self._residual_blocks(a, Uloc_m, W_m_vals, dt, t)
            return self.reduced_residual(r_loc)

        def jac_fn(a):
            _, _, J_loc = self._residual_blocks(a, Uloc_m, W_m_vals, dt, t,
                                                need_jac=True)
            return self.reduced_jacobian(J_loc)

        alpha_p, report = newton_solve(res_fn, jac_fn, alpha_m,
                                       tol=self.newton_tol,
                                       max_iter=self.newton_max_iter)
        r_loc, W_p_vals, _ = self._residual_blocks(alpha_p, Uloc_m, W_m_vals, dt, t)
        return alpha_p, W_p_vals, r_loc, report

    def march(self, grid: TimeGrid, *, hooks=()) -> RomTrajectory:
        """Time-march from the projected initial state.

        On a Newton failure one retry with a halved internal step is made
        (two half-steps, then re-synchronised with the grid); a second
        failure raises :class:`RomSolveError` with diagnostics.
        """
        t_start = time.perf_counter()
        dt = grid.dt
        times = grid.times
        alpha = self.alpha0.copy()
        W = self.W0_vals.copy()
        out = np.empty((grid.j_max + 1, self.n_modes))
        out[0] = alpha
        iters = []
        substeps = 0
        for j in range(1, grid.j_max + 1):
            t = times[j]
            try:
                alpha_p, W_p, r_loc, report = self.step(alpha, W, dt, t)
            except NewtonError:
                try:
                    half = 0.5 * dt
                    a_mid, W_mid, _, rep1 = self.step(alpha, W, half, t - half)
                    alpha_p, W_p, r_loc, rep2 = self.step(a_mid, W_mid, half, t)
                    report = rep2
                    report.iterations += rep1.iterations
                    substeps += 1
                except NewtonError as exc:
                    raise RomSolveError(
                        f"reduced Newton failed at step {j}: {exc}", j=j,
                        alpha=alpha) from exc
            ctx = StepContext(j=j, t=t, dt=dt, alpha_p=alpha_p, alpha_m=alpha,
                              r_loc=r_loc, W_p=W_p, W_m=W, system=self)
            for hook in hooks:
                hook(ctx)
            alpha, W = alpha_p, W_p
            out[j] = alpha
            iters.append(report.iterations)
        return RomTrajectory(alphas=out, newton_iters=iters,
                             diagnostics={"substeps": substeps},
                             wall_time=time.perf_counter() - t_start)


class IndicatorHook:
    """Accumulates the time-averaged indicator during the march.

    ``Y_packed`` holds the test modes restricted to the indicator elements,
    ``positions`` locates those elements inside the system's element set and
    ``weights`` is their sparse quadrature rule.
    """

    def __init__(self, Y_packed, positions, weights):
        self.Y_packed = Y_packed
        self.positions = np.asarray(positions, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        self.r_avg = np.zeros(Y_packed.shape[2]) if Y_packed.size else np.zeros(0)

    def __call__(self, ctx: StepContext):
        r_sub = ctx.r_loc[self.positions]
        r_hat = np.einsum("e,eam,ea->m", self.weights, self.Y_packed, r_sub)
        self.r_avg += ctx.dt * r_hat

    @property
    def delta(self):
        return float(np.linalg.norm(self.r_avg))


class TrainingHook:
    """Collects EQ training data from a full-quadrature ROM march.

    At the sampled steps the hook stores the reduced-Jacobian-preconditioned
    elemental rows (the manifold-accuracy constraints); at every step it
    accumulates the unassembled time-averaged residual used for the Riesz
    representer and the indicator constraint rows.
    """

    def __init__(self, system: ReducedSystem, sample_steps):
        self.system = system
        self.sample_steps = set(int(s) for s in sample_steps)
        ne = len(system.elems)
        self.r_avg_un = np.zeros((ne, system.Z_loc.shape[1]))
        self.c_blocks = []

    def __call__(self, ctx: StepContext):
        self.r_avg_un += ctx.dt * ctx.r_loc
        if ctx.j in self.sample_steps:
            sysm = self.system
            G = np.einsum("ean,ea->ne", sysm.Z_loc, ctx.r_loc)
            Uloc_m = sysm._locals(ctx.alpha_m)
            _, _, J_loc = sysm._residual_blocks(
                ctx.alpha_p, Uloc_m, ctx.W_m, ctx.dt, ctx.t, need_jac=True)
            J_red = sysm.reduced_jacobian(J_loc)
            self.c_blocks.append(np.linalg.solve(J_red, G))

    def constraint_rows(self):
        return np.vstack(self.c_blocks) if self.c_blocks else np.zeros((0, len(self.system.elems)))


def hfq_system(problem: ThmProblem, Z, **kw) -> ReducedSystem:
    """Galerkin ROM with the full quadrature rule (all elements, unit weights)."""
    ne = problem.model.mesh.n_elements
    return ReducedSystem(problem, Z, np.arange(ne), np.ones(ne), **kw)


@dataclass
class RomDataset:
    """Everything the online stage needs for one reduced model."""

    basis: ReducedBasis
    rule_eq: EqRule
    test_basis: np.ndarray          # (n_dofs, M)
    rule_eq_r: EqRule
    union: np.ndarray = field(init=False)
    Z_packed: np.ndarray = field(init=False)
    Y_packed: np.ndarray = field(init=False)
    pos_eqr: np.ndarray = field(init=False)
    packed_bytes: int = field(init=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        space = self.basis.ip.space
        packed = reduce_basis_storage(space, self.basis.modes, self.test_basis,
                                      self.rule_eq.elems, self.rule_eq_r.elems)
        self.union = packed["union"]
        self.Z_packed = packed["Z_packed"]
        self.Y_packed = packed["Y_packed"]
        self.pos_eqr = packed["pos_eqr"]
        self.packed_bytes = packed["nbytes"]

    @property
    def n_modes(self):
        return self.basis.size

    @property
    def n_test(self):
        return self.test_basis.shape[1]

    def system_for(self, problem: ThmProblem, **kw) -> ReducedSystem:
        w = self.rule_eq.weights[self.union]
        return ReducedSystem(problem, self.basis.modes, self.union, w, **kw)

    def indicator_hook(self) -> IndicatorHook:
        w = self.rule_eq_r.weights[self.rule_eq_r.elems]
        return IndicatorHook(self.Y_packed, self.pos_eqr, w)

    def evaluate(self, problem: ThmProblem, grid: TimeGrid, *, hooks=(), **kw):
        """Solve the hyper-reduced ROM and return the trajectory with the
        time-averaged indicator attached."""
        system = self.system_for(problem, **kw)
        ind = self.indicator_hook()
        traj = system.march(grid, hooks=(ind, *hooks))
        traj.delta = ind.delta
        traj.r_avg_hat = ind.r_avg.copy()
        return traj


def build_test_space(representers, ip, tol_pod_res) -> ReducedBasis:
    """Empirical test space: POD of the Riesz representers."""
    R = np.asarray(representers, dtype=float)
    norms = np.sqrt(np.maximum(np.einsum("ik,ik->k", R, ip.matrix @ R), 0.0))
    if not np.any(norms > 0):
        raise ValueError("all representers vanish (ROM is exact?)")
    return pod(R, ip, tol_pod_res)


def replay_residuals(problem: ThmProblem, states, grid: TimeGrid):
    """Per-step assembled residuals of a given state trajectory.

    Recomputes internal variables along the trajectory (no solves), yielding
    (j, residual vector) for j = 1..j_max.  The states may come from the
    full-order solver or from an expanded ROM trajectory.
    """
    W = problem.W0
    for j in range(1, grid.j_max + 1):
        r, W = problem.residual(states[j], states[j - 1], W, grid.dt,
                                grid.times[j])
        yield j, r


def hf_time_avg_indicator(problem: ThmProblem, states, grid: TimeGrid):
    """Dual norm of the time-averaged full-quadrature residual."""
    acc = np.zeros(problem.model.space.n_dofs)
    for _, r in replay_residuals(problem, states, grid):
        acc += grid.dt * r
    return problem.model.ip.dual_norm(acc)


def l2_indicator(problem: ThmProblem, states, grid: TimeGrid):
    """Time-discrete L2 dual-norm residual indicator."""
    ip = problem.model.ip
    total = 0.0
    for _, r in replay_residuals(problem, states, grid):
        total += grid.dt * ip.dual_norm(r) ** 2
    return float(np.sqrt(total))


def trajectory_error(ip, states_hf, states_rom):
    """Time-discrete relative error between two trajectories (steps 1..J).

    The time weights cancel in the ratio on the uniform grid used here.
    """
    Shf = np.asarray(states_hf)[1:]
    Srm = np.asarray(states_rom)[1:]
    if Shf.shape != Srm.shape:
        raise ValueError("trajectory shapes differ")
    D = (Shf - Srm).T
    num = float(np.einsum("ik,ik->", D, ip.matrix @ D))
    H = Shf.T
    den = float(np.einsum("ik,ik->", H, ip.matrix @ H))
    if den <= 0:
        raise ValueError("reference trajectory is zero")
    return float(np.sqrt(num / den))


def per_field_errors(space, ip, states_hf, states_rom):
    """Per-field relative errors in the corresponding H1 norms."""
    o = space.offsets + (space.n_dofs,)
    grams = (ip.gram_u, ip.gram_u, ip.gram_p, ip.gram_t)
    blocks = {"u": (0, 1), "p": (2,), "t": (3,)}
    out = {}
    Shf = np.asarray(states_hf)[1:]
    Srm = np.asarray(states_rom)[1:]
    for name, ids in blocks.items():
        num = den = 0.0
        for i in ids:
            Dh = (Shf[:, o[i]:o[i + 1]] - Srm[:, o[i]:o[i + 1]]).T
            Hh = Shf[:, o[i]:o[i + 1]].T
            G = grams[i]
            num += float(np.einsum("ik,ik->", Dh, G @ Dh))
            den += float(np.einsum("ik,ik->", Hh, G @ Hh))
        out[name] = float(np.sqrt(num / den)) if den > 0 else 0.0
    return out
