"""Offline adaptive sampling: greedy parameter selection with basis
enrichment, and per-iteration ROM construction.

Each outer iteration solves the full-order model at the currently selected
parameter, enriches the basis (hierarchical or approximate-hierarchical
compression), rebuilds the reduced model and its error indicator, scores
every training candidate and selects the maximiser.  The "strong" driver
scores by true errors against cached full-order solutions instead of by the
indicator.
"""
from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .compression import ReducedBasis, hapod_update, hpod_update
from .fespace import InnerProduct
from .hyperreduction import compute_eq_rule, stack_constraints
from .physics import ThmParameters
from .rom import (RomDataset, RomSolveError, TrainingHook, build_test_space,
                  hfq_system, trajectory_error)
from .thm import ThmModel, TimeGrid, fom_solve, uniform_sample_steps


@dataclass
class GreedyConfig:
    tol_pod: float = 1e-7
    tol_pod_res: float = 1e-5
    tol_eq: float = 1e-12
    tol_eq_r: float = 1e-12
    tol_loop: float = 1e-6
    n_count_max: int = 10
    n_train_eq: int = 5
    i_s_count: int = 20
    newton_tol: float = 1e-9
    strategy: str = "hpod"       # 'hpod' | 'hapod'
    driver: str = "indicator"    # 'indicator' | 'strong'


class FomCache:
    """Caches full-order trajectories keyed by the exact parameter bytes."""

    def __init__(self, model: ThmModel, grid: TimeGrid, snapshot_steps=None,
                 newton_tol=1e-9):
        self.model = model
        self.grid = grid
        if snapshot_steps is None:
            snapshot_steps = np.concatenate(
                [[0], uniform_sample_steps(grid.j_max, 20)])
        self.snapshot_steps = snapshot_steps
        self.newton_tol = newton_tol
        self._store = {}
        self._lock = threading.Lock()
        self.solves = 0

    def key(self, vec):
        return np.asarray(vec, dtype=float).tobytes()

    def get(self, vec):
        k = self.key(vec)
        with self._lock:
            hit = self._store.get(k)
        if hit is not None:
            return hit
        problem = self.model.problem(ThmParameters.from_vector(vec))
        result = fom_solve(problem, self.grid,
                           snapshot_steps=self.snapshot_steps,
                           newton_tol=self.newton_tol)
        with self._lock:
            self._store.setdefault(k, result)
            self.solves += 1
        return self._store[k]


def construct_rom(model: ThmModel, basis: ReducedBasis, train_vecs,
                  cfg: GreedyConfig, grid: TimeGrid) -> RomDataset:
    """Build the hyper-reduced dataset for the current basis.

    For every training parameter the full-quadrature ROM is solved once; the
    march collects the preconditioned constraint rows at the sampling steps
    and the unassembled time-averaged residual, from which the Riesz
    representers, the empirical test space and both sparse quadrature rules
    follow.
    """
    ip = model.ip
    space = model.space
    areas = model.mesh.element_areas
    sample_steps = uniform_sample_steps(grid.j_max, cfg.i_s_count)

    c_blocks = []
    avg_residuals = []
    representers = []
    for vec in train_vecs:
        problem = model.problem(ThmParameters.from_vector(vec))
        system = hfq_system(problem, basis.modes, newton_tol=cfg.newton_tol)
        trainer = TrainingHook(system, sample_steps)
        system.march(grid, hooks=(trainer,))
        c_blocks.append(trainer.constraint_rows())
        avg_residuals.append(trainer.r_avg_un)
        r_global = space.scatter_add(trainer.r_avg_un)
        r_global[space.dirichlet_idx] = 0.0
        representers.append(ip.riesz(r_global))

    rule_eq = compute_eq_rule(
        stack_constraints(c_blocks, areas, normalize="rows"), cfg.tol_eq)
    test_basis = build_test_space(np.stack(representers, axis=1), ip,
                                  cfg.tol_pod_res)
    Y_loc = test_basis.modes[space.loc2glob]          # (ne, 18, M)
    g_blocks = [np.einsum("eam,ea->me", Y_loc, r_un) for r_un in avg_residuals]
    rule_eq_r = compute_eq_rule(
        stack_constraints(g_blocks, areas, normalize="rhs"), cfg.tol_eq_r)

    return RomDataset(
        basis=basis, rule_eq=rule_eq, test_basis=test_basis.modes,
        rule_eq_r=rule_eq_r,
        meta={
            "n_train_rom": len(train_vecs),
            "sample_steps": sample_steps.tolist(),
            "tol_eq": cfg.tol_eq,
            "tol_eq_r": cfg.tol_eq_r,
        },
    )


@dataclass
class GreedyIteration:
    index: int
    mu_star: np.ndarray
    selected: int
    n_modes: int
    n_eq: int
    n_eq_r: int
    scores: np.ndarray           # indicator or true error per candidate
    max_score: float
    deltas: np.ndarray | None = None
    errors: np.ndarray | None = None
    test_error: float | None = None
    wall_time: float = 0.0


@dataclass
class GreedyState:
    iterations: list = field(default_factory=list)
    sampled: list = field(default_factory=list)
    basis: ReducedBasis | None = None
    dataset: RomDataset | None = None
    terminated: bool = False

    @property
    def n_iterations(self):
        return len(self.iterations)


def _candidate_delta(dataset, model, grid, vec, newton_tol):
    try:
        problem = model.problem(ThmParameters.from_vector(vec))
        traj = dataset.evaluate(problem, grid, newton_tol=newton_tol)
        return traj.delta, traj
    except RomSolveError:
        return np.inf, None


def candidate_error(dataset, model, grid, vec, fom_cache, newton_tol=1e-9):
    """True relative trajectory error of the hyper-reduced ROM at ``vec``."""
    fom = fom_cache.get(vec)
    try:
        problem = model.problem(ThmParameters.from_vector(vec))
        traj = dataset.evaluate(problem, grid, newton_tol=newton_tol)
    except RomSolveError:
        return np.inf, None
    states = traj.states(dataset.basis.modes)
    return trajectory_error(model.ip, fom.states, states), traj


def thread_map(fn, items, threads=1):
    """Ordered map, optionally over a thread pool (results stay by index)."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def max_test_error(dataset, model, grid, test_vecs, fom_cache, newton_tol=1e-9,
                   threads=1):
    errs = thread_map(
        lambda v: candidate_error(dataset, model, grid, v, fom_cache,
                                  newton_tol)[0],
        list(test_vecs), threads)
    return float(np.max(errs)), errs


def pod_greedy(model: ThmModel, train_vecs, cfg: GreedyConfig, rng,
               fom_cache: FomCache, grid: TimeGrid, *, test_vecs=None,
               collect_scatter=False, threads=1) -> GreedyState:
    """Greedy sampling over the training set.

    ``rng`` draws the extra i.i.d. quadrature-training parameters of each
    ROM construction.  With ``collect_scatter`` (or the strong driver) the
    true candidate errors are computed each iteration, which costs one
    cached full-order solve per candidate.
    """
    train_vecs = np.asarray(train_vecs, dtype=float)
    n_train = len(train_vecs)
    if n_train == 0:
        raise ValueError("empty training set")
    if cfg.driver not in ("indicator", "strong"):
        raise ValueError(f"unknown driver {cfg.driver!r}")
    update = hpod_update if cfg.strategy == "hpod" else hapod_update
    if cfg.strategy not in ("hpod", "hapod"):
        raise ValueError(f"unknown strategy {cfg.strategy!r}")

    state = GreedyState()
    basis = None
    mu_star = train_vecs[0]
    selected = 0

    from .physics import sample_parameters

    for it in range(1, cfg.n_count_max + 1):
        t0 = time.perf_counter()
        fom = fom_cache.get(mu_star)
        state.sampled.append(mu_star.copy())
        basis = update(basis, fom.snapshots, model.ip, cfg.tol_pod)

        extras = sample_parameters(rng, cfg.n_train_eq) if cfg.n_train_eq else \
            np.zeros((0, 4))
        rom_train = np.vstack([np.asarray(state.sampled), extras])
        dataset = construct_rom(model, basis, rom_train, cfg, grid)

        need_errors = cfg.driver == "strong" or collect_scatter
        if need_errors:
            # cache the candidate FOM solves up front (sequential: the cache
            # is shared mutable state)
            for vec in train_vecs:
                fom_cache.get(vec)

        def score_candidate(vec):
            delta, traj = _candidate_delta(dataset, model, grid, vec,
                                           cfg.newton_tol)
            err = np.nan
            if need_errors:
                if traj is None:
                    err = np.inf
                else:
                    fom_i = fom_cache.get(vec)
                    states = traj.states(dataset.basis.modes)
                    err = trajectory_error(model.ip, fom_i.states, states)
            return delta, err

        results = thread_map(score_candidate, list(train_vecs), threads)
        deltas = np.array([r[0] for r in results])
        errors = np.array([r[1] for r in results])
        scores = errors if cfg.driver == "strong" else deltas
        selected = int(np.argmax(scores))
        mu_star = train_vecs[selected]

        test_err = None
        if test_vecs is not None:
            for vec in test_vecs:
                fom_cache.get(vec)
            test_err, _ = max_test_error(dataset, model, grid, test_vecs,
                                         fom_cache, cfg.newton_tol, threads)

        state.iterations.append(GreedyIteration(
            index=it, mu_star=mu_star.copy(), selected=selected,
            n_modes=basis.size, n_eq=dataset.rule_eq.n_sampled,
            n_eq_r=dataset.rule_eq_r.n_sampled, scores=scores.copy(),
            max_score=float(scores[selected]),
            deltas=deltas.copy(), errors=errors.copy() if need_errors else None,
            test_error=test_err, wall_time=time.perf_counter() - t0,
        ))
        state.basis = basis
        state.dataset = dataset
        if scores[selected] < cfg.tol_loop:
            state.terminated = True
            break

    return state
