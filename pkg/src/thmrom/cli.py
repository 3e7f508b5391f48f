"""Command-line drivers for the three experiment families.

Subcommands: ``fom`` (full-order solve), ``srp`` (solution reproduction
study: compression quality, quadrature sparsity and error sweeps at a fixed
parameter), ``greedy`` (adaptive parametric sampling), ``error`` (trajectory
comparison), ``mesh-dump``.  All tables are CSV with stable headers; run
metadata lands in a JSON next to them.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .compression import pod, projection_errors
from .config import ExperimentConfig
from .fespace import MatrixInner, MixedSpace, assemble_gramians
from .greedy import FomCache, GreedyConfig, max_test_error, pod_greedy
from .hyperreduction import compute_eq_rule, hf_rule, stack_constraints
from .ioutil import save_rom_dataset, save_trajectory, load_trajectory, write_csv
from .mesh import build_mesh
from .numerics import sym_eig
from .physics import ThmParameters, sample_parameters
from .rom import (RomDataset, RomSolveError, TrainingHook, build_test_space,
                  hfq_system, per_field_errors, trajectory_error)
from .thm import ThmModel, TimeGrid, fom_solve, uniform_sample_steps


def build_model(cfg: ExperimentConfig):
    mesh = build_mesh(cfg.mesh)
    space = MixedSpace(mesh)
    ip = assemble_gramians(mesh, space)
    model = ThmModel(mesh, space, ip)
    grid = TimeGrid(j_max=cfg.j_max, t_final=cfg.t_final)
    return model, grid


def _params(cfg: ExperimentConfig) -> ThmParameters:
    const = cfg.constants()
    if cfg.mu is None:
        return ThmParameters.nominal(const)
    return ThmParameters.from_vector(np.asarray(cfg.mu, dtype=float), const)


def _write_meta(out_dir, cfg, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    meta = {"config": cfg.to_dict()}
    if extra:
        meta.update(extra)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, default=str)


def cmd_mesh_dump(cfg: ExperimentConfig):
    mesh = build_mesh(cfg.mesh)
    out = os.path.join(cfg.out_dir, "mesh.json")
    os.makedirs(cfg.out_dir, exist_ok=True)
    mesh.to_json(out)
    print(f"mesh: {mesh.n_elements} elements, {mesh.n_nodes} nodes -> {out}")
    print(f"area: {float(mesh.element_areas.sum())!r}")
    return 0


def cmd_fom(cfg: ExperimentConfig):
    model, grid = build_model(cfg)
    params = _params(cfg)
    problem = model.problem(params)
    result = fom_solve(problem, grid, newton_tol=cfg.newton_tol)
    out = os.path.join(cfg.out_dir, "fom")
    save_trajectory(
        os.path.join(out, "trajectory"), result.states, result.times,
        field_offsets=model.space.offsets,
        meta={"mu": params.vector().tolist()},
    )
    write_csv(os.path.join(out, "newton.csv"), ["step", "iterations"],
              list(enumerate(result.newton_iters, start=1)))
    _write_meta(out, cfg, {
        "wall_time": result.wall_time,
        "newton_total": int(np.sum(result.newton_iters)),
    })
    print(f"fom: {grid.j_max} steps in {result.wall_time:.1f}s, "
          f"max newton iters {max(result.newton_iters)}")
    return 0


def _extracted_field_errors(space, ip, states, Zmodes, n_values):
    """Projection errors of per-field snapshot blocks onto the per-field
    restrictions of the global modes vs their field-optimal compression."""
    import scipy.sparse as sp

    from .compression import orthonormalize

    o = space.offsets + (space.n_dofs,)
    field_slices = {"u": slice(o[0], o[2]), "p": slice(o[2], o[3]),
                    "t": slice(o[3], o[4])}
    grams = {"u": sp.block_diag([ip.gram_u, ip.gram_u], format="csr"),
             "p": ip.gram_p, "t": ip.gram_t}
    tables = {}
    for name, sl in field_slices.items():
        inner = MatrixInner(grams[name])
        S = states[1:, sl].T
        extracted, _ = orthonormalize(inner, Zmodes[sl, :])
        optimal = pod(S, inner, 1e-14)
        rows = []
        for n in n_values:
            n_e = min(n, extracted.shape[1])
            n_o = min(n, optimal.size)
            re_, norms = projection_errors(inner, extracted[:, :n_e], S)
            ro_, _ = projection_errors(inner, optimal.modes[:, :n_o], S)
            wsum = norms**2
            rows.append((n,
                         float(np.sqrt(np.sum((re_ * norms) ** 2) / wsum.sum())),
                         float(np.sqrt(np.sum((ro_ * norms) ** 2) / wsum.sum()))))
        tables[name] = rows
    return tables


def cmd_srp(cfg: ExperimentConfig):
    t_start = time.perf_counter()
    model, grid = build_model(cfg)
    space, ip, mesh = model.space, model.ip, model.mesh
    params = _params(cfg)
    problem = model.problem(params)
    out = os.path.join(cfg.out_dir, "srp")
    os.makedirs(out, exist_ok=True)

    fom = fom_solve(problem, grid, newton_tol=cfg.newton_tol)
    S = fom.snapshots

    lam_all, _ = sym_eig(ip.gram(S))
    lam_all = lam_all[lam_all > 0]
    write_csv(os.path.join(out, "eigenvalues.csv"), ["n", "lambda_ratio"],
              [(n + 1, lam / lam_all[0]) for n, lam in enumerate(lam_all)])

    Zfull = pod(S, ip, 1e-14)
    n_values = cfg.srp_n_values or tuple(range(2, Zfull.size + 1, 2))
    n_values = tuple(n for n in n_values if n <= Zfull.size)

    field_tables = _extracted_field_errors(space, ip, fom.states, Zfull.modes,
                                           n_values)
    for name, rows in field_tables.items():
        write_csv(os.path.join(out, f"pod_projection_{name}.csv"),
                  ["N", "extracted", "optimal"], rows)

    tols = tuple(cfg.tol_eq_grid)
    err_rows = []
    elem_rows = []
    sample_steps = np.arange(1, grid.j_max + 1)
    for n in n_values:
        Z = Zfull.truncate(n)
        coeffs = ip.project_coeffs(Z.modes, fom.states.T)
        e_proj = trajectory_error(ip, fom.states, (Z.modes @ coeffs).T)
        system = hfq_system(problem, Z.modes, newton_tol=cfg.newton_tol)
        trainer = TrainingHook(system, sample_steps)
        try:
            traj = system.march(grid, hooks=(trainer,))
            e_hfq = trajectory_error(ip, fom.states, traj.states(Z.modes))
        except RomSolveError:
            e_hfq = np.nan
        eq_sys = stack_constraints([trainer.constraint_rows()],
                                   mesh.element_areas, normalize="rows")
        row_err = [n, e_proj, e_hfq]
        row_el = [n]
        for tol in tols:
            rule = hf_rule(mesh.n_elements) if tol == 0.0 else \
                compute_eq_rule(eq_sys, tol)
            try:
                sys_eq = type(system)(problem, Z.modes, np.arange(mesh.n_elements),
                                      rule.weights, newton_tol=cfg.newton_tol)
                traj_eq = sys_eq.march(grid)
                e_eq = trajectory_error(ip, fom.states, traj_eq.states(Z.modes))
            except RomSolveError:
                e_eq = np.nan
            row_err.append(e_eq)
            row_el.append(100.0 * rule.n_sampled / mesh.n_elements)
            if n == cfg.srp_mark_n:
                write_csv(os.path.join(out, f"reduced_mesh_tol{tol:g}.csv"),
                          ["element"], [(int(k),) for k in rule.elems])
        err_rows.append(row_err)
        elem_rows.append(row_el)

    tol_names = [f"eq_{tol:g}" for tol in tols]
    write_csv(os.path.join(out, "errors.csv"),
              ["N", "proj", "hfq"] + tol_names, err_rows)
    write_csv(os.path.join(out, "elements.csv"),
              ["N"] + [f"pct_{tol:g}" for tol in tols], elem_rows)
    _write_meta(out, cfg, {"n_modes_max": Zfull.size,
                           "wall_time": time.perf_counter() - t_start})
    print(f"srp: N sweep {n_values}, tables in {out}")
    return 0


def cmd_greedy(cfg: ExperimentConfig):
    t_start = time.perf_counter()
    model, grid = build_model(cfg)
    rng = cfg.rng()
    const = cfg.constants()
    train = sample_parameters(rng, cfg.n_train, const, cfg.spread)
    test = sample_parameters(rng, cfg.n_test, const, cfg.spread)
    snapshot_steps = np.concatenate(
        [[0], uniform_sample_steps(grid.j_max, cfg.i_s_count)])
    cache = FomCache(model, grid, snapshot_steps, newton_tol=cfg.newton_tol)
    gcfg = GreedyConfig(
        tol_pod=cfg.tol_pod, tol_pod_res=cfg.tol_pod_res, tol_eq=cfg.tol_eq,
        tol_eq_r=cfg.tol_eq_r, tol_loop=cfg.tol_loop,
        n_count_max=cfg.n_count_max, n_train_eq=cfg.n_train_eq,
        i_s_count=cfg.i_s_count, newton_tol=cfg.newton_tol,
        strategy=cfg.strategy, driver=cfg.driver,
    )
    state = pod_greedy(model, train, gcfg, rng, cache, grid, test_vecs=test,
                       collect_scatter=cfg.scatter_errors, threads=cfg.threads)

    out = os.path.join(cfg.out_dir, f"greedy_{cfg.strategy}_{cfg.driver}")
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "train_params.csv"),
              ["index", "E_ua", "nu_ua", "tau", "c_al"],
              [(i, *vec) for i, vec in enumerate(train)])
    write_csv(os.path.join(out, "test_params.csv"),
              ["index", "E_ua", "nu_ua", "tau", "c_al"],
              [(i, *vec) for i, vec in enumerate(test)])
    hist_rows = []
    for itr in state.iterations:
        hist_rows.append((itr.index, itr.n_modes, itr.n_eq, itr.n_eq_r,
                          itr.selected, itr.max_score,
                          *(itr.mu_star.tolist())))
        scatter = [(i, itr.deltas[i],
                    itr.errors[i] if itr.errors is not None else "")
                   for i in range(len(itr.deltas))]
        write_csv(os.path.join(out, f"scatter_it{itr.index}.csv"),
                  ["index", "delta", "error"], scatter)
    write_csv(os.path.join(out, "history.csv"),
              ["iteration", "N", "Q", "Q_r", "selected", "max_score",
               "E_ua", "nu_ua", "tau", "c_al"], hist_rows)
    write_csv(os.path.join(out, "test_errors.csv"),
              ["iteration", "N", "max_test_error"],
              [(itr.index, itr.n_modes, itr.test_error)
               for itr in state.iterations])
    save_rom_dataset(os.path.join(out, "rom_dataset.npz"), state.dataset)
    _write_meta(out, cfg, {
        "fom_solves": cache.solves,
        "terminated": state.terminated,
        "wall_time": time.perf_counter() - t_start,
        "sampled": [v.tolist() for v in state.sampled],
    })
    print(f"greedy[{cfg.strategy}/{cfg.driver}]: {state.n_iterations} iterations, "
          f"final N={state.basis.size}, terminated={state.terminated}")
    return 0


def cmd_error(cfg: ExperimentConfig, prefix_hf, prefix_rom):
    model, grid = build_model(cfg)
    states_hf, times_hf, _ = load_trajectory(prefix_hf)
    states_rom, times_rom, _ = load_trajectory(prefix_rom)
    if states_hf.shape != states_rom.shape or not np.array_equal(times_hf, times_rom):
        raise SystemExit("trajectory grids do not match")
    e = trajectory_error(model.ip, states_hf, states_rom)
    fields = per_field_errors(model.space, model.ip, states_hf, states_rom)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_csv(os.path.join(cfg.out_dir, "error.csv"),
              ["E", "E_u", "E_p", "E_t"],
              [(e, fields["u"], fields["p"], fields["t"])])
    print(f"E = {e!r}  (u: {fields['u']!r}, p: {fields['p']!r}, "
          f"t: {fields['t']!r})")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="thmrom",
        description="Reduced-order modelling pipeline for a coupled "
                    "thermo-hydro-mechanical system")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="RNG seed override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--threads", type=int, help="worker thread cap")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fom", help="full-order solve at one parameter")
    sub.add_parser("srp", help="solution reproduction study")
    p_greedy = sub.add_parser("greedy", help="adaptive parametric sampling")
    p_greedy.add_argument("--strategy", choices=("hpod", "hapod"))
    p_greedy.add_argument("--driver", choices=("indicator", "strong"))
    p_err = sub.add_parser("error", help="compare two trajectory files")
    p_err.add_argument("trajectory_hf")
    p_err.add_argument("trajectory_rom")
    sub.add_parser("mesh-dump", help="write the mesh as JSON")
    parser.add_argument("--tol-eq", type=float, nargs="+",
                        help="EQ tolerance grid override")

    args = parser.parse_args(argv)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if args.tol_eq:
        cfg.tol_eq_grid = tuple(args.tol_eq)
        cfg.tol_eq = args.tol_eq[-1]
    if args.command == "greedy":
        if args.strategy:
            cfg.strategy = args.strategy
        if args.driver:
            cfg.driver = args.driver

    if args.command == "fom":
        return cmd_fom(cfg)
    if args.command == "srp":
        return cmd_srp(cfg)
    if args.command == "greedy":
        return cmd_greedy(cfg)
    if args.command == "error":
        return cmd_error(cfg, args.trajectory_hf, args.trajectory_rom)
    if args.command == "mesh-dump":
        return cmd_mesh_dump(cfg)
    raise SystemExit(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
