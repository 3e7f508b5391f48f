import numpy as np
import pytest

from thmrom.fespace import MixedSpace, assemble_gramians
from thmrom.mesh import MeshConfig, build_mesh
from thmrom.physics import ThmParameters
from thmrom.thm import ThmModel, TimeGrid, fom_solve


def make_model(mesh_cfg, eq_scale=ThmModel.DEFAULT_EQ_SCALE):
    mesh = build_mesh(mesh_cfg)
    space = MixedSpace(mesh)
    ip = assemble_gramians(mesh, space)
    return ThmModel(mesh, space, ip, eq_scale=eq_scale)


@pytest.fixture(scope="session")
def small_model():
    """Coarse mesh with one alveolus; cheap enough for solver tests."""
    cfg = MeshConfig(h_coarse=0.3, refinement_factor=2, band_pad=0.1,
                     band_height=0.15, alveolus_centers=(0.5,),
                     alveolus_width=0.12)
    return make_model(cfg)


@pytest.fixture(scope="session")
def micro_model():
    """Minimal mesh (no refinement) for dense-linear-algebra oracles."""
    cfg = MeshConfig(h_coarse=0.5, refinement_factor=1.0,
                     alveolus_centers=(0.5,), alveolus_width=0.25,
                     band_pad=0.05, band_height=0.2)
    return make_model(cfg)


@pytest.fixture(scope="session")
def nominal_problem(small_model):
    return small_model.problem(ThmParameters.nominal())


@pytest.fixture(scope="session")
def srp_bundle(small_model):
    """FOM trajectory + compression inputs shared by ROM-layer tests."""
    from thmrom.compression import pod

    grid = TimeGrid(j_max=25)
    problem = small_model.problem(ThmParameters.nominal())
    fom = fom_solve(problem, grid)
    basis = pod(fom.snapshots, small_model.ip, 1e-10)
    return {"model": small_model, "problem": problem, "grid": grid,
            "fom": fom, "basis": basis}


def random_state(space, rng, scale=1e-3, base=None):
    U = (base.copy() if base is not None else space.zero_state())
    U += scale * rng.standard_normal(space.n_dofs)
    U[space.dirichlet_idx] = 0.0
    return U
