"""Experiment configuration: one JSON file, all defaults pre-filled.

The config owns the mesh spec, the time grid, the tolerance set, sampling
sizes and the RNG seed.  Any physics-constant override is recorded in the
run metadata emitted next to the results.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import MeshConfig
from .physics import PhysicalConstants


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    physics: dict = field(default_factory=dict)     # PhysicalConstants overrides
    mu: list | None = None                          # parameter vector; None -> nominal
    spread: float = 0.15                            # parameter box half-width

    j_max: int = 100
    t_final: float = 1.0

    tol_pod: float = 1e-7
    tol_pod_res: float = 1e-5
    tol_eq_grid: tuple = (1e-8, 1e-12, 1e-14)
    tol_eq: float = 1e-12
    tol_eq_r: float = 1e-12
    tol_loop: float = 1e-6
    n_count_max: int = 10
    newton_tol: float = 1e-9

    n_train: int = 50
    n_test: int = 10
    n_train_eq: int = 5
    i_s_count: int = 20

    srp_n_values: tuple | None = None               # None -> 2,4,...,N_pod
    srp_mark_n: int = 12                            # basis size for reduced-mesh dumps

    strategy: str = "hpod"
    driver: str = "indicator"
    scatter_errors: bool = False

    seed: int = 0
    threads: int = 1
    out_dir: str = "out"

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(**self.physics) if self.physics else PhysicalConstants()

    def rng(self):
        """Counter-based generator, reproducible from the seed."""
        return np.random.Generator(np.random.Philox(self.seed))

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "mesh" in d and isinstance(d["mesh"], dict):
            mesh_kw = dict(d["mesh"])
            for key in ("layer_fractions", "alveolus_centers"):
                if key in mesh_kw and mesh_kw[key] is not None:
                    mesh_kw[key] = tuple(mesh_kw[key])
            d["mesh"] = MeshConfig(**mesh_kw)
        for key in ("tol_eq_grid", "srp_n_values"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
