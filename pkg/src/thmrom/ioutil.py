"""File formats: raw binary trajectories with JSON sidecars, dataset
archives, deterministic CSV tables.

CSV floats are written with ``repr`` (shortest round-trip form), so files
are byte-reproducible for identical inputs.
"""
from __future__ import annotations

import json
import os

import numpy as np


def fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def save_trajectory(prefix, states, times, *, field_offsets=None, meta=None):
    """States as little-endian float64 (C order) plus a JSON sidecar."""
    states = np.ascontiguousarray(states, dtype="<f8")
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    with open(prefix + ".bin", "wb") as fh:
        fh.write(states.tobytes())
    sidecar = {
        "shape": list(states.shape),
        "dtype": "<f8",
        "order": "C",
        "times": np.asarray(times, dtype=float).tolist(),
    }
    if field_offsets is not None:
        sidecar["field_offsets"] = [int(o) for o in field_offsets]
    if meta:
        sidecar["meta"] = meta
    with open(prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_trajectory(prefix):
    with open(prefix + ".json") as fh:
        sidecar = json.load(fh)
    data = np.fromfile(prefix + ".bin", dtype=sidecar["dtype"])
    states = data.reshape(sidecar["shape"])
    times = np.array(sidecar["times"])
    return states, times, sidecar


def save_rom_dataset(path, dataset):
    """One-archive serialization of a reduced dataset (npz)."""
    np.savez(
        path,
        modes=dataset.basis.modes,
        eigs=dataset.basis.eigs,
        test_basis=dataset.test_basis,
        rho_eq=dataset.rule_eq.weights,
        rho_eq_r=dataset.rule_eq_r.weights,
        meta=json.dumps({
            **dataset.meta,
            "rule_eq": dataset.rule_eq.provenance,
            "rule_eq_r": dataset.rule_eq_r.provenance,
            "packed_bytes": dataset.packed_bytes,
        }),
    )


def load_rom_dataset(path, ip):
    from .compression import ReducedBasis
    from .hyperreduction import EqRule
    from .rom import RomDataset

    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        basis = ReducedBasis(z["modes"].copy(), z["eigs"].copy(), ip)
        test_basis = z["test_basis"].copy()
        rho = z["rho_eq"].copy()
        rho_r = z["rho_eq_r"].copy()
    rule = EqRule(rho, residual=0.0, delta_const=0.0,
                  provenance=meta.get("rule_eq", {}))
    rule_r = EqRule(rho_r, residual=0.0, delta_const=0.0,
                    provenance=meta.get("rule_eq_r", {}))
    return RomDataset(basis=basis, rule_eq=rule, test_basis=test_basis,
                      rule_eq_r=rule_r, meta=meta)
