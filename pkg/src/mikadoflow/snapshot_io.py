"""On-disk format for sampled fields and iteration runs.

A snapshot file is one JSON header line (ending in a newline) followed by
the raw sample bytes: little-endian float64, component-major (component
axes before grid axes), grid axes in row-major order.  The header records
{"d", "n", "components", "dtype": "f64", "order": "row-major"}.  Writing
then reading a snapshot reproduces the array bit-for-bit.

Time-dependent fields are directories of per-snapshot files plus a
meta.json describing the time grid; runs add per-stage reports and the
norm-row CSV.
"""

import csv
import json
import os

import numpy as np

from .grid import Grid, ScalarField, VectorField, MatrixField, TimeField

__all__ = [
    "write_snapshot", "read_snapshot",
    "write_timefield", "read_timefield",
    "save_triple", "load_triple",
    "save_run",
]

_KIND_COMPONENTS = {"scalar": 0, "vector": 1, "matrix": 2}


def _field_kind(f):
    return {ScalarField: "scalar", VectorField: "vector", MatrixField: "matrix"}[type(f)]


def write_snapshot(path, f):
    """Write one spatial field: JSON header line + raw LE float64 bytes."""
    grid = f.grid
    kind = _field_kind(f)
    header = {
        "d": grid.d,
        "n": grid.n,
        "components": _KIND_COMPONENTS[kind],
        "dtype": "f64",
        "order": "row-major",
    }
    data = np.ascontiguousarray(f.data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    d, n = header["d"], header["n"]
    comp = header["components"]
    if header.get("dtype") != "f64" or header.get("order") != "row-major":
        raise ValueError(f"unsupported snapshot encoding in {path}: {header}")
    grid = Grid(d, n)
    shape = (d,) * comp + grid.shape
    data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    cls = {0: ScalarField, 1: VectorField, 2: MatrixField}[comp]
    return cls(grid, data)


def write_timefield(dirpath, tf, name):
    """Write a TimeField as <dirpath>/<name>_kNNN.snap files plus meta."""
    os.makedirs(dirpath, exist_ok=True)
    for k in range(tf.n_t + 1):
        write_snapshot(os.path.join(dirpath, f"{name}_k{k:04d}.snap"), tf.snapshot(k))
    return {"name": name, "kind": tf.kind, "n_t": tf.n_t,
            "d": tf.grid.d, "n": tf.grid.n}


def read_timefield(dirpath, meta):
    name, kind, n_t = meta["name"], meta["kind"], meta["n_t"]
    grid = Grid(meta["d"], meta["n"])
    tf = TimeField.zeros(grid, kind, n_t)
    for k in range(n_t + 1):
        snap = read_snapshot(os.path.join(dirpath, f"{name}_k{k:04d}.snap"))
        tf.data[k] = snap.data
    return tf


def save_triple(dirpath, triple, label):
    """Persist a (rho, u, R) triple under <dirpath>/<label>/."""
    sub = os.path.join(dirpath, label)
    metas = [
        write_timefield(sub, triple.rho, "rho"),
        write_timefield(sub, triple.u, "u"),
        write_timefield(sub, triple.R, "R"),
    ]
    meta = {"fields": metas, "pde_residual": triple.pde_residual}
    with open(os.path.join(sub, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_triple(dirpath, label):
    from .scheme import DefectTriple

    sub = os.path.join(dirpath, label)
    with open(os.path.join(sub, "meta.json")) as fh:
        meta = json.load(fh)
    fields = {m["name"]: read_timefield(sub, m) for m in meta["fields"]}
    return DefectTriple(
        fields["rho"], fields["u"], fields["R"],
        pde_residual=meta.get("pde_residual"),
    )


def save_run(outdir, triples, reports, rows):
    """Persist a full iteration run: triples, stage reports, norm rows."""
    os.makedirs(outdir, exist_ok=True)
    for q, triple in enumerate(triples):
        save_triple(outdir, triple, f"stage{q:02d}")
    with open(os.path.join(outdir, "reports.json"), "w") as fh:
        json.dump(reports, fh, indent=2, default=_jsonable)
    with open(os.path.join(outdir, "norms.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q", "t", "term", "norm", "value"])
        writer.writerows(rows)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")
