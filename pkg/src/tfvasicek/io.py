"""File output: atomic writes, PathSet CSV with JSON sidecar, JSON helpers."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .tfbm import PathSet

SCHEMA_VERSION = 1


@contextlib.contextmanager
def atomic_writer(path, mode: str = "w"):
    """Open a temp file next to ``path`` and rename it into place on success.

    On any exception the temp file is removed and ``path`` is untouched.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    with atomic_writer(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".json")


def write_pathset(path, ps: PathSet) -> Path:
    """CSV with header ``t,path_0,...`` (one row per node) plus ``<path>.json`` metadata."""
    t = ps.grid.times
    with atomic_writer(path) as fh:
        fh.write(",".join(["t"] + [f"path_{i}" for i in range(ps.n_paths)]) + "\n")
        for k in range(len(t)):
            fh.write(",".join(repr(float(x)) for x in (t[k], *ps.values[:, k])) + "\n")
    meta = {
        "params": ps.params.to_dict() if ps.params is not None else None,
        "grid": ps.grid.to_dict(),
        "seed": int(ps.seed),
        "schema_version": SCHEMA_VERSION,
    }
    meta.update({k: v for k, v in ps.meta.items() if k not in meta})
    side = sidecar_path(path)
    write_json(side, meta)
    return side


def read_pathset(path) -> PathSet:
    from .tfbm import SampleGrid, TfbmParams

    meta = json.loads(sidecar_path(path).read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = SampleGrid(float(meta["grid"]["t_max"]), int(meta["grid"]["n_steps"]))
    params = meta.get("params")
    tp = TfbmParams(params["H"], params["lambda"]) if params else None
    return PathSet(grid, np.ascontiguousarray(data[:, 1:].T), int(meta["seed"]), tp)
