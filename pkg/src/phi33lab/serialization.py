"""Field containers and run artifacts.

Binary field container: a one-line JSON header (magic, version, n_grid,
count, optional run config) terminated by a newline, then little-endian
float64 re/im pairs in lexicographic order over the half index set
Lambda union {0} (the mode with first nonzero component positive).  Small
grids can round-trip through plain JSON.  CSV outputs embed their run
config in a leading comment line.
"""

from __future__ import annotations

import io
import json

import numpy as np

from .fields import WienerPath
from .spectral import SpectralField, SpectralGrid, hermitian_reflect

MAGIC = "SFLD"
VERSION = 1


def _half_modes(n_grid: int) -> np.ndarray:
    """Lexicographically sorted representatives of Lambda_0 (zero included)."""
    r = np.arange(-n_grid, n_grid + 1)
    X, Y, Z = np.meshgrid(r, r, r, indexing="ij")
    modes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    keep = ((modes[:, 2] > 0)
            | ((modes[:, 2] == 0) & (modes[:, 1] > 0))
            | ((modes[:, 2] == 0) & (modes[:, 1] == 0) & (modes[:, 0] >= 0)))
    half = modes[keep]
    order = np.lexsort((half[:, 2], half[:, 1], half[:, 0]))
    return half[order]


def save_field(path, f: SpectralField, config: dict | None = None):
    """Write one field (or a batch) to the binary container."""
    half = _half_modes(f.grid.n_grid)
    L = f.grid.n_modes_axis
    idx = tuple((half[:, k] % L) for k in range(3))
    flat = f.coeff[..., idx[0], idx[1], idx[2]]
    batch = int(np.prod(f.batch_shape)) if f.batch_shape else 1
    header = {"magic": MAGIC, "version": VERSION, "n_grid": f.grid.n_grid,
              "count": batch, "batch_shape": list(f.batch_shape),
              "config": config or {}}
    payload = np.empty(flat.shape + (2,), dtype="<f8")
    payload[..., 0] = flat.real
    payload[..., 1] = flat.imag
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(payload.tobytes())


def load_field(path):
    """Read a field container; returns (SpectralField, config)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != MAGIC:
            raise ValueError("not a field container")
        raw = fh.read()
    n_grid = header["n_grid"]
    half = _half_modes(n_grid)
    batch_shape = tuple(header.get("batch_shape", []))
    data = np.frombuffer(raw, dtype="<f8").reshape(batch_shape + (len(half), 2))
    flat = data[..., 0] + 1j * data[..., 1]
    grid = SpectralGrid(n_grid)
    L = grid.n_modes_axis
    coeff = np.zeros(batch_shape + (L, L, L), dtype=np.complex128)
    idx = tuple((half[:, k] % L) for k in range(3))
    coeff[..., idx[0], idx[1], idx[2]] = flat
    full = coeff + hermitian_reflect(coeff)
    # the self-conjugate zero mode was counted twice
    full[..., 0, 0, 0] = coeff[..., 0, 0, 0]
    return SpectralField(grid, full), header.get("config", {})


def field_to_json(f: SpectralField) -> str:
    """JSON codec for small grids (single field only)."""
    if f.batch_shape:
        raise ValueError("JSON codec holds single fields")
    half = _half_modes(f.grid.n_grid)
    L = f.grid.n_modes_axis
    entries = [[int(n[0]), int(n[1]), int(n[2]),
                float(f.coeff[tuple(c % L for c in n)].real),
                float(f.coeff[tuple(c % L for c in n)].imag)] for n in half]
    return json.dumps({"magic": MAGIC, "n_grid": f.grid.n_grid, "modes": entries})


def field_from_json(s: str) -> SpectralField:
    obj = json.loads(s)
    grid = SpectralGrid(obj["n_grid"])
    L = grid.n_modes_axis
    coeff = np.zeros((L, L, L), dtype=np.complex128)
    for n1, n2, n3, re, im in obj["modes"]:
        coeff[n1 % L, n2 % L, n3 % L] = re + 1j * im
    full = coeff + hermitian_reflect(coeff)
    full[0, 0, 0] = coeff[0, 0, 0]
    return SpectralField(grid, full)


def save_wiener_path(path, wp: WienerPath):
    np.savez_compressed(path, times=wp.times, increments=wp.increments,
                        seed=np.int64(wp.seed), sample=np.int64(wp.sample),
                        n_grid=np.int64(wp.grid.n_grid))


def load_wiener_path(path) -> WienerPath:
    with np.load(path) as z:
        grid = SpectralGrid(int(z["n_grid"]))
        return WienerPath(grid, z["times"], z["increments"],
                          int(z["seed"]), int(z["sample"]))


def write_csv(path, rows: list[dict], config: dict | None = None):
    """CSV with '# config: {...}' header comment; columns from the first row."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0].keys())
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config or {}, sort_keys=True) + "\n")
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in cols) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path):
    """Inverse of write_csv: returns (rows, config)."""
    with open(path) as fh:
        first = fh.readline()
        config = json.loads(first.split("# config: ", 1)[1]) if first.startswith("# config:") else {}
        cols = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            vals = line.strip().split(",")
            row = {}
            for c, v in zip(cols, vals):
                try:
                    row[c] = int(v)
                except ValueError:
                    try:
                        row[c] = float(v)
                    except ValueError:
                        row[c] = v
            rows.append(row)
    return rows, config


def write_json(path, obj: dict, config: dict | None = None):
    payload = {"config": config or {}, "result": obj}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_coerce)


def _coerce(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v)}")
