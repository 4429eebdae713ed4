"""Binary and CSV artifact formats, checksums, and run manifests.

Density-field binary format (extension ``.kvnf``), little-endian throughout:

    offset  size  field
    0       4     magic b"KVNF"
    4       4     format version (uint32; currently 1)
    8       4     n_q (uint32)
    12      4     n_p (uint32)
    16      1     periodic_q (uint8)
    17      1     periodic_p (uint8)
    18      2     zero padding
    20      32    q_min, q_max, p_min, p_max (4 x float64)
    52      8     snapshot time (float64; NaN when unset)
    60      4     zero padding (header is exactly 64 bytes)
    64      -     values, n_q * n_p float64, row-major (q-major)

Fock binary format (``.kvnq`` states, ``.kvno`` operators): a 76-byte header

    magic b"KVNQ" / b"KVNO", version (uint32), n_particles (uint32),
    n_modes (uint32), dimension (uint64), nnz (uint64; 0 for states),
    grid descriptor as above (n_q, n_p, flags, padding, bounds)

followed by float64 (re, im) pairs per amplitude for states, or nnz records
of (row uint64, col uint64, re float64, im float64) for operators.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import FockBasis, FockOperator, FockState
from .phase_space import DensityField, PhaseGrid

__all__ = [
    "write_field",
    "read_field",
    "write_fock_state",
    "read_fock_state",
    "write_fock_operator",
    "read_fock_operator",
    "write_points_csv",
    "read_points_csv",
    "write_trajectory_csv",
    "write_marginal_csv",
    "write_table_csv",
    "sha256_of",
    "atomic_write_bytes",
    "atomic_write_text",
    "RunManifest",
]

_FIELD_MAGIC = b"KVNF"
_STATE_MAGIC = b"KVNQ"
_OP_MAGIC = b"KVNO"
_VERSION = 1

_GRID_STRUCT = struct.Struct("<IIBBxx4d")       # 44 bytes
_FIELD_HEADER = struct.Struct("<4sI" + "IIBBxx4d" + "d4x")  # 64 bytes
_FOCK_HEADER = struct.Struct("<4sIIIQQ" + "IIBBxx4d")       # 76 bytes


def _grid_tuple(grid: PhaseGrid):
    return (grid.n_q, grid.n_p, int(grid.periodic_q), int(grid.periodic_p),
            grid.q_min, grid.q_max, grid.p_min, grid.p_max)


def _grid_from_tuple(t) -> PhaseGrid:
    n_q, n_p, per_q, per_p, q_min, q_max, p_min, p_max = t
    return PhaseGrid(q_min, q_max, p_min, p_max, int(n_q), int(n_p),
                     bool(per_q), bool(per_p))


def write_field(path, density: DensityField) -> None:
    grid = density.grid
    t = np.nan if density.time is None else float(density.time)
    header = _FIELD_HEADER.pack(_FIELD_MAGIC, _VERSION, *_grid_tuple(grid), t)
    payload = np.ascontiguousarray(density.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + payload)


def read_field(path) -> DensityField:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, *rest = _FIELD_HEADER.unpack_from(raw, 0)
    if magic != _FIELD_MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} density-field file")
    grid = _grid_from_tuple(rest[:8])
    t = rest[8]
    values = np.frombuffer(raw, dtype="<f8", offset=_FIELD_HEADER.size)
    values = values.reshape(grid.n_q, grid.n_p).astype(float)
    return DensityField(grid, values, time=None if np.isnan(t) else float(t))


def write_fock_state(path, state: FockState, grid: PhaseGrid) -> None:
    basis = state.basis
    header = _FOCK_HEADER.pack(_STATE_MAGIC, _VERSION, basis.n_particles,
                               basis.n_modes, basis.dimension, 0, *_grid_tuple(grid))
    pairs = np.empty((basis.dimension, 2), dtype="<f8")
    pairs[:, 0] = state.amplitudes.real
    pairs[:, 1] = state.amplitudes.imag
    atomic_write_bytes(path, header + pairs.tobytes())


def read_fock_state(path) -> tuple[FockState, PhaseGrid]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n_particles, n_modes, dim, _, *g = _FOCK_HEADER.unpack_from(raw, 0)
    if magic != _STATE_MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} state file")
    grid = _grid_from_tuple(g)
    pairs = np.frombuffer(raw, dtype="<f8", offset=_FOCK_HEADER.size).reshape(dim, 2)
    basis = FockBasis(n_modes=n_modes, n_particles=n_particles)
    return FockState(basis, pairs[:, 0] + 1j * pairs[:, 1]), grid


def write_fock_operator(path, op: FockOperator, grid: PhaseGrid) -> None:
    basis = op.basis
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    header = _FOCK_HEADER.pack(_OP_MAGIC, _VERSION, basis.n_particles, basis.n_modes,
                               basis.dimension, coo.nnz, *_grid_tuple(grid))
    records = np.empty(coo.nnz, dtype=[("row", "<u8"), ("col", "<u8"),
                                       ("re", "<f8"), ("im", "<f8")])
    records["row"] = coo.row[order]
    records["col"] = coo.col[order]
    records["re"] = coo.data[order].real
    records["im"] = coo.data[order].imag
    atomic_write_bytes(path, header + records.tobytes())


def read_fock_operator(path) -> tuple[FockOperator, PhaseGrid]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n_particles, n_modes, dim, nnz, *g = _FOCK_HEADER.unpack_from(raw, 0)
    if magic != _OP_MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} operator file")
    grid = _grid_from_tuple(g)
    records = np.frombuffer(raw, dtype=[("row", "<u8"), ("col", "<u8"),
                                        ("re", "<f8"), ("im", "<f8")],
                            offset=_FOCK_HEADER.size, count=nnz)
    matrix = sp.coo_matrix(
        (records["re"] + 1j * records["im"],
         (records["row"].astype(np.int64), records["col"].astype(np.int64))),
        shape=(dim, dim),
    ).tocsr()
    basis = FockBasis(n_modes=n_modes, n_particles=n_particles)
    return FockOperator(basis, matrix), grid


# --------------------------------------------------------------------------
# CSV artifacts
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_points_csv(path, points: np.ndarray) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lines = ["q,p"]
    lines += [f"{_fmt(q)},{_fmt(p)}" for q, p in pts]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_points_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if [c.strip() for c in header] != ["q", "p"]:
            raise ValueError(f"{path}: expected columns q,p")
        rows = [line.split(",") for line in fh if line.strip()]
    return np.array([[float(a), float(b)] for a, b in rows])


def write_trajectory_csv(path, times: np.ndarray, trajectory: np.ndarray) -> None:
    """Trajectory rows (t, q, p), time-major; particle order is stable inside
    each time block."""
    lines = ["t,q,p"]
    for t, snap in zip(times, trajectory):
        for q, p in snap:
            lines.append(f"{_fmt(t)},{_fmt(q)},{_fmt(p)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_marginal_csv(path, density: DensityField) -> None:
    from .phase_space import spatial_density

    n = spatial_density(density)
    lines = ["q,n"]
    lines += [f"{_fmt(q)},{_fmt(v)}" for q, v in zip(density.grid.q_centers, n)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_table_csv(path, table) -> None:
    """Convergence table as CSV with the fitted order in a footer row."""
    lines = [f"{table.parameter},linf_error" if table.parameter == "strength"
             else f"{table.parameter},l1_distance"]
    lines += [f"{_fmt(x)},{_fmt(err)}" for x, err in table.rows]
    lines.append(f"fitted_order,{_fmt(table.fitted_order)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# checksums, atomic writes, manifests
# --------------------------------------------------------------------------

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class RunManifest:
    """What a run produced: config hash, versions, seeds, files + checksums."""

    config_sha256: str
    tool_version: str
    wall_time_s: float
    seeds: list[int] = field(default_factory=list)
    rng: str = "numpy PCG64"
    numpy_version: str = np.__version__
    files: list[dict] = field(default_factory=list)

    def add_file(self, run_dir, path) -> None:
        rel = os.path.relpath(path, run_dir)
        self.files.append({
            "path": rel,
            "sha256": sha256_of(path),
            "bytes": os.path.getsize(path),
        })

    def write(self, run_dir) -> None:
        payload = {
            "config_sha256": self.config_sha256,
            "tool_version": self.tool_version,
            "wall_time_s": self.wall_time_s,
            "seeds": self.seeds,
            "rng": self.rng,
            "numpy_version": self.numpy_version,
            "files": self.files,
        }
        atomic_write_text(os.path.join(run_dir, "manifest.json"),
                          json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(run_dir) -> "RunManifest":
        with open(os.path.join(run_dir, "manifest.json"), "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        m = RunManifest(
            config_sha256=payload["config_sha256"],
            tool_version=payload["tool_version"],
            wall_time_s=payload["wall_time_s"],
            seeds=list(payload.get("seeds", [])),
            rng=payload.get("rng", "unknown"),
            numpy_version=payload.get("numpy_version", "unknown"),
        )
        m.files = list(payload.get("files", []))
        return m
