"""On-disk formats: VRT1 trajectories, LTN1 latent tables, manifests.

VRT1 (little-endian):
    magic "VRT1" | u32 nx | u32 ny | u32 n_frames | f64 nu
    | f64 record_interval | f64 forcing_amplitude | u32 k_f | u64 seed
    | n_frames * nx * ny float32, frame-major, row-major within a frame.

LTN1 (little-endian):
    magic "LTN1" | u32 latent_dim | u64 n_entries
    | n_entries * (u32 trajectory_id, u32 frame_id, latent_dim float32).
    Duplicate (trajectory_id, frame_id) keys are invalid.

Manifest: plain text, one "trajectory_id<TAB>seed<TAB>path" line per
trajectory; paths are interpreted relative to the manifest's directory.

All writers go through a write-temp-then-rename step so partial files are
never observed at the final path.
"""

import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    DuplicateKeyError,
    FormatError,
    TruncatedFileError,
)
from .grid import Grid
from .solver import SolverConfig, Trajectory

VRT1_MAGIC = b"VRT1"
LTN1_MAGIC = b"LTN1"
_VRT1_HEADER = struct.Struct("<4sIIIdddIQ")
_LTN1_HEADER = struct.Struct("<4sIQ")


def atomic_write_bytes(path, payload: bytes):
    """Write payload to path via a temp file in the same directory."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_trajectory(trajectory: Trajectory, path):
    """Serialise a trajectory to VRT1."""
    cfg = trajectory.config
    header = _VRT1_HEADER.pack(
        VRT1_MAGIC, cfg.grid.nx, cfg.grid.ny, trajectory.n_frames,
        cfg.nu, cfg.record_interval, cfg.forcing_amplitude,
        cfg.k_f, cfg.seed)
    frames = np.ascontiguousarray(trajectory.frames, dtype="<f4")
    atomic_write_bytes(path, header + frames.tobytes())


def read_trajectory(path, trajectory_id: int = 0) -> Trajectory:
    """Parse a VRT1 file; header fields are validated before the payload."""
    raw = Path(path).read_bytes()
    if len(raw) < _VRT1_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than a VRT1 header")
    magic, nx, ny, n_frames, nu, record_interval, amplitude, k_f, seed = \
        _VRT1_HEADER.unpack_from(raw)
    if magic != VRT1_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if nx <= 0 or ny <= 0 or (nx & (nx - 1)) or (ny & (ny - 1)):
        raise DimensionMismatchError(f"{path}: invalid grid {nx}x{ny}")
    if n_frames < 1:
        raise DimensionMismatchError(f"{path}: n_frames={n_frames}")
    expected = _VRT1_HEADER.size + 4 * n_frames * nx * ny
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: header promises {n_frames} frames "
            f"({expected} bytes), file has {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
    frames = np.frombuffer(raw, dtype="<f4", offset=_VRT1_HEADER.size)
    frames = frames.reshape(n_frames, nx, ny).copy()
    # dt and spinup are not persisted; pick a dt that divides the interval
    n_sub = max(1, round(record_interval / 1e-3))
    config = SolverConfig(
        nu=nu, k_f=k_f, forcing_amplitude=amplitude,
        dt=record_interval / n_sub, record_interval=record_interval,
        spinup_time=0.0, seed=seed, grid=Grid(nx=nx, ny=ny))
    return Trajectory(frames=frames, config=config, trajectory_id=trajectory_id)


def write_latents(path, keys, vectors):
    """Serialise latent vectors to LTN1.

    keys: sequence of (trajectory_id, frame_id); vectors: (n, dim) array.
    """
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError("vectors must be a (n_entries, latent_dim) array")
    keys = [(int(t), int(f)) for t, f in keys]
    if len(keys) != vectors.shape[0]:
        raise ValueError("keys and vectors disagree in length")
    if len(set(keys)) != len(keys):
        raise DuplicateKeyError("duplicate (trajectory_id, frame_id) in keys")
    dim = vectors.shape[1]
    record = np.dtype([("tid", "<u4"), ("fid", "<u4"), ("vec", "<f4", (dim,))])
    table = np.empty(len(keys), dtype=record)
    if keys:
        table["tid"] = [k[0] for k in keys]
        table["fid"] = [k[1] for k in keys]
        table["vec"] = vectors
    header = _LTN1_HEADER.pack(LTN1_MAGIC, dim, len(keys))
    atomic_write_bytes(path, header + table.tobytes())


def read_latents(path):
    """Parse an LTN1 file into ({(tid, fid): vector}, latent_dim)."""
    raw = Path(path).read_bytes()
    if len(raw) < _LTN1_HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than an LTN1 header")
    magic, dim, n_entries = _LTN1_HEADER.unpack_from(raw)
    if magic != LTN1_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if dim < 1:
        raise DimensionMismatchError(f"{path}: latent_dim={dim}")
    record = np.dtype([("tid", "<u4"), ("fid", "<u4"), ("vec", "<f4", (dim,))])
    expected = _LTN1_HEADER.size + n_entries * record.itemsize
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: header promises {n_entries} entries "
            f"({expected} bytes), file has {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes")
    table = np.frombuffer(raw, dtype=record, offset=_LTN1_HEADER.size)
    out = {}
    for row in table:
        key = (int(row["tid"]), int(row["fid"]))
        if key in out:
            raise DuplicateKeyError(f"{path}: duplicate key {key}")
        out[key] = row["vec"].copy()
    return out, dim


def write_manifest(path, entries):
    """entries: sequence of (trajectory_id, seed, relative_or_abs_path)."""
    lines = [f"{int(tid)}\t{int(seed)}\t{p}" for tid, seed, p in entries]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path):
    """Parse a manifest into [(trajectory_id, seed, resolved_path)]."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        tid, seed, rel = parts
        entries.append((int(tid), int(seed), (path.parent / rel).resolve()))
    return entries
