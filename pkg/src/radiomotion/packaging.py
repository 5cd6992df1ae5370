"""Dataset formats, directory layout, splits, and training pairs.

A packaged dataset holds two parallel trees that are pixel-aligned:

    raw/env_XXX/traj_XX/tx_XX/frame_FF.rmm   float32 grids (RMM1 binary)
    png/env_XXX/traj_XX/tx_XX/frame_FF.png   8-bit grayscale

The RMM1 binary is little-endian: magic ``RMM1``, u32 rows, u32 cols, then
rows*cols float32 values row-major. An ``index.csv`` lists every sequence
with its split tag.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .solver import RadioMap, SceneRef

RMM_MAGIC = b"RMM1"
CLIP_MIN_DB = -135.0
CLIP_MAX_DB = -39.5
FRAMES_PER_SEQUENCE = 15
SPLIT_TAGS = ("train", "val", "test1", "test2")


@dataclass(frozen=True, eq=False)
class SequenceRecord:
    """One 15-frame radio-map sequence for a fixed (env, traj, tx)."""

    env_id: int
    traj_id: int
    tx_id: int
    frames: tuple
    split_tag: str | None = None

    def __post_init__(self):
        if len(self.frames) != FRAMES_PER_SEQUENCE:
            raise ValueError(f"sequence needs {FRAMES_PER_SEQUENCE} frames, "
                             f"got {len(self.frames)}")
        if self.split_tag is not None and self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {self.split_tag!r}")


@dataclass(frozen=True, eq=False)
class SequencePair:
    """A (context, target) pair of normalized frame stacks."""

    context: np.ndarray
    target: np.ndarray
    record_key: tuple[int, int, int]
    context_start: int

    def __post_init__(self):
        for name in ("context", "target"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} values outside [0, 1]")


def rasterize_points(points, size: int) -> np.ndarray:
    """Aggregate (x, y, value) samples onto a zero-initialized grid.

    Continuous coordinates in (0, size] map to indices by ceiling minus one,
    so x = 1.0 lands on row 0 and x = size on the last row. Later points
    overwrite earlier ones on index collisions.
    """
    grid = np.zeros((size, size), dtype=np.float64)
    for x, y, value in points:
        if not (0.0 < x <= size and 0.0 < y <= size):
            raise ValueError(f"coordinate ({x}, {y}) outside (0, {size}]")
        grid[math.ceil(x) - 1, math.ceil(y) - 1] = value
    return grid


def normalize_db(values, clip_min: float = CLIP_MIN_DB,
                 clip_max: float = CLIP_MAX_DB):
    """Clip dB values to [clip_min, clip_max] and map linearly onto [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("normalize_db: NaN input")
    out = (np.clip(arr, clip_min, clip_max) - clip_min) / (clip_max - clip_min)
    return float(out) if np.isscalar(values) else out


def quantize_8bit(norm):
    """Map [0, 1] to 0..255 by flooring; exactly 1.0 maps to 255."""
    arr = np.asarray(norm, dtype=np.float64)
    if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("quantize_8bit: input outside [0, 1]")
    out = np.minimum(np.floor(arr * 255.0), 255.0).astype(np.uint8)
    return int(out) if np.isscalar(norm) else out


def write_rmm(path, grid: np.ndarray) -> None:
    arr = np.ascontiguousarray(grid, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"RMM grids are 2D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(RMM_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_rmm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != RMM_MAGIC:
            raise ValueError(f"{path}: not an RMM1 file")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ValueError(f"{path}: payload size mismatch")
    return data.reshape(rows, cols).astype(np.float32)


def sequence_dir(env_id: int, traj_id: int, tx_id: int) -> str:
    return f"env_{env_id:03d}/traj_{traj_id:02d}/tx_{tx_id:02d}"


def export_sequence(record: SequenceRecord, root, force: bool = False) -> list:
    """Write one sequence to the raw/ and png/ trees; returns written paths.

    Refuses to overwrite existing frame files unless ``force``. Outputs are
    deterministic: re-exporting identical data yields identical bytes.
    """
    root = Path(root)
    rel = sequence_dir(record.env_id, record.traj_id, record.tx_id)
    raw_dir = root / "raw" / rel
    png_dir = root / "png" / rel
    raw_dir.mkdir(parents=True, exist_ok=True)
    png_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f_idx, frame in enumerate(record.frames):
        values = frame.values_db if isinstance(frame, RadioMap) else np.asarray(frame)
        raw_path = raw_dir / f"frame_{f_idx:02d}.rmm"
        png_path = png_dir / f"frame_{f_idx:02d}.png"
        for p in (raw_path, png_path):
            if p.exists() and not force:
                raise FileExistsError(f"{p} exists; pass force=True to overwrite")
        write_rmm(raw_path, values.astype(np.float32))
        quantized = quantize_8bit(normalize_db(values.astype(np.float32)))
        Image.fromarray(quantized, mode="L").save(png_path, format="PNG")
        written.extend([raw_path, png_path])
    return written


def load_sequence(root, env_id: int, traj_id: int, tx_id: int) -> np.ndarray:
    """Read one raw sequence back as a (15, N, N) float32 dB stack."""
    seq_dir = Path(root) / "raw" / sequence_dir(env_id, traj_id, tx_id)
    frames = [read_rmm(seq_dir / f"frame_{f:02d}.rmm")
              for f in range(FRAMES_PER_SEQUENCE)]
    return np.stack(frames)


def split_dataset(index, n_envs: int, n_trajs: int,
                  held_out_env_fraction: float) -> dict:
    """Assign every (env, traj, tx) key to a split.

    The last ``ceil(fraction * n_envs)`` environments go entirely to test2;
    in the remaining environments trajectories [0, n-2) train, trajectory
    n-2 validates and trajectory n-1 forms test1. Requires at least three
    trajectories per environment and a complete index.
    """
    if n_trajs < 3:
        raise ValueError(f"need at least 3 trajectories per environment, got {n_trajs}")
    keys = sorted({(int(e), int(t), int(x)) for (e, t, x) in index})
    if not keys:
        raise ValueError("empty index")
    tx_ids = sorted({x for (_, _, x) in keys})
    expected = {(e, t, x) for e in range(n_envs) for t in range(n_trajs)
                for x in tx_ids}
    if set(keys) != expected:
        raise ValueError("index is not a complete (env, traj, tx) product")
    n_held_out = math.ceil(held_out_env_fraction * n_envs)
    first_held_out = n_envs - n_held_out
    assignment = {}
    for key in keys:
        env_id, traj_id, _ = key
        if env_id >= first_held_out:
            assignment[key] = "test2"
        elif traj_id < n_trajs - 2:
            assignment[key] = "train"
        elif traj_id == n_trajs - 2:
            assignment[key] = "val"
        else:
            assignment[key] = "test1"
    return assignment


def make_pairs(record: SequenceRecord, context_len: int,
               horizon: int) -> SequencePair:
    """Build the aligned (context, target) pair from a sequence.

    The target is always the final ``horizon`` frames and the context the
    ``context_len`` frames immediately before it, so every context length
    predicts the same targets. Frames are normalized to [0, 1].
    """
    n = len(record.frames)
    if context_len < 1 or horizon < 0:
        raise ValueError("need context_len >= 1 and horizon >= 0")
    if context_len + horizon > n:
        raise ValueError(f"context {context_len} + horizon {horizon} exceeds "
                         f"{n} frames")
    start = n - context_len - horizon

    def norm(frame):
        values = frame.values_db if isinstance(frame, RadioMap) else np.asarray(frame)
        return normalize_db(values)

    context = np.stack([norm(f) for f in record.frames[start:start + context_len]])
    target = np.stack([norm(f) for f in record.frames[n - horizon:]]) if horizon \
        else np.zeros((0,) + context.shape[1:])
    return SequencePair(context=context, target=target,
                        record_key=(record.env_id, record.traj_id, record.tx_id),
                        context_start=start)


def write_index(path, assignment: dict) -> None:
    """index.csv: env_id, traj_id, tx_id, split_tag; sorted by key."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env_id", "traj_id", "tx_id", "split_tag"])
        for (env_id, traj_id, tx_id) in sorted(assignment):
            writer.writerow([env_id, traj_id, tx_id,
                             assignment[(env_id, traj_id, tx_id)]])


def read_index(path) -> dict:
    assignment = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["env_id"]), int(row["traj_id"]), int(row["tx_id"]))
            assignment[key] = row["split_tag"]
    return assignment
