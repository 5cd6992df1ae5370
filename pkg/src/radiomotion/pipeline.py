"""End-to-end orchestration: configuration, dataset generation, loading.

Everything downstream of a :class:`PipelineConfig` is reproducible from the
config and its seed: per-stage RNG streams are derived through
``np.random.SeedSequence`` keyed on (seed, stage, env, traj).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import packaging
from .env import EnvironmentGrid, GenerationError, generate_environment
from .packaging import (SequenceRecord, export_sequence, read_index,
                        split_dataset, write_index)
from .solver import (RadioMap, SceneRef, SceneSnapshot, compute_radio_map,
                     rasterize_vehicles)
from .trajectory import seed_vehicles, simulate_trajectory

_STAGE_ENV = 1
_STAGE_TX = 2
_STAGE_VEHICLES = 3


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message identifies the offending scene."""


@dataclass
class PipelineConfig:
    """Desk-scale defaults for the whole pipeline; every knob in one place."""

    # dataset dimensions
    grid_size: int = 64
    n_envs: int = 20
    n_trajs: int = 5
    n_tx: int = 3
    frames_per_sequence: int = 15
    held_out_env_fraction: float = 1.0 / 6.0
    # environment generation
    block_size_range: tuple = (8, 14)
    street_width_range: tuple = (3, 4)
    # vehicles
    vehicle_count: int = 8
    vehicle_speed: float = 1.0
    vehicle_length: float = 4.0
    vehicle_width: float = 2.0
    # solver
    tx_power_dbm: float = 23.0
    frequency_hz: float = 3.5e9
    corner_penalty_db: float = 12.0
    clip_min_db: float = -135.0
    clip_max_db: float = -39.5
    tx_height_m: float = 1.5
    rx_height_m: float = 1.5
    # forecasting protocol
    context_len: int = 10
    horizon: int = 5
    hidden1: int = 16
    hidden2: int = 32
    kernel_size: int = 3
    # training
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 40
    patience: int = 30
    weight_decay: float = 0.0
    # baseline (next-frame) training
    baseline_channels: int = 16
    baseline_batch_size: int = 16
    baseline_max_epochs: int = 30
    # ablation
    ablation_context_lengths: tuple = (2, 4, 6, 8, 10)
    ablation_max_epochs: int | None = None
    # bookkeeping
    seed: int = 0
    output_root: str = "out"

    def __post_init__(self):
        positive = ("grid_size", "n_envs", "n_trajs", "n_tx",
                    "frames_per_sequence", "vehicle_count", "context_len",
                    "horizon", "learning_rate", "batch_size", "max_epochs",
                    "patience")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.context_len + self.horizon > self.frames_per_sequence:
            raise ValueError("context_len + horizon exceeds frames_per_sequence")
        if self.clip_min_db >= self.clip_max_db:
            raise ValueError("clip_min_db must be below clip_max_db")
        if not 0.0 < self.held_out_env_fraction < 1.0:
            raise ValueError("held_out_env_fraction must be in (0, 1)")

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "PipelineConfig":
        """Build a config from (possibly nested) YAML content; unknown keys
        are rejected to catch typos."""
        flat: dict = {}

        def flatten(d):
            for key, value in d.items():
                if isinstance(value, dict):
                    flatten(value)
                else:
                    if key in flat:
                        raise ValueError(f"duplicate config key {key!r}")
                    flat[key] = value

        flatten(mapping or {})
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name in ("block_size_range", "street_width_range",
                     "ablation_context_lengths"):
            if name in flat:
                flat[name] = tuple(flat[name])
        return cls(**flat)

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    def as_dict(self) -> dict:
        out = asdict(self)
        for name in ("block_size_range", "street_width_range",
                     "ablation_context_lengths"):
            out[name] = list(out[name])
        return out


def derive_seed(base_seed: int, stage: int, *key: int) -> int:
    ss = np.random.SeedSequence((int(base_seed), int(stage)) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def worker_count() -> int:
    env_value = os.environ.get("RADIOMOTION_THREADS", "").strip()
    if env_value:
        return max(1, int(env_value))
    return max(1, os.cpu_count() or 1)


def choose_tx_cells(env: EnvironmentGrid, n_tx: int, rng_seed: int) -> list:
    """Fixed transmitter cells per environment, sampled from open ground so
    moving vehicles can never occupy them."""
    candidates = sorted(zip(*np.nonzero(~env.building_mask & ~env.road_mask)))
    if len(candidates) < n_tx:
        raise GenerationError(
            f"env {env.env_id}: only {len(candidates)} ground cells for {n_tx} transmitters")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(candidates), size=n_tx, replace=False)
    return [(int(candidates[p][0]), int(candidates[p][1])) for p in picks]


def generate_dataset(cfg: PipelineConfig, force: bool = False,
                     log=None) -> dict:
    """Generate the full dataset tree plus index and manifest.

    Scenes within a trajectory are solved by a bounded worker pool
    (RADIOMOTION_THREADS); outputs do not depend on the pool size.
    """
    out = Path(cfg.output_root)
    index_path = out / "index.csv"
    if index_path.exists() and not force:
        raise PipelineError(f"{index_path} exists; use force to regenerate")
    out.mkdir(parents=True, exist_ok=True)

    keys = [(e, t, x) for e in range(cfg.n_envs) for t in range(cfg.n_trajs)
            for x in range(cfg.n_tx)]
    assignment = split_dataset(keys, cfg.n_envs, cfg.n_trajs,
                               cfg.held_out_env_fraction)
    threads = worker_count()

    for env_id in range(cfg.n_envs):
        try:
            env = generate_environment(
                derive_seed(cfg.seed, _STAGE_ENV, env_id), size=cfg.grid_size,
                block_size_range=cfg.block_size_range,
                street_width_range=cfg.street_width_range, env_id=env_id)
            tx_cells = choose_tx_cells(env, cfg.n_tx,
                                       derive_seed(cfg.seed, _STAGE_TX, env_id))
        except Exception as exc:
            raise PipelineError(f"env {env_id}: {exc}") from exc
        for traj_id in range(cfg.n_trajs):
            try:
                _generate_trajectory_maps(cfg, env, env_id, traj_id, tx_cells,
                                          assignment, out, force, threads)
            except Exception as exc:
                raise PipelineError(f"env {env_id} traj {traj_id}: {exc}") from exc
        if log:
            log(f"env {env_id + 1}/{cfg.n_envs} done")

    write_index(index_path, assignment)
    manifest = {"config": cfg.as_dict(), "format": "radiomotion-dataset-v1",
                "sequences": len(keys),
                "frames": len(keys) * cfg.frames_per_sequence}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    counts = {tag: sum(1 for t in assignment.values() if t == tag)
              for tag in packaging.SPLIT_TAGS}
    return {"sequences": len(keys), "splits": counts, "root": str(out)}


def _generate_trajectory_maps(cfg, env, env_id, traj_id, tx_cells, assignment,
                              out, force, threads):
    seeding = seed_vehicles(env, cfg.vehicle_count,
                            derive_seed(cfg.seed, _STAGE_VEHICLES, env_id, traj_id),
                            speed=cfg.vehicle_speed, length=cfg.vehicle_length,
                            width=cfg.vehicle_width)
    traj = simulate_trajectory(env, seeding.vehicles, cfg.frames_per_sequence,
                               traj_id=traj_id)
    frame_cells = [rasterize_vehicles(frame, env) for frame in traj.frames]
    scenes = {}
    for tx_id, tx in enumerate(tx_cells):
        for f_idx, cells in enumerate(frame_cells):
            scenes[(tx_id, f_idx)] = SceneSnapshot(
                env=env, vehicle_cells=cells, tx=tx,
                tx_power=cfg.tx_power_dbm, frequency=cfg.frequency_hz,
                tx_height=cfg.tx_height_m, rx_height=cfg.rx_height_m)

    def solve(item):
        (tx_id, f_idx), scene = item
        ref = SceneRef(env_id=env_id, traj_id=traj_id, tx_id=tx_id,
                       frame_index=f_idx)
        return (tx_id, f_idx), compute_radio_map(
            scene, scene_ref=ref, corner_penalty_db=cfg.corner_penalty_db,
            floor_dbm=cfg.clip_min_db)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            maps = dict(pool.map(solve, scenes.items()))
    else:
        maps = dict(map(solve, scenes.items()))

    for tx_id in range(len(tx_cells)):
        frames = tuple(maps[(tx_id, f_idx)]
                       for f_idx in range(cfg.frames_per_sequence))
        record = SequenceRecord(env_id=env_id, traj_id=traj_id, tx_id=tx_id,
                                frames=frames,
                                split_tag=assignment[(env_id, traj_id, tx_id)])
        export_sequence(record, out, force=force)


def load_split_sequences(root, tags=None) -> dict:
    """Load raw sequences grouped by split tag.

    Returns {tag: (keys, stack)} with ``stack`` of shape (M, F, N, N) in dB
    (float32), keys sorted for determinism.
    """
    root = Path(root)
    assignment = read_index(root / "index.csv")
    wanted = set(tags) if tags else set(packaging.SPLIT_TAGS)
    grouped: dict = {}
    for key in sorted(assignment):
        tag = assignment[key]
        if tag in wanted:
            grouped.setdefault(tag, []).append(key)
    out = {}
    for tag, keys in grouped.items():
        stacks = [packaging.load_sequence(root, *key) for key in keys]
        out[tag] = (keys, np.stack(stacks))
    return out


def normalized_split_sequences(root, cfg: PipelineConfig, tags=None) -> dict:
    """Same as :func:`load_split_sequences` but normalized to [0, 1]."""
    raw = load_split_sequences(root, tags)
    return {tag: (keys, packaging.normalize_db(
        stack, cfg.clip_min_db, cfg.clip_max_db).astype(np.float32))
        for tag, (keys, stack) in raw.items()}


def dataset_manifest(root) -> dict:
    with open(Path(root) / "manifest.json") as fh:
        return json.load(fh)
