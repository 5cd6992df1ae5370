"""Vehicle seeding and rule-based motion on street grids.

Vehicles are oriented rectangles moving in continuous coordinates over the
cell grid of an :class:`~radiomotion.env.EnvironmentGrid`. Headings are
radians in ``[0, 2*pi)`` with 0 pointing along +x and ``pi/2`` along +y.
One frame represents 0.1 s, so the default speed of 1 m/frame is 36 km/h.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .env import EnvironmentGrid

TWO_PI = 2.0 * math.pi
# Fraction of the heading error applied per frame when steering.
HEADING_SMOOTHING = 0.4
# Probe geometry: look-ahead in vehicle lengths, and the extra probe angles.
LOOKAHEAD_LENGTHS = 1.5
PROBE_OFFSETS = (0.0, math.pi / 4, -math.pi / 4)
WIDE_OFFSETS = (math.pi / 2, -math.pi / 2)
# Wide probing engages after this many consecutive stationary frames.
STUCK_FRAMES_FOR_WIDE = 3
# Search window around the ideal look-ahead point, ordered nearest-first.
LOOKAHEAD_DELTAS = (0.0, -0.25, 0.25, -0.5, 0.5)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 1.0
    length: float = 4.0
    width: float = 2.0
    stuck_counter: int = 0


@dataclass(frozen=True)
class Trajectory:
    """Per-frame vehicle states; every frame holds the same vehicle count."""
    frames: tuple
    frame_interval: float = 0.1
    traj_id: int = 0

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SeedingResult:
    vehicles: tuple
    requested: int
    warning: str | None = None


def wrap_angle(delta: float) -> float:
    """Wrap an angle difference into (-pi, pi]."""
    wrapped = (delta + math.pi) % TWO_PI - math.pi
    return math.pi if wrapped == -math.pi else wrapped


def normalize_heading(theta: float) -> float:
    return theta % TWO_PI


def footprint_cells(v: VehicleState) -> set[tuple[int, int]]:
    """Cells whose center lies strictly inside the oriented rectangle."""
    cos_h, sin_h = math.cos(v.heading), math.sin(v.heading)
    half_l, half_w = v.length / 2.0, v.width / 2.0
    reach = math.hypot(half_l, half_w)
    cells = set()
    for i in range(math.floor(v.x - reach), math.ceil(v.x + reach) + 1):
        for j in range(math.floor(v.y - reach), math.ceil(v.y + reach) + 1):
            dx, dy = i + 0.5 - v.x, j + 0.5 - v.y
            u = cos_h * dx + sin_h * dy
            w = -sin_h * dx + cos_h * dy
            if abs(u) < half_l and abs(w) < half_w:
                cells.add((i, j))
    return cells


def _footprint_on_road(env: EnvironmentGrid, cells: set[tuple[int, int]]) -> bool:
    for i, j in cells:
        if not (0 <= i < env.size and 0 <= j < env.size):
            return False
        if not env.road_mask[i, j]:
            return False
    return True


def _cell_of(env: EnvironmentGrid, x: float, y: float) -> tuple[int, int] | None:
    """Cell containing a point under the (i, i+1] convention, or None."""
    if not (0.0 < x <= env.size and 0.0 < y <= env.size):
        return None
    return math.ceil(x) - 1, math.ceil(y) - 1


def _road_run_lengths(env: EnvironmentGrid, i: int, j: int) -> tuple[int, int]:
    """Contiguous road run through (i, j) along x and along y."""
    road = env.road_mask
    run_x = 1
    k = i - 1
    while k >= 0 and road[k, j]:
        run_x += 1
        k -= 1
    k = i + 1
    while k < env.size and road[k, j]:
        run_x += 1
        k += 1
    run_y = 1
    k = j - 1
    while k >= 0 and road[i, k]:
        run_y += 1
        k -= 1
    k = j + 1
    while k < env.size and road[i, k]:
        run_y += 1
        k += 1
    return run_x, run_y


def clockwise_heading(env: EnvironmentGrid, i: int, j: int) -> float:
    """Initial heading consistent with clockwise circulation around the map.

    Horizontal streets flow +x in the upper half (small y) and -x in the
    lower half; vertical streets flow +y on the right half and -y on the
    left, which closes a clockwise loop on any ring of streets.
    """
    run_x, run_y = _road_run_lengths(env, i, j)
    half = env.size / 2.0
    if run_x >= run_y:
        return 0.0 if (j + 0.5) < half else math.pi
    return math.pi / 2 if (i + 0.5) >= half else 3 * math.pi / 2


def seed_vehicles(env: EnvironmentGrid, count: int, rng_seed: int,
                  speed: float = 1.0, length: float = 4.0,
                  width: float = 2.0) -> SeedingResult:
    """Place vehicles on road cells with clockwise headings.

    Pairwise center spacing is at least four vehicle lengths. When the map
    cannot fit ``count`` vehicles the result carries a warning and as many
    vehicles as fit.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    road = sorted(zip(*np.nonzero(env.road_mask)))
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(road))
    min_spacing = 4.0 * length
    placed: list[VehicleState] = []
    for idx in order:
        if len(placed) >= count:
            break
        i, j = int(road[idx][0]), int(road[idx][1])
        x, y = i + 0.5, j + 0.5
        if any(math.hypot(x - p.x, y - p.y) < min_spacing for p in placed):
            continue
        v = VehicleState(x=x, y=y, heading=clockwise_heading(env, i, j),
                         speed=speed, length=length, width=width)
        if not _footprint_on_road(env, footprint_cells(v)):
            continue
        placed.append(v)
    warning = None
    if len(placed) < count:
        warning = f"requested {count} vehicles, only {len(placed)} fit with {min_spacing:.0f} m spacing"
    return SeedingResult(vehicles=tuple(placed), requested=count, warning=warning)


def probe_directions(env: EnvironmentGrid, v: VehicleState,
                     wide: bool = False) -> list[tuple[float, tuple[int, int]]]:
    """Candidate (heading, target_cell) pairs from the navigation probes.

    Probes straight ahead and +/-45 degrees (plus +/-90 when ``wide``),
    looking for the nearest road cell around 1.5 vehicle lengths along each
    probe ray; blocked directions are omitted. The candidate heading points
    from the vehicle to the target cell center.
    """
    offsets = PROBE_OFFSETS + (WIDE_OFFSETS if wide else ())
    lookahead = LOOKAHEAD_LENGTHS * v.length
    candidates = []
    for off in offsets:
        theta = v.heading + off
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        for delta in LOOKAHEAD_DELTAS:
            d = lookahead + delta
            cell = _cell_of(env, v.x + d * cos_t, v.y + d * sin_t)
            if cell is None or not env.road_mask[cell]:
                continue
            ci, cj = cell
            heading = normalize_heading(
                math.atan2(cj + 0.5 - v.y, ci + 0.5 - v.x))
            candidates.append((heading, cell))
            break
    return candidates


def _select_candidate(candidates, heading: float):
    """Most aligned candidate by cosine similarity; probe order breaks ties."""
    best = None
    best_cos = -math.inf
    for cand_heading, cell in candidates:
        c = math.cos(cand_heading - heading)
        if c > best_cos:
            best_cos = c
            best = (cand_heading, cell)
    return best


def step_vehicle(env: EnvironmentGrid, v: VehicleState,
                 others: list[VehicleState]) -> VehicleState:
    """Advance one vehicle a single frame.

    Steering interpolates 0.4 of the wrapped heading error toward the
    selected probe target. The move is vetoed when the new footprint would
    leave the road or hit another vehicle; a vetoed vehicle stays put (it
    may still rotate in place when the turned footprint remains valid) and
    its stuck counter grows, engaging the wide probes after three frames.
    """
    wide = v.stuck_counter > STUCK_FRAMES_FOR_WIDE
    candidates = probe_directions(env, v, wide=wide)
    if not candidates:
        return replace(v, stuck_counter=v.stuck_counter + 1)

    target_heading, _ = _select_candidate(candidates, v.heading)
    delta = wrap_angle(target_heading - v.heading)
    new_heading = normalize_heading(v.heading + HEADING_SMOOTHING * delta)

    other_cells = set()
    for o in others:
        other_cells |= footprint_cells(o)

    moved = replace(v, x=v.x + v.speed * math.cos(new_heading),
                    y=v.y + v.speed * math.sin(new_heading),
                    heading=new_heading, stuck_counter=0)
    cells = footprint_cells(moved)
    if _footprint_on_road(env, cells) and not (cells & other_cells):
        return moved

    turned = replace(v, heading=new_heading, stuck_counter=v.stuck_counter + 1)
    cells = footprint_cells(turned)
    if _footprint_on_road(env, cells) and not (cells & other_cells):
        return turned

    return replace(v, stuck_counter=v.stuck_counter + 1)


def simulate_trajectory(env: EnvironmentGrid, initial, num_frames: int,
                        traj_id: int = 0,
                        frame_interval: float = 0.1) -> Trajectory:
    """Roll the per-frame rules forward from ``initial`` for ``num_frames``.

    Frame 0 is the initial state. Vehicles update in ascending index order;
    collision checks against earlier-indexed vehicles use their already
    updated positions, which makes the simulation deterministic.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    frames = [tuple(initial)]
    for _ in range(num_frames - 1):
        states = list(frames[-1])
        for idx in range(len(states)):
            others = states[:idx] + states[idx + 1:]
            states[idx] = step_vehicle(env, states[idx], others)
        frames.append(tuple(states))
    return Trajectory(frames=tuple(frames), frame_interval=frame_interval,
                      traj_id=traj_id)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per vehicle per frame: frame_index, vehicle_index, x, y, heading."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "vehicle_index", "x", "y", "heading"])
        for f_idx, frame in enumerate(traj.frames):
            for v_idx, v in enumerate(frame):
                writer.writerow([f_idx, v_idx, repr(v.x), repr(v.y), repr(v.heading)])
