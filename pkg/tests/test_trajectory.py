import math

import numpy as np
import pytest

from conftest import make_grid
from radiomotion.env import generate_environment
from radiomotion.trajectory import (VehicleState, footprint_cells,
                                    normalize_heading, probe_directions,
                                    seed_vehicles, simulate_trajectory,
                                    step_vehicle, wrap_angle,
                                    write_trajectory_csv)


def all_pairwise_distances(vehicles):
    out = []
    for a in range(len(vehicles)):
        for b in range(a + 1, len(vehicles)):
            va, vb = vehicles[a], vehicles[b]
            out.append(math.hypot(va.x - vb.x, va.y - vb.y))
    return out


class TestWrapAngle:
    def test_basic(self):
        assert wrap_angle(0.0) == 0.0
        assert abs(wrap_angle(3 * math.pi) - math.pi) < 1e-12
        assert abs(wrap_angle(-math.pi / 2) + math.pi / 2) < 1e-12

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi


class TestFootprint:
    def test_axis_aligned_cell_corner_position_covers_8_cells(self):
        v = VehicleState(x=10.0, y=10.0, heading=0.0)
        assert len(footprint_cells(v)) == 8

    def test_rotated_45_cell_count_in_range(self):
        v = VehicleState(x=10.0, y=10.0, heading=math.pi / 4)
        assert 6 <= len(footprint_cells(v)) <= 12

    def test_matches_point_in_rectangle_enumeration(self):
        # independent oracle: rotate cell centers into the vehicle frame
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = VehicleState(x=float(rng.uniform(5, 15)),
                             y=float(rng.uniform(5, 15)),
                             heading=float(rng.uniform(0, 2 * math.pi)))
            expected = set()
            for i in range(0, 22):
                for j in range(0, 22):
                    cx, cy = i + 0.5 - v.x, j + 0.5 - v.y
                    r = math.hypot(cx, cy)
                    phi = math.atan2(cy, cx) - v.heading
                    u, w = r * math.cos(phi), r * math.sin(phi)
                    if abs(u) < v.length / 2 and abs(w) < v.width / 2:
                        expected.add((i, j))
            assert footprint_cells(v) == expected


class TestSeeding:
    def test_two_vehicles_spaced_four_lengths(self, corridor_grid):
        res = seed_vehicles(corridor_grid, 2, rng_seed=1)
        assert len(res.vehicles) == 2
        assert all(d >= 16.0 for d in all_pairwise_distances(res.vehicles))

    def test_zero_vehicles(self, corridor_grid):
        res = seed_vehicles(corridor_grid, 0, rng_seed=1)
        assert res.vehicles == ()
        assert res.warning is None

    def test_overfull_request_flags_warning_and_keeps_spacing(self):
        road = np.zeros((24, 24), bool)
        road[4:7, :] = True
        road[18:21, :] = True
        road[:, 4:7] = True
        road[:, 18:21] = True
        env = make_grid(road=road)
        res = seed_vehicles(env, 10_000, rng_seed=2)
        assert 0 < len(res.vehicles) < 10_000
        assert res.warning is not None
        assert all(d >= 16.0 for d in all_pairwise_distances(res.vehicles))

    def test_deterministic(self, corridor_grid):
        a = seed_vehicles(corridor_grid, 3, rng_seed=9)
        b = seed_vehicles(corridor_grid, 3, rng_seed=9)
        assert a == b

    def test_footprints_on_road(self, corridor_grid):
        res = seed_vehicles(corridor_grid, 3, rng_seed=4)
        for v in res.vehicles:
            assert all(corridor_grid.road_mask[c] for c in footprint_cells(v))

    def test_clockwise_flow_on_horizontal_streets(self):
        road = np.zeros((64, 64), bool)
        road[:, 8:11] = True    # upper horizontal street
        road[:, 52:55] = True   # lower horizontal street
        env = make_grid(road=road)
        res = seed_vehicles(env, 6, rng_seed=0)
        for v in res.vehicles:
            if v.y < 32:
                assert math.cos(v.heading) > 0.99   # eastbound on top
            else:
                assert math.cos(v.heading) < -0.99  # westbound at bottom


class TestProbeDirections:
    def test_straight_corridor(self, corridor_grid):
        v = VehicleState(x=20.0, y=31.5, heading=0.0)
        cands = probe_directions(corridor_grid, v, wide=False)
        assert 1 <= len(cands) <= 3
        headings = [h for h, _ in cands]
        assert any(abs(wrap_angle(h)) < 0.2 for h in headings)

    def test_dead_end_with_side_street(self):
        road = np.zeros((32, 32), bool)
        road[4:16, 15:18] = True   # corridor along x, ends at x=15
        road[13:16, 15:32] = True  # side street heading +y at the end
        env = make_grid(road=road)
        v = VehicleState(x=11.5, y=16.5, heading=0.0)
        # geometric ray-march oracle: nearest road cell around 6 m per probe
        lookahead = 1.5 * v.length
        expectations = {}
        for name, off in (("straight", 0.0), ("plus45", math.pi / 4),
                          ("minus45", -math.pi / 4)):
            found = None
            for delta in (0.0, -0.25, 0.25, -0.5, 0.5):
                d = lookahead + delta
                x = v.x + d * math.cos(v.heading + off)
                y = v.y + d * math.sin(v.heading + off)
                if not (0 < x <= 32 and 0 < y <= 32):
                    continue
                cell = (math.ceil(x) - 1, math.ceil(y) - 1)
                if env.road_mask[cell]:
                    found = cell
                    break
            expectations[name] = found
        assert expectations["straight"] is None
        assert expectations["plus45"] is not None

        cands = probe_directions(env, v, wide=False)
        cells = [c for _, c in cands]
        assert expectations["plus45"] in cells
        # straight probe lands off-road at x=17.5 -> no straight candidate
        assert all(not (abs(wrap_angle(h)) < 0.15) for h, _ in cands)

    def test_wide_adds_at_most_two(self, corridor_grid):
        v = VehicleState(x=20.0, y=31.5, heading=0.0)
        narrow = probe_directions(corridor_grid, v, wide=False)
        wide = probe_directions(corridor_grid, v, wide=True)
        assert len(narrow) <= len(wide) <= len(narrow) + 2
        assert wide[:len(narrow)] == narrow


class TestStepVehicle:
    def test_heading_interpolation_toward_perpendicular_target(self):
        # Cross intersection: straight is blocked, the only candidate sits
        # 90 degrees to the left, so the heading moves 0.4 * pi/2.
        road = np.zeros((32, 32), bool)
        road[4:16, 14:17] = True
        road[13:16, 14:30] = True
        env = make_grid(road=road)
        v = VehicleState(x=14.0, y=15.5, heading=0.0, stuck_counter=5)
        cands = probe_directions(env, v, wide=True)
        headings = [h for h, _ in cands]
        assert any(abs(wrap_angle(h - math.pi / 2)) < 0.1 for h in headings)
        stepped = step_vehicle(env, v, [])
        target = max(cands, key=lambda hc: math.cos(hc[0] - v.heading))[0]
        expected = normalize_heading(v.heading + 0.4 * wrap_angle(target - v.heading))
        assert abs(stepped.heading - expected) < 1e-12

    def test_open_straight_road_advances_one_meter(self, corridor_grid):
        v = VehicleState(x=20.5, y=31.5, heading=0.0)
        stepped = step_vehicle(corridor_grid, v, [])
        assert abs(stepped.heading - v.heading) < 1e-12
        assert abs(stepped.x - (v.x + 1.0)) < 1e-12
        assert abs(stepped.y - v.y) < 1e-12
        assert stepped.stuck_counter == 0

    def test_wide_probes_engage_after_three_stuck_frames(self, corridor_grid):
        v4 = VehicleState(x=20.0, y=31.5, heading=0.0, stuck_counter=4)
        v3 = VehicleState(x=20.0, y=31.5, heading=0.0, stuck_counter=3)
        # observable difference: candidate sets with/without wide probes
        assert probe_directions(corridor_grid, v4, wide=v4.stuck_counter > 3) \
            == probe_directions(corridor_grid, v4, wide=True)
        assert probe_directions(corridor_grid, v3, wide=v3.stuck_counter > 3) \
            == probe_directions(corridor_grid, v3, wide=False)

    def test_blocked_vehicle_stays_put(self, corridor_grid):
        v = VehicleState(x=20.5, y=31.5, heading=0.0)
        blocker = VehicleState(x=23.5, y=31.5, heading=0.0)
        stepped = step_vehicle(corridor_grid, v, [blocker])
        assert (stepped.x, stepped.y) == (v.x, v.y)
        assert stepped.stuck_counter == 1


class TestSimulateTrajectory:
    def test_single_frame_is_initial(self, corridor_grid):
        res = seed_vehicles(corridor_grid, 2, rng_seed=5)
        traj = simulate_trajectory(corridor_grid, res.vehicles, 1)
        assert traj.num_frames == 1
        assert traj.frames[0] == res.vehicles

    def test_zero_frames_rejected(self, corridor_grid):
        with pytest.raises(ValueError):
            simulate_trajectory(corridor_grid, (), 0)

    def test_determinism(self):
        env = generate_environment(11, size=64)
        a = simulate_trajectory(env, seed_vehicles(env, 6, 3).vehicles, 15)
        b = simulate_trajectory(env, seed_vehicles(env, 6, 3).vehicles, 15)
        assert a == b

    def test_invariants_over_random_seeds(self):
        # collision-free, on-road, bounded heading change, displacement in {0, speed}
        for seed in range(20):
            env = generate_environment(100 + seed, size=64)
            vehicles = seed_vehicles(env, 6, seed).vehicles
            traj = simulate_trajectory(env, vehicles, 15)
            for f_idx in range(traj.num_frames):
                frame = traj.frames[f_idx]
                prints = [footprint_cells(v) for v in frame]
                for a in range(len(frame)):
                    assert all(env.road_mask[c] for c in prints[a]), \
                        f"seed {seed} frame {f_idx}: off-road"
                    for b in range(a + 1, len(frame)):
                        assert not (prints[a] & prints[b]), \
                            f"seed {seed} frame {f_idx}: collision"
                if f_idx == 0:
                    continue
                for v_prev, v_now in zip(traj.frames[f_idx - 1], frame):
                    disp = math.hypot(v_now.x - v_prev.x, v_now.y - v_prev.y)
                    assert disp < 1e-9 or abs(disp - v_prev.speed) < 1e-9
                    delta = abs(wrap_angle(v_now.heading - v_prev.heading))
                    assert delta <= 0.4 * math.pi + 1e-9
                    if disp < 1e-9:
                        assert v_now.stuck_counter == v_prev.stuck_counter + 1
                    else:
                        assert v_now.stuck_counter == 0

    def test_heading_change_matches_selected_candidate(self):
        # oracle: recompute the probe selection and check the 0.4 factor
        env = generate_environment(42, size=64)
        vehicles = seed_vehicles(env, 6, 7).vehicles
        traj = simulate_trajectory(env, vehicles, 15)
        checked = 0
        for f_idx in range(1, traj.num_frames):
            for v_prev, v_now in zip(traj.frames[f_idx - 1], traj.frames[f_idx]):
                cands = probe_directions(env, v_prev,
                                         wide=v_prev.stuck_counter > 3)
                delta = abs(wrap_angle(v_now.heading - v_prev.heading))
                if not cands:
                    assert delta < 1e-12
                    continue
                target = max(cands, key=lambda hc: math.cos(hc[0] - v_prev.heading))[0]
                expected = abs(0.4 * wrap_angle(target - v_prev.heading))
                assert delta < 1e-9 or abs(delta - expected) < 1e-9
                checked += 1
        assert checked > 50

    def test_displacement_bounded_by_speed(self, corridor_grid):
        v = seed_vehicles(corridor_grid, 1, rng_seed=8).vehicles
        traj = simulate_trajectory(corridor_grid, v, 15)
        x0, y0 = traj.frames[0][0].x, traj.frames[0][0].y
        xn, yn = traj.frames[-1][0].x, traj.frames[-1][0].y
        assert math.hypot(xn - x0, yn - y0) <= 15.0 + 1e-9

    def test_csv_export(self, tmp_path, corridor_grid):
        res = seed_vehicles(corridor_grid, 2, rng_seed=5)
        traj = simulate_trajectory(corridor_grid, res.vehicles, 3)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "frame_index,vehicle_index,x,y,heading"
        assert len(lines) == 1 + 3 * 2
