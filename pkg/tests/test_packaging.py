import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from radiomotion.packaging import (CLIP_MAX_DB, CLIP_MIN_DB, SequencePair,
                                   SequenceRecord, export_sequence,
                                   load_sequence, make_pairs, normalize_db,
                                   quantize_8bit, rasterize_points, read_index,
                                   read_rmm, split_dataset, write_index,
                                   write_rmm)
from radiomotion.solver import RadioMap, SceneRef


def map_of(values):
    return RadioMap(values_db=np.asarray(values, dtype=np.float64),
                    scene_ref=SceneRef())


def record_of(seed=0, n=16, env_id=0, traj_id=0, tx_id=0):
    rng = np.random.default_rng(seed)
    frames = tuple(map_of(rng.uniform(-140.0, -30.0, (n, n)))
                   for _ in range(15))
    return SequenceRecord(env_id=env_id, traj_id=traj_id, tx_id=tx_id,
                          frames=frames)


class TestRasterizePoints:
    def test_paper_index_mapping(self):
        grid = rasterize_points([(1.0, 1.0, 5.0)], 256)
        assert grid[0, 0] == 5.0
        grid = rasterize_points([(256.0, 256.0, 7.0)], 256)
        assert grid[255, 255] == 7.0

    def test_fractional_coordinate(self):
        grid = rasterize_points([(1.5, 2.0, 3.0)], 4)
        assert grid[1, 1] == 3.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            rasterize_points([(0.0, 1.0, 1.0)], 4)
        with pytest.raises(ValueError):
            rasterize_points([(1.0, 4.5, 1.0)], 4)

    def test_last_write_wins(self):
        grid = rasterize_points([(1.2, 1.2, 1.0), (1.8, 1.8, 2.0)], 4)
        assert grid[1, 1] == 2.0

    def test_zero_initialized(self):
        assert rasterize_points([], 3).sum() == 0.0


class TestNormalizeDb:
    def test_endpoints_exact(self):
        assert normalize_db(-135.0) == 0.0
        assert normalize_db(-39.5) == 1.0

    def test_midpoint(self):
        assert normalize_db(-87.25) == pytest.approx(0.5, abs=1e-12)

    def test_clipping(self):
        assert normalize_db(-200.0) == 0.0
        assert normalize_db(0.0) == 1.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            normalize_db(float("nan"))
        with pytest.raises(ValueError):
            normalize_db(np.array([1.0, np.nan]))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=-300, max_value=100),
           st.floats(min_value=-300, max_value=100))
    def test_monotone_and_idempotent(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert normalize_db(lo) <= normalize_db(hi)
        # idempotent after clipping: re-normalizing the clipped dB value
        clipped = np.clip(a, CLIP_MIN_DB, CLIP_MAX_DB)
        assert normalize_db(clipped) == normalize_db(a)


class TestQuantize:
    def test_endpoints(self):
        assert quantize_8bit(0.0) == 0
        assert quantize_8bit(1.0) == 255

    def test_midpoint_floors(self):
        assert quantize_8bit(0.5) == 127

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            quantize_8bit(-0.01)
        with pytest.raises(ValueError):
            quantize_8bit(1.01)

    def test_full_range_covered(self):
        norm = normalize_db(np.linspace(-135.0, -39.5, 4096))
        quant = quantize_8bit(norm)
        assert quant.min() == 0 and quant.max() == 255
        assert set(np.unique(quant)) == set(range(256))
        assert (np.diff(quant.astype(int)) >= 0).all()


class TestRmmFormat:
    def test_round_trip(self, tmp_path):
        grid = np.random.default_rng(0).random((9, 9)).astype(np.float32)
        path = tmp_path / "grid.rmm"
        write_rmm(path, grid)
        assert np.array_equal(read_rmm(path), grid)
        raw = path.read_bytes()
        assert raw[:4] == b"RMM1"
        assert len(raw) == 4 + 8 + 9 * 9 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rmm"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_rmm(path)


class TestExportSequence:
    def test_writes_30_files(self, tmp_path):
        written = export_sequence(record_of(), tmp_path)
        assert len(written) == 30
        assert len(list((tmp_path / "raw").rglob("*.rmm"))) == 15
        assert len(list((tmp_path / "png").rglob("*.png"))) == 15

    def test_reexport_byte_identical(self, tmp_path):
        record = record_of(seed=3)
        first = export_sequence(record, tmp_path)
        snapshots = {p: p.read_bytes() for p in first}
        second = export_sequence(record, tmp_path, force=True)
        assert first == second
        for p in second:
            assert p.read_bytes() == snapshots[p]

    def test_refuses_overwrite(self, tmp_path):
        record = record_of()
        export_sequence(record, tmp_path)
        with pytest.raises(FileExistsError):
            export_sequence(record, tmp_path)

    def test_png_equals_quantized_normalized_raw(self, tmp_path):
        record = record_of(seed=11)
        export_sequence(record, tmp_path)
        for f_idx in range(15):
            raw = read_rmm(tmp_path / "raw/env_000/traj_00/tx_00" /
                           f"frame_{f_idx:02d}.rmm")
            with Image.open(tmp_path / "png/env_000/traj_00/tx_00" /
                            f"frame_{f_idx:02d}.png") as im:
                png = np.asarray(im)
            assert np.array_equal(png, quantize_8bit(normalize_db(raw)))

    def test_load_sequence_round_trip(self, tmp_path):
        record = record_of(seed=4)
        export_sequence(record, tmp_path)
        stack = load_sequence(tmp_path, 0, 0, 0)
        assert stack.shape == (15, 16, 16)
        for f_idx in range(15):
            assert np.array_equal(
                stack[f_idx], record.frames[f_idx].values_db.astype(np.float32))

    def test_naming_convention(self, tmp_path):
        export_sequence(record_of(env_id=7, traj_id=3, tx_id=12), tmp_path)
        assert (tmp_path / "raw/env_007/traj_03/tx_12/frame_14.rmm").exists()
        assert (tmp_path / "png/env_007/traj_03/tx_12/frame_00.png").exists()


class TestSequenceRecordInvariants:
    def test_wrong_frame_count_rejected(self):
        with pytest.raises(ValueError):
            SequenceRecord(env_id=0, traj_id=0, tx_id=0,
                           frames=tuple(map_of(np.zeros((4, 4)))
                                        for _ in range(14)))

    def test_bad_split_tag_rejected(self):
        frames = tuple(map_of(np.zeros((4, 4))) for _ in range(15))
        with pytest.raises(ValueError):
            SequenceRecord(env_id=0, traj_id=0, tx_id=0, frames=frames,
                           split_tag="validation")


class TestSplitDataset:
    def paper_index(self):
        return [(e, t, x) for e in range(300) for t in range(5)
                for x in range(20)]

    def test_paper_configuration_counts(self):
        assignment = split_dataset(self.paper_index(), 300, 5, 50 / 300)
        counts = {}
        for tag in assignment.values():
            counts[tag] = counts.get(tag, 0) + 1
        assert counts == {"train": 15_000, "val": 5_000,
                          "test1": 5_000, "test2": 5_000}

    def test_partition_and_env_disjointness(self):
        assignment = split_dataset(self.paper_index(), 300, 5, 50 / 300)
        assert len(assignment) == 30_000
        test2_envs = {e for (e, t, x), tag in assignment.items()
                      if tag == "test2"}
        other_envs = {e for (e, t, x), tag in assignment.items()
                      if tag != "test2"}
        assert test2_envs == set(range(250, 300))
        assert not (test2_envs & other_envs)

    def test_trajectory_roles(self):
        assignment = split_dataset(self.paper_index(), 300, 5, 50 / 300)
        for (e, t, x), tag in assignment.items():
            if e >= 250:
                assert tag == "test2"
            elif t <= 2:
                assert tag == "train"
            elif t == 3:
                assert tag == "val"
            else:
                assert tag == "test1"

    def test_too_few_trajectories_rejected(self):
        index = [(e, t, x) for e in range(4) for t in range(2) for x in range(2)]
        with pytest.raises(ValueError):
            split_dataset(index, 4, 2, 0.25)

    def test_incomplete_index_rejected(self):
        index = self.paper_index()[:-1]
        with pytest.raises(ValueError):
            split_dataset(index, 300, 5, 50 / 300)

    def test_desk_configuration(self):
        index = [(e, t, x) for e in range(20) for t in range(5) for x in range(3)]
        assignment = split_dataset(index, 20, 5, 1 / 6)
        counts = {}
        for tag in assignment.values():
            counts[tag] = counts.get(tag, 0) + 1
        assert counts == {"train": 144, "val": 48, "test1": 48, "test2": 60}


class TestMakePairs:
    def test_default_alignment(self):
        record = record_of(seed=1)
        pair = make_pairs(record, 10, 5)
        assert pair.context.shape == (10, 16, 16)
        assert pair.target.shape == (5, 16, 16)
        assert pair.context_start == 0
        assert np.array_equal(pair.context[0],
                              normalize_db(record.frames[0].values_db))
        assert np.array_equal(pair.target[0],
                              normalize_db(record.frames[10].values_db))

    def test_short_context_same_targets(self):
        record = record_of(seed=2)
        long_pair = make_pairs(record, 10, 5)
        short_pair = make_pairs(record, 4, 5)
        assert short_pair.context_start == 6
        assert np.array_equal(short_pair.context[0],
                              normalize_db(record.frames[6].values_db))
        assert np.array_equal(short_pair.target, long_pair.target)

    def test_overflow_rejected(self):
        with pytest.raises(ValueError):
            make_pairs(record_of(), 11, 5)

    def test_values_in_unit_interval(self):
        pair = make_pairs(record_of(seed=8), 10, 5)
        for arr in (pair.context, pair.target):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_pair_invariant_enforced(self):
        with pytest.raises(ValueError):
            SequencePair(context=np.array([[2.0]]), target=np.array([[0.5]]),
                         record_key=(0, 0, 0), context_start=0)


class TestIndexCsv:
    def test_round_trip(self, tmp_path):
        index = [(e, t, x) for e in range(4) for t in range(3) for x in range(2)]
        assignment = split_dataset(index, 4, 3, 0.25)
        path = tmp_path / "index.csv"
        write_index(path, assignment)
        assert read_index(path) == assignment
        header = path.read_text().splitlines()[0]
        assert header == "env_id,traj_id,tx_id,split_tag"
