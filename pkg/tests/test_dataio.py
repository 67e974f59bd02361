"""Dataset model, file formats, schedules, and the synthetic generator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frozencil import dataio
from frozencil.dataio import (
    EmbeddingDataset,
    EmbeddingRecord,
    SynthSpec,
    TaskSchedule,
    generate_synthetic,
    load_dataset,
    make_task_schedule,
    save_dataset,
    select_task,
    split_counts,
)
from frozencil.errors import ConfigurationError, FormatError, LabelError


def _tiny_dataset():
    recs = (
        EmbeddingRecord(0, np.array([1.0, 2.0], dtype=np.float32), 0, "train"),
        EmbeddingRecord(1, np.array([3.0, -4.0], dtype=np.float32), 1, "val"),
        EmbeddingRecord(2, np.array([0.5, 0.25], dtype=np.float32), 0, "test"),
    )
    return EmbeddingDataset(dim=2, class_names=("melanoma", "nevus"), records=recs)


class TestFormats:
    def test_single_record_round_trip(self, tmp_path):
        ds = EmbeddingDataset(
            dim=2,
            class_names=("only",),
            records=(EmbeddingRecord(0, np.array([1.0, 2.0], dtype=np.float32), 0, "train"),),
        )
        path = tmp_path / "one.embd"
        save_dataset(ds, path, "embd")
        loaded = load_dataset(path, "embd")
        assert len(loaded) == 1
        assert loaded.dim == 2
        rec = loaded.records[0]
        assert rec.sample_id == 0 and rec.label == 0 and rec.split == "train"
        np.testing.assert_array_equal(rec.embedding, [1.0, 2.0])

    def test_csv_equals_embd(self, tmp_path):
        ds = _tiny_dataset()
        save_dataset(ds, tmp_path / "d.embd", "embd")
        save_dataset(ds, tmp_path / "d.csv", "csv")
        a = load_dataset(tmp_path / "d.embd", "embd")
        b = load_dataset(tmp_path / "d.csv", "csv")
        assert a.class_names == b.class_names
        assert len(a) == len(b)
        for ra, rb in zip(a.records, b.records):
            assert (ra.sample_id, ra.label, ra.split) == (rb.sample_id, rb.label, rb.split)
            np.testing.assert_array_equal(ra.embedding, rb.embedding)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.embd"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_dataset(path, "embd")

    def test_three_record_round_trip(self, tmp_path):
        ds = _tiny_dataset()
        save_dataset(ds, tmp_path / "d.embd")
        loaded = load_dataset(tmp_path / "d.embd")
        for ra, rb in zip(ds.records, loaded.records):
            assert ra.sample_id == rb.sample_id
            assert ra.embedding.tobytes() == rb.embedding.tobytes()

    def test_empty_dataset_round_trip(self, tmp_path):
        ds = EmbeddingDataset(dim=3, class_names=("a", "b"), records=())
        save_dataset(ds, tmp_path / "empty.embd")
        loaded = load_dataset(tmp_path / "empty.embd")
        assert len(loaded) == 0
        assert loaded.class_names == ("a", "b")

    def test_csv_relative_error(self, tmp_path):
        rng = np.random.default_rng(3)
        recs = tuple(
            EmbeddingRecord(i, rng.normal(size=4).astype(np.float32), 0, "train")
            for i in range(10)
        )
        ds = EmbeddingDataset(dim=4, class_names=("x",), records=recs)
        save_dataset(ds, tmp_path / "d.csv", "csv")
        loaded = load_dataset(tmp_path / "d.csv", "csv")
        for ra, rb in zip(ds.records, loaded.records):
            np.testing.assert_allclose(rb.embedding, ra.embedding, rtol=1e-6)

    def test_label_out_of_range(self, tmp_path):
        ds = _tiny_dataset()
        path = tmp_path / "d.embd"
        save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        # corrupt the first record's label field (after magic+header+name table)
        offset = 4 + 20 + (2 + len("melanoma")) + (2 + len("nevus")) + 8
        raw[offset:offset + 4] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(LabelError):
            load_dataset(path)

    def test_truncated_file(self, tmp_path):
        ds = _tiny_dataset()
        path = tmp_path / "d.embd"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_missing_sidecar(self, tmp_path):
        ds = _tiny_dataset()
        save_dataset(ds, tmp_path / "d.csv", "csv")
        (tmp_path / "d.csv.classes.txt").unlink()
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "d.csv", "csv")

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_embd_round_trip_bit_exact(self, tmp_path_factory, data):
        d = data.draw(st.integers(1, 8))
        n_classes = data.draw(st.integers(1, 4))
        n = data.draw(st.integers(0, 12))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        recs = tuple(
            EmbeddingRecord(
                i,
                (rng.normal(size=d) * 10.0 ** rng.integers(-3, 4)).astype(np.float32),
                int(rng.integers(0, n_classes)),
                dataio.SPLITS[int(rng.integers(0, 3))],
            )
            for i in range(n)
        )
        ds = EmbeddingDataset(
            dim=d, class_names=tuple(f"c{i}" for i in range(n_classes)), records=recs
        )
        path = tmp_path_factory.mktemp("rt") / "d.embd"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.class_names == ds.class_names
        for ra, rb in zip(ds.records, loaded.records):
            assert ra.embedding.tobytes() == rb.embedding.tobytes()
            assert (ra.sample_id, ra.label, ra.split) == (rb.sample_id, rb.label, rb.split)


class TestEmbdByteLayout:
    def test_writer_matches_hand_built_bytes(self, tmp_path):
        # independent byte-for-byte construction of the declared layout
        import struct

        ds = EmbeddingDataset(
            dim=2,
            class_names=("mel", "nevus"),
            records=(
                EmbeddingRecord(7, np.array([1.5, -2.0], dtype=np.float32), 1, "val"),
                EmbeddingRecord(8, np.array([0.0, 3.25], dtype=np.float32), 0, "test"),
            ),
        )
        expected = b"EMBD"
        expected += struct.pack("<I", 1)  # version
        expected += struct.pack("<I", 2)  # dim
        expected += struct.pack("<I", 2)  # num_classes
        expected += struct.pack("<Q", 2)  # N
        for name in ("mel", "nevus"):
            expected += struct.pack("<H", len(name)) + name.encode()
        expected += struct.pack("<QIB", 7, 1, 1) + struct.pack("<2f", 1.5, -2.0)
        expected += struct.pack("<QIB", 8, 0, 2) + struct.pack("<2f", 0.0, 3.25)

        path = tmp_path / "d.embd"
        save_dataset(ds, path)
        assert path.read_bytes() == expected
        # and the hand-built bytes load back to the same dataset
        loaded = load_dataset(path)
        assert loaded.class_names == ("mel", "nevus")
        assert loaded.records[0].split == "val"


class TestSynthetic:
    def test_zero_noise_degeneracy(self):
        spec = SynthSpec(n_classes=3, dim=4, samples_per_class=10, mean_scale=5.0, noise_std=0.0)
        ds = generate_synthetic(spec)
        for rec in ds.records:
            expected = np.zeros(4)
            expected[rec.label] = 5.0
            np.testing.assert_array_equal(rec.embedding, expected.astype(np.float32))

    def test_determinism(self):
        spec = SynthSpec(n_classes=2, dim=3, samples_per_class=7, seed=11)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        for ra, rb in zip(a.records, b.records):
            assert ra.embedding.tobytes() == rb.embedding.tobytes()

    def test_nearest_center_oracle(self):
        # brute-force nearest-center classification must be perfect at this
        # separation (centers 10*sqrt(2) apart, noise sigma 0.5)
        spec = SynthSpec(n_classes=4, dim=8, samples_per_class=50, mean_scale=10.0, noise_std=0.5, seed=5)
        ds = generate_synthetic(spec)
        centers = np.zeros((4, 8))
        for c in range(4):
            centers[c, c] = 10.0
        test = [r for r in ds.records if r.split == "test"]
        assert test
        for rec in test:
            dists = [np.linalg.norm(rec.embedding.astype(np.float64) - ctr) for ctr in centers]
            assert int(np.argmin(dists)) == rec.label

    def test_split_counts_per_class(self):
        spec = SynthSpec(
            n_classes=2, dim=2, samples_per_class=10, split_fractions=(0.5, 0.3, 0.2), seed=0
        )
        ds = generate_synthetic(spec)
        for c in range(2):
            counts = {
                split: sum(1 for r in ds.records if r.label == c and r.split == split)
                for split in dataio.SPLITS
            }
            assert counts == {"train": 5, "val": 3, "test": 2}

    def test_largest_remainder_tie_rule(self):
        # 149 * (0.7, 0.15, 0.15) = (104.3, 22.35, 22.35): floors sum to 148,
        # the leftover goes to the largest remainder (val/test tie -> val)
        assert split_counts(149, (0.7, 0.15, 0.15)) == (104, 23, 22)
        # 150: (105.0, 22.5, 22.5) -> leftover to val by the same tie rule
        assert split_counts(150, (0.7, 0.15, 0.15)) == (105, 23, 22)

    def test_too_many_classes(self):
        with pytest.raises(ConfigurationError):
            SynthSpec(n_classes=5, dim=4, samples_per_class=1)

    def test_bad_fractions(self):
        with pytest.raises(ConfigurationError):
            SynthSpec(n_classes=2, dim=2, samples_per_class=1, split_fractions=(0.5, 0.5, 0.5))


class TestSchedule:
    def test_even_split(self):
        sched = make_task_schedule(6, 3)
        assert sched.to_lists() == [[0, 1], [2, 3], [4, 5]]

    def test_remainder_to_earlier_tasks(self):
        sched = make_task_schedule(7, 3)
        assert sched.to_lists() == [[0, 1, 2], [3, 4], [5, 6]]

    def test_shuffled_deterministic(self):
        a = make_task_schedule(6, 3, "shuffled", seed=7)
        b = make_task_schedule(6, 3, "shuffled", seed=7)
        assert a.to_lists() == b.to_lists()
        assert sorted(c for task in a.tasks for c in task) == list(range(6))

    def test_too_many_tasks(self):
        with pytest.raises(ConfigurationError):
            make_task_schedule(2, 3)

    def test_overlapping_tasks_rejected(self):
        with pytest.raises(ConfigurationError):
            TaskSchedule(tasks=(frozenset({0, 1}), frozenset({1, 2})))


class TestSelectTask:
    def _dataset(self):
        spec = SynthSpec(n_classes=3, dim=3, samples_per_class=12, seed=2)
        return generate_synthetic(spec)

    def test_filter_semantics(self):
        ds = self._dataset()
        sched = TaskSchedule(tasks=(frozenset({0, 1}), frozenset({2})))
        view = select_task(ds, sched, 1, "train")
        assert view.records
        for rec in view.records:
            assert rec.label in {0, 1} and rec.split == "train"

    def test_partition_completeness(self):
        ds = self._dataset()
        sched = TaskSchedule(tasks=(frozenset({0, 1}), frozenset({2})))
        total = 0
        seen_ids = set()
        for t in (1, 2):
            for split in dataio.SPLITS:
                view = select_task(ds, sched, t, split)
                total += len(view)
                ids = {r.sample_id for r in view.records}
                assert not ids & seen_ids  # pairwise disjoint
                seen_ids |= ids
        scheduled = {0, 1, 2}
        assert total == sum(1 for r in ds.records if r.label in scheduled)

    def test_empty_view_allowed(self):
        ds = EmbeddingDataset(
            dim=2,
            class_names=("a", "b", "c"),
            records=(EmbeddingRecord(0, np.zeros(2, dtype=np.float32), 0, "train"),),
        )
        sched = TaskSchedule(tasks=(frozenset({0}), frozenset({2})))
        view = select_task(ds, sched, 2, "val")
        assert len(view) == 0

    def test_out_of_range_task(self):
        ds = self._dataset()
        sched = TaskSchedule(tasks=(frozenset({0}),))
        with pytest.raises(IndexError):
            select_task(ds, sched, 2, "train")

    def test_view_preserves_global_labels(self):
        ds = self._dataset()
        sched = TaskSchedule(tasks=(frozenset({2}),))
        view = select_task(ds, sched, 1, "train")
        assert {r.label for r in view.records} == {2}
