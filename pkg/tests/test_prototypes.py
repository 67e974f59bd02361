"""Prototype fitting, the memory bank, and nearest-mean prediction."""

import numpy as np
import pytest

from frozencil import dataio
from frozencil.errors import ConfigurationError, ConflictError, DataError, StateError
from frozencil.projections import NormalizedSpace, l2_normalize
from frozencil.prototypes import (
    IdentitySpace,
    PrototypeBank,
    add_task,
    fit_prototypes,
    load_bank,
    nmc_predict,
    save_bank,
)


def _view(vectors, labels, n_classes=None):
    n_classes = n_classes or (max(labels) + 1)
    recs = tuple(
        dataio.EmbeddingRecord(i, np.asarray(v, dtype=np.float32), int(y), "train")
        for i, (v, y) in enumerate(zip(vectors, labels))
    )
    names = tuple(f"c{i}" for i in range(n_classes))
    return dataio.EmbeddingDataset(dim=len(vectors[0]), class_names=names, records=recs)


class TestFitPrototypes:
    def test_single_sample_is_the_prototype(self):
        view = _view([[2.0, 3.0]], [0])
        entries = fit_prototypes(view, IdentitySpace())
        cls, proto, count, raw_mean = entries[0]
        assert cls == 0 and count == 1
        np.testing.assert_array_equal(proto, [2.0, 3.0])
        np.testing.assert_array_equal(raw_mean, [2.0, 3.0])

    def test_midpoint(self):
        view = _view([[1.0, 0.0], [0.0, 1.0]], [0, 0])
        entries = fit_prototypes(view, IdentitySpace())
        np.testing.assert_array_equal(entries[0][1], [0.5, 0.5])

    def test_brute_force_mean_oracle(self):
        rng = np.random.default_rng(8)
        vectors, labels = [], []
        for cls in range(3):
            for _ in range(50):
                vectors.append(rng.normal(size=6))
                labels.append(cls)
        view = _view(vectors, labels)
        entries = fit_prototypes(view, IdentitySpace())
        for cls, proto, count, raw_mean in entries:
            # independent accumulate-then-divide loop over float32 records
            acc = np.zeros(6)
            n = 0
            for rec in view.records:
                if rec.label == cls:
                    acc = acc + rec.embedding.astype(np.float64)
                    n += 1
            assert count == n == 50
            np.testing.assert_allclose(proto, acc / n, atol=1e-9)
            np.testing.assert_allclose(raw_mean, acc / n, atol=1e-9)

    def test_normalization_applied_per_sample(self):
        # mean of normalized samples, not normalization of the mean
        view = _view([[2.0, 0.0], [0.0, 8.0]], [0, 0])
        entries = fit_prototypes(view, NormalizedSpace())
        np.testing.assert_allclose(entries[0][1], [0.5, 0.5], atol=1e-12)
        # raw_mean is the mean of *preprocessed* (normalized) samples here
        np.testing.assert_allclose(entries[0][3], [0.5, 0.5], atol=1e-12)

    def test_empty_view(self):
        ds = dataio.EmbeddingDataset(dim=2, class_names=("a",), records=())
        with pytest.raises(DataError):
            fit_prototypes(ds, IdentitySpace())

    def test_expected_class_with_zero_samples(self):
        view = _view([[1.0, 0.0]], [0], n_classes=2)
        with pytest.raises(DataError, match=r"\[1\]"):
            fit_prototypes(view, IdentitySpace(), expected_classes={0, 1})
        # without the expectation the class is simply absent
        assert [e[0] for e in fit_prototypes(view, IdentitySpace())] == [0]


class TestAddTask:
    def _entries(self, classes):
        return [(c, np.array([float(c), 0.0]), 1, np.array([float(c), 0.0])) for c in classes]

    def test_empty_plus_two(self):
        bank = add_task(PrototypeBank.empty("identity"), self._entries([0, 1]))
        assert bank.classes() == [0, 1]

    def test_collision(self):
        bank = add_task(PrototypeBank.empty("identity"), self._entries([0]))
        with pytest.raises(ConflictError):
            add_task(bank, self._entries([0]))

    def test_order_independence(self):
        e1, e2 = self._entries([0, 1]), self._entries([2, 3])
        a = add_task(add_task(PrototypeBank.empty("identity"), e1), e2)
        b = add_task(add_task(PrototypeBank.empty("identity"), e2), e1)
        assert a.classes() == b.classes()
        for cls in a.classes():
            np.testing.assert_array_equal(a.entries[cls].prototype, b.entries[cls].prototype)

    def test_space_mismatch(self):
        bank = PrototypeBank.empty("identity")
        with pytest.raises(ConfigurationError):
            add_task(bank, self._entries([0]), space_id="pca")

    def test_existing_entries_bit_unchanged(self):
        bank = add_task(PrototypeBank.empty("identity"), self._entries([0, 1]))
        before = bank.fingerprints()
        grown = add_task(bank, self._entries([2]))
        after = grown.fingerprints()
        assert all(after[cls] == fp for cls, fp in before.items())


class TestNmcPredict:
    def _bank(self, protos):
        entries = [(c, np.asarray(p, dtype=float), 1, np.asarray(p, dtype=float)) for c, p in protos.items()]
        return add_task(PrototypeBank.empty("identity"), entries)

    def test_exact_prototype_match(self):
        bank = self._bank({1: [1.0, 0.0], 3: [5.0, 5.0], 4: [-2.0, 1.0]})
        assert nmc_predict(bank, IdentitySpace(), np.array([5.0, 5.0])) == 3

    def test_equidistant_tie_lowest_class(self):
        bank = self._bank({2: [1.0, 0.0], 7: [-1.0, 0.0]})
        assert nmc_predict(bank, IdentitySpace(), np.array([0.0, 0.0])) == 2

    def test_empty_bank(self):
        with pytest.raises(StateError):
            nmc_predict(PrototypeBank.empty("identity"), IdentitySpace(), np.zeros(2))

    def test_space_mismatch(self):
        bank = self._bank({0: [1.0, 0.0]})
        with pytest.raises(ConfigurationError):
            nmc_predict(bank, NormalizedSpace(), np.array([1.0, 1.0]))

    def test_brute_force_distance_table_oracle(self):
        rng = np.random.default_rng(17)
        protos = {c: rng.normal(size=4) for c in range(5)}
        bank = self._bank(protos)
        space = IdentitySpace()
        for _ in range(20):
            z = rng.normal(size=4) * 2
            # exhaustive distance table, argmin with lowest-index ties
            table = {c: float(np.sqrt(((z - p) ** 2).sum())) for c, p in protos.items()}
            best = min(table.values())
            expected = min(c for c, d in table.items() if d == best)
            assert nmc_predict(bank, space, z) == expected


class TestProperties:
    def test_normalized_variant_equals_cosine_argmax(self):
        rng = np.random.default_rng(4)
        space = NormalizedSpace()
        vectors, labels = [], []
        for cls in range(4):
            center = rng.normal(size=5) * 3
            for _ in range(12):
                vectors.append(center + rng.normal(size=5) * 0.5)
                labels.append(cls)
        view = _view(vectors, labels)
        bank = add_task(PrototypeBank.empty("normalized"), fit_prototypes(view, space))
        for _ in range(25):
            z = rng.normal(size=5) * 2
            pred = nmc_predict(bank, space, z)
            q = l2_normalize(z)
            sims = {c: float(q @ e.prototype) for c, e in bank.entries.items()}
            best = max(sims.values())
            cosine_pred = min(c for c, s in sims.items() if s == best)
            assert pred == cosine_pred

    def test_scale_covariance_identity_space(self):
        rng = np.random.default_rng(9)
        vectors, labels = [], []
        for cls in range(3):
            center = rng.normal(size=4) * 4
            for _ in range(10):
                vectors.append(center + rng.normal(size=4))
                labels.append(cls)
        queries = [rng.normal(size=4) * 3 for _ in range(15)]
        space = IdentitySpace()
        for scale in (1.0, 2.0, 0.25):
            scaled_view = _view([np.asarray(v) * scale for v in vectors], labels)
            bank = add_task(PrototypeBank.empty("identity"), fit_prototypes(scaled_view, space))
            preds = [nmc_predict(bank, space, q * scale) for q in queries]
            if scale == 1.0:
                reference = preds
            else:
                assert preds == reference


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = [(c, rng.normal(size=3), 5 + c, rng.normal(size=4)) for c in (0, 2, 9)]
        bank = add_task(PrototypeBank.empty("pca"), entries)
        save_bank(bank, tmp_path / "b.bin")
        loaded = load_bank(tmp_path / "b.bin")
        assert loaded.space_id == "pca"
        assert loaded.classes() == bank.classes()
        for cls in bank.classes():
            np.testing.assert_array_equal(loaded.entries[cls].prototype, bank.entries[cls].prototype)
            np.testing.assert_array_equal(loaded.entries[cls].raw_mean, bank.entries[cls].raw_mean)
            assert loaded.entries[cls].count == bank.entries[cls].count
