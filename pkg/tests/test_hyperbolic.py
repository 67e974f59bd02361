"""Ball geometry, the projection head, and its training loop."""

import numpy as np
import pytest

from frozencil import dataio
from frozencil.errors import ConfigurationError, DataError
from frozencil.hyperbolic import (
    BALL_EPS,
    BallPoint,
    HyperbolicSpace,
    exp_map0,
    hyp_project,
    hyp_prototype,
    init_hyp_projection,
    load_hyp_projection,
    log_map0,
    mobius_add,
    poincare_distance,
    projection_loss_and_grad,
    save_hyp_projection,
    train_hyp_projection,
)
from frozencil.mlp import TrainConfig


def _random_ball_points(rng, n, dim=3, c=1.0, max_radius=0.85):
    pts = []
    for _ in range(n):
        v = rng.normal(size=dim)
        radius = rng.uniform(0.0, max_radius) / np.sqrt(c)
        pts.append(BallPoint(radius * v / np.linalg.norm(v), c))
    return pts


def _arcosh_distance(x, y, c=1.0):
    """Independent distance route for oracles: the arcosh form."""
    xx, yy = x @ x, y @ y
    gamma = 1.0 + 2.0 * c * ((x - y) @ (x - y)) / ((1 - c * xx) * (1 - c * yy))
    return float(np.arccosh(max(gamma, 1.0)) / np.sqrt(c))


class TestMobius:
    def test_identity_element(self):
        rng = np.random.default_rng(0)
        for x in _random_ball_points(rng, 50):
            zero = BallPoint(np.zeros(3), x.c)
            np.testing.assert_array_equal(mobius_add(x, zero).x, x.x)

    def test_inverse_element(self):
        rng = np.random.default_rng(1)
        for x in _random_ball_points(rng, 50):
            neg = BallPoint(-x.x, x.c)
            assert np.linalg.norm(mobius_add(neg, x).x) <= 1e-12

    def test_closure(self):
        rng = np.random.default_rng(2)
        xs = _random_ball_points(rng, 1000, dim=4)
        ys = _random_ball_points(rng, 1000, dim=4)
        for x, y in zip(xs, ys):
            assert np.linalg.norm(mobius_add(x, y).x) < 1.0

    def test_curvature_mismatch(self):
        with pytest.raises(ConfigurationError):
            mobius_add(BallPoint(np.zeros(2), 1.0), BallPoint(np.zeros(2), 2.0))


class TestExpLog:
    def test_zero_tangent_maps_to_origin(self):
        pt = exp_map0(np.zeros(4), 1.0)
        np.testing.assert_array_equal(pt.x, np.zeros(4))

    def test_atanh_half_example(self):
        # exp_map0((atanh(0.5), 0)) lands at (0.5, 0) for c=1
        v = np.array([np.arctanh(0.5), 0.0])
        pt = exp_map0(v, 1.0)
        np.testing.assert_allclose(pt.x, [0.5, 0.0], atol=1e-9)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            v = rng.normal(size=5)
            v *= rng.uniform(0.0, 5.0) / np.linalg.norm(v)
            back = log_map0(exp_map0(v, 1.0))
            worst = max(worst, float(np.max(np.abs(back - v))))
        assert worst <= 1e-9

    def test_round_trip_other_curvature(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            v = rng.normal(size=3)
            v *= rng.uniform(0.0, 2.0) / np.linalg.norm(v)
            back = log_map0(exp_map0(v, 0.5))
            np.testing.assert_allclose(back, v, atol=1e-9)


class TestDistance:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(5)
        for x in _random_ball_points(rng, 20):
            assert poincare_distance(x, x) == 0.0

    def test_ln3_example(self):
        # d(0, (0.5, 0)) = 2 atanh(0.5) = ln 3 at c=1
        origin = BallPoint(np.zeros(2), 1.0)
        half = BallPoint(np.array([0.5, 0.0]), 1.0)
        np.testing.assert_allclose(poincare_distance(origin, half), np.log(3.0), atol=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        xs = _random_ball_points(rng, 100)
        ys = _random_ball_points(rng, 100)
        for x, y in zip(xs, ys):
            assert abs(poincare_distance(x, y) - poincare_distance(y, x)) <= 1e-12

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x, y, z = _random_ball_points(rng, 3)
            assert poincare_distance(x, z) <= (
                poincare_distance(x, y) + poincare_distance(y, z) + 1e-9
            )

    def test_agrees_with_arcosh_form(self):
        rng = np.random.default_rng(8)
        xs = _random_ball_points(rng, 50)
        ys = _random_ball_points(rng, 50)
        for x, y in zip(xs, ys):
            assert abs(poincare_distance(x, y) - _arcosh_distance(x.x, y.x)) <= 1e-9


class TestProjection:
    def test_zero_matrix_maps_to_origin(self):
        params = init_hyp_projection(4, p=3, seed=0)
        params.a[:] = 0.0
        rng = np.random.default_rng(0)
        for _ in range(5):
            pt = hyp_project(params, rng.normal(size=4) * 10)
            np.testing.assert_array_equal(pt.x, np.zeros(3))

    def test_clip_invariant(self):
        params = init_hyp_projection(4, p=3, seed=1)
        params.a *= 100.0  # force saturation
        rng = np.random.default_rng(1)
        for _ in range(20):
            pt = hyp_project(params, rng.normal(size=4) * 50)
            assert np.sqrt(params.curvature) * np.linalg.norm(pt.x) <= 1.0 - BALL_EPS + 1e-15

    def test_manual_composition(self):
        a = np.array([[0.5, -0.25], [0.1, 0.3]])
        params = init_hyp_projection(2, p=2, seed=0)
        params.a[:] = a
        z = np.array([1.2, -0.4])
        v = a @ z
        norm = np.linalg.norm(v)
        expected = np.tanh(norm) * v / norm
        np.testing.assert_allclose(hyp_project(params, z).x, expected, atol=1e-9)


class TestPrototype:
    def test_single_point(self):
        pt = BallPoint(np.array([0.3, -0.2]), 1.0)
        proto = hyp_prototype([pt])
        np.testing.assert_allclose(proto.x, pt.x, atol=1e-12)

    def test_symmetric_pair_gives_origin(self):
        p = BallPoint(np.array([0.4, 0.1]), 1.0)
        neg = BallPoint(-p.x, 1.0)
        proto = hyp_prototype([p, neg])
        assert np.linalg.norm(proto.x) <= 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            hyp_prototype([])

    def test_frechet_mean_oracle(self):
        # gradient descent on sum of squared arcosh-form distances,
        # fully independent of the package's geometry kernels
        rng = np.random.default_rng(9)
        points = _random_ball_points(rng, 20, dim=3, max_radius=0.6)
        proto = hyp_prototype(points)

        arrs = [p.x for p in points]

        def objective(mu):
            return sum(_arcosh_distance(mu, a) ** 2 for a in arrs)

        mu = np.mean(arrs, axis=0)  # crude start strictly inside the ball
        step_h = 1e-6
        for _ in range(400):
            grad = np.zeros(3)
            for j in range(3):
                e = np.zeros(3)
                e[j] = step_h
                grad[j] = (objective(mu + e) - objective(mu - e)) / (2 * step_h)
            mu = mu - 0.002 * grad
            norm = np.linalg.norm(mu)
            if norm > 0.999:
                mu *= 0.999 / norm

        frechet = BallPoint(mu, 1.0)
        assert poincare_distance(proto, frechet) <= 0.05


class TestTraining:
    def _view(self, rng, n_per_class=20, dim=4, scale=3.0):
        vectors, labels = [], []
        for cls in range(3):
            center = np.zeros(dim)
            center[cls] = scale
            for _ in range(n_per_class):
                vectors.append(center + rng.normal(size=dim) * 0.3)
                labels.append(cls)
        recs = tuple(
            dataio.EmbeddingRecord(i, np.asarray(v, dtype=np.float32), int(y), "train")
            for i, (v, y) in enumerate(zip(vectors, labels))
        )
        return dataio.EmbeddingDataset(
            dim=dim, class_names=("a", "b", "c"), records=recs
        )

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        params = init_hyp_projection(4, p=3, seed=2, temperature=0.5, input_scale=3.0)
        U = rng.normal(size=(6, 4)) * 2
        y = rng.integers(0, 3, 6)
        protos = np.stack([p.x for p in _random_ball_points(rng, 3, dim=3, max_radius=0.7)])
        _, grad = projection_loss_and_grad(params, U, y, protos)

        step = 1e-6
        checked = 0
        for i in range(params.a.shape[0]):
            for j in range(params.a.shape[1]):
                orig = params.a[i, j]
                params.a[i, j] = orig + step
                lo_plus, _ = projection_loss_and_grad(params, U, y, protos)
                params.a[i, j] = orig - step
                lo_minus, _ = projection_loss_and_grad(params, U, y, protos)
                params.a[i, j] = orig
                fd = (lo_plus - lo_minus) / (2 * step)
                denom = max(abs(fd), abs(grad[i, j]), 1e-8)
                assert abs(fd - grad[i, j]) / denom <= 1e-3, (i, j, fd, grad[i, j])
                checked += 1
        assert checked == params.a.size

    def test_loss_history_non_increasing_on_separable_data(self):
        rng = np.random.default_rng(11)
        view = self._view(rng)
        params = init_hyp_projection(4, p=8, seed=3, input_scale=3.0)
        cfg = TrainConfig(lr=0.001, batch_size=len(view.records), max_epochs=25, seed=0)
        _, hist = train_hyp_projection(params, view, cfg)
        losses = hist.train_loss
        assert len(losses) == 25
        for earlier, later in zip(losses, losses[1:]):
            assert later <= earlier + 1e-3

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        view = self._view(rng)
        cfg = TrainConfig(lr=0.001, batch_size=16, max_epochs=5, seed=4)
        a1, _ = train_hyp_projection(init_hyp_projection(4, p=6, seed=5, input_scale=3.0), view, cfg)
        a2, _ = train_hyp_projection(init_hyp_projection(4, p=6, seed=5, input_scale=3.0), view, cfg)
        assert a1.fingerprint() == a2.fingerprint()

    def test_empty_view(self):
        empty = dataio.EmbeddingDataset(dim=4, class_names=("a",), records=())
        with pytest.raises(DataError):
            train_hyp_projection(init_hyp_projection(4, p=4), empty, TrainConfig())

    def test_trained_space_separates_synthetic_classes(self):
        rng = np.random.default_rng(13)
        view = self._view(rng, n_per_class=30)
        params = init_hyp_projection(4, p=8, seed=6, input_scale=3.0)
        cfg = TrainConfig(lr=0.001, batch_size=len(view.records), max_epochs=30, seed=1)
        trained, _ = train_hyp_projection(params, view, cfg)
        space = HyperbolicSpace(trained)

        from frozencil.prototypes import PrototypeBank, add_task, fit_prototypes, nmc_predict

        bank = add_task(PrototypeBank.empty(space.space_id), fit_prototypes(view, space))
        held_out = self._view(np.random.default_rng(14), n_per_class=15)
        correct = [
            nmc_predict(bank, space, r.embedding) == r.label for r in held_out.records
        ]
        assert np.mean(correct) >= 0.95


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_hyp_projection(5, p=4, curvature=0.8, temperature=0.2, seed=7,
                                     normalize_input=True, input_scale=2.0)
        save_hyp_projection(params, tmp_path / "h.bin")
        loaded = load_hyp_projection(tmp_path / "h.bin")
        np.testing.assert_array_equal(loaded.a, params.a)
        assert loaded.curvature == params.curvature
        assert loaded.temperature == params.temperature
        assert loaded.normalize_input is True
