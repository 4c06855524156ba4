from unittest import TestCase

import numpy as np
import pytest

from scattersim.datasets.builder import CaseRecipe, Dataset, DatasetSpec, build_dataset
from scattersim.datasets.generators import TargetFamily, gen_digit
from scattersim.learners.mapping import (
    LearnedMapping,
    MappingKind,
    Reconstruction,
    predict,
    predict_batch,
)
from scattersim.learners.net import (
    Adam,
    DivergenceError,
    NetConfig,
    loss_and_grads,
    loss_value,
    train_net,
)
from scattersim.learners.ridge import (
    ConvergenceError,
    RidgeConfig,
    RidgeSolver,
    conjugate_gradient,
    fit_ridge,
    train_ridge,
)
from scattersim.learners.training import train
from scattersim.media import MediumKind, MediumSpec, SolverError, generate_medium, propagate
from scattersim.metrics import pcc
from scattersim.util import InvalidArgumentError, InvalidSpecError, ShapeError


def random_system(seed=0, count=40, speckle_pixels=10, target_pixels=15):
    rng = np.random.default_rng(seed)
    speckles = rng.standard_normal((count, speckle_pixels))
    targets = rng.random((count, target_pixels))
    return targets, speckles


def gradient_descent_ridge(targets, speckles, lambda_rel, steps=20000):
    """Full batch gradient descent on the regularized least squares objective."""
    centered_x = targets - targets.mean(axis=0)
    centered_y = speckles - speckles.mean(axis=0)
    s_yy = centered_y.T @ centered_y
    s_xy = centered_x.T @ centered_y
    lambda_eff = lambda_rel * np.trace(s_yy) / speckles.shape[1]
    system = s_yy + lambda_eff * np.eye(speckles.shape[1])
    step = 1.0 / np.linalg.eigvalsh(system).max()
    weights = np.zeros((targets.shape[1], speckles.shape[1]))
    for _ in range(steps):
        weights -= step * (weights @ system - s_xy)
    return weights


class RidgeConfigTest(TestCase):
    def test_validation(self):
        with self.assertRaises(InvalidSpecError):
            RidgeConfig(lambda_rel=-1.0).validated()
        with self.assertRaises(InvalidSpecError):
            RidgeConfig(solver="qr").validated()
        with self.assertRaises(InvalidSpecError):
            RidgeConfig(cg_max_iter=0).validated()
        self.assertEqual(RidgeConfig(solver="cg").validated().solver, RidgeSolver.CONJUGATE_GRADIENT)

    def test_dict_round_trip(self):
        cfg = RidgeConfig(1e-3, RidgeSolver.CONJUGATE_GRADIENT, 1e-8, 50)
        self.assertEqual(RidgeConfig.from_dict(cfg.to_dict()), cfg)
        with self.assertRaises(InvalidSpecError):
            RidgeConfig.from_dict({"solver": "cholesky", "lambda_rel": "a lot"})


class FitRidgeTest(TestCase):
    def test_identity_system(self):
        rng = np.random.default_rng(1)
        values = rng.random((50, 4, 4))
        dataset = Dataset.from_arrays(values, values)
        mapping = train_ridge(dataset, RidgeConfig(lambda_rel=0.0))
        weights, target_mean, speckle_mean = mapping.params
        np.testing.assert_allclose(weights, np.eye(16), atol=1e-6)
        np.testing.assert_allclose(target_mean, speckle_mean, atol=1e-12)
        reconstructed = predict_batch(mapping, values)
        np.testing.assert_allclose(reconstructed.raw_values, values, atol=1e-6)
        np.testing.assert_allclose(predict(mapping, values[3]).values, values[3], atol=1e-6)

    def test_gradient_descent_oracle(self):
        targets, speckles = random_system()
        weights, _, _ = fit_ridge(targets, speckles, RidgeConfig(lambda_rel=1e-2))
        expected = gradient_descent_ridge(targets, speckles, 1e-2)
        np.testing.assert_allclose(weights, expected, rtol=0, atol=1e-5)

    def test_cholesky_and_cg_agree(self):
        targets, speckles = random_system(seed=2)
        cholesky, _, _ = fit_ridge(targets, speckles, RidgeConfig(lambda_rel=1e-3))
        cg, _, _ = fit_ridge(
            targets,
            speckles,
            RidgeConfig(lambda_rel=1e-3, solver=RidgeSolver.CONJUGATE_GRADIENT, cg_tol=1e-12),
        )
        np.testing.assert_allclose(cg, cholesky, rtol=0, atol=1e-6)

    def test_cg_iteration_cap(self):
        targets, speckles = random_system(seed=3)
        with self.assertRaises(ConvergenceError) as context:
            fit_ridge(
                targets,
                speckles,
                RidgeConfig(solver=RidgeSolver.CONJUGATE_GRADIENT, cg_max_iter=1),
            )
        self.assertGreater(context.exception.residual, 0.0)
        self.assertEqual(context.exception.iterations, 1)
        self.assertEqual(context.exception.category, "numerical")

    def test_conjugate_gradient_vector(self):
        matrix = np.array([[4.0, 1.0], [1.0, 3.0]])
        solution, iterations, residual = conjugate_gradient(matrix, np.array([1.0, 2.0]))
        np.testing.assert_allclose(solution, [1 / 11, 7 / 11], rtol=1e-10)
        self.assertLessEqual(iterations, 2)
        zero, _, _ = conjugate_gradient(matrix, np.zeros(2))
        np.testing.assert_array_equal(zero, [0.0, 0.0])

    def test_singular_cholesky(self):
        speckles = np.ones((5, 3))
        targets = np.random.default_rng(4).random((5, 2))
        with self.assertRaises(SolverError):
            fit_ridge(targets, speckles, RidgeConfig(lambda_rel=0.0))

    def test_needs_two_pairs(self):
        dataset = Dataset.from_arrays(np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
        with self.assertRaises(InvalidArgumentError):
            train_ridge(dataset)

    def test_coverage_null_exactness(self):
        rng = np.random.default_rng(5)
        targets = rng.random((60, 4, 4))
        targets[:, 0, 0] = 0.3
        targets[:, 2, 1] = 0.0
        speckles = rng.random((60, 5, 5))
        mapping = train_ridge(Dataset.from_arrays(targets, speckles))
        weights = mapping.params[0]
        self.assertTrue(np.all(weights[0] == 0.0))
        self.assertTrue(np.all(weights[2 * 4 + 1] == 0.0))
        inputs = rng.random((10, 5, 5)) * 100.0
        raw = predict_batch(mapping, inputs).raw_values
        np.testing.assert_allclose(raw[:, 0, 0], 0.3, rtol=0, atol=1e-9)
        np.testing.assert_allclose(raw[:, 2, 1], 0.0, rtol=0, atol=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(6)
        targets = rng.random((30, 3, 3))
        speckles = rng.random((30, 4, 4))
        inputs = rng.random((4, 4, 4))
        plain = train_ridge(Dataset.from_arrays(targets, speckles))
        for alpha in (0.5, 0.37):
            scaled = train_ridge(Dataset.from_arrays(alpha * targets, speckles))
            np.testing.assert_allclose(
                predict_batch(scaled, inputs).raw_values,
                alpha * predict_batch(plain, inputs).raw_values,
                rtol=1e-9,
            )

    def test_deterministic(self):
        targets, speckles = random_system(seed=7)
        first = fit_ridge(targets, speckles)
        second = fit_ridge(targets, speckles)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class PredictTest(TestCase):
    def setUp(self):
        self.mean = np.linspace(0.1, 0.9, 4)
        self.mapping = LearnedMapping(
            MappingKind.RIDGE_AFFINE,
            (3, 3),
            (2, 2),
            (np.zeros((4, 9)), self.mean, np.zeros(9)),
        )

    def test_zero_weights_predict_mean(self):
        result = predict(self.mapping, np.random.default_rng(0).random((3, 3)))
        self.assertIsInstance(result, Reconstruction)
        np.testing.assert_array_equal(result.values, self.mean.reshape(2, 2))

    def test_values_are_clamped(self):
        mapping = LearnedMapping(
            MappingKind.RIDGE_AFFINE, (3, 3), (2, 2), (np.eye(4, 9) * 10, self.mean, np.zeros(9))
        )
        result = predict(mapping, np.random.default_rng(1).standard_normal((3, 3)) * 5)
        self.assertTrue(np.all((result.values >= 0.0) & (result.values <= 1.0)))
        np.testing.assert_array_equal(result.values, np.clip(result.raw_values, 0.0, 1.0))

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            predict(self.mapping, np.zeros((2, 2)))
        with self.assertRaises(ShapeError):
            predict_batch(self.mapping, np.zeros((3, 3)))
        with self.assertRaises(ShapeError):
            LearnedMapping(MappingKind.RIDGE_AFFINE, (3, 3), (2, 2), (np.zeros((4, 8)), self.mean, np.zeros(9)))
        with self.assertRaises(ShapeError):
            LearnedMapping(MappingKind.SMALL_NET, (3, 3), (2, 2), (np.zeros((5, 9)),))

    def test_layer_dims_and_equality(self):
        self.assertEqual(self.mapping.layer_dims, (9, 4))
        same = LearnedMapping(
            MappingKind.RIDGE_AFFINE, (3, 3), (2, 2), (np.zeros((4, 9)), self.mean, np.zeros(9))
        )
        self.assertEqual(self.mapping, same)
        net = LearnedMapping(
            MappingKind.SMALL_NET,
            (3, 3),
            (2, 2),
            (np.zeros((5, 9)), np.zeros(5), np.zeros((4, 5)), np.zeros(4)),
        )
        self.assertEqual(net.layer_dims, (9, 5, 4))
        np.testing.assert_array_equal(predict(net, np.ones((3, 3))).values, np.full((2, 2), 0.5))


class LossAndGradsTest(TestCase):
    def setUp(self):
        rng = np.random.default_rng(8)
        self.params = [
            rng.normal(0.0, 0.5, (4, 6)),
            rng.normal(0.0, 0.5, 4),
            rng.normal(0.0, 0.5, (6, 4)),
            rng.normal(0.0, 0.5, 6),
        ]
        self.speckles = rng.random((3, 6))
        self.targets = rng.random((3, 6))

    def test_zero_params_pure_mse(self):
        zero = [np.zeros_like(param) for param in self.params]
        loss, _ = loss_and_grads(zero, self.speckles, self.targets, 0.0)
        self.assertAlmostEqual(loss, np.mean((0.5 - self.targets) ** 2), delta=1e-12)

    def test_pure_mse_weight(self):
        loss, _ = loss_and_grads(self.params, self.speckles, self.targets, 0.0)
        hidden = np.maximum(self.speckles @ self.params[0].T + self.params[1], 0.0)
        predictions = 1.0 / (1.0 + np.exp(-(hidden @ self.params[2].T + self.params[3])))
        self.assertAlmostEqual(loss, np.mean((predictions - self.targets) ** 2), delta=1e-12)
        self.assertAlmostEqual(
            loss_value(self.params, self.speckles, self.targets, 0.0), loss, delta=1e-12
        )

    def test_finite_differences(self):
        step = 1e-5
        weight = 0.3
        _, grads = loss_and_grads(self.params, self.speckles, self.targets, weight)
        for param, grad in zip(self.params, grads):
            numeric = np.zeros_like(param)
            for index in np.ndindex(param.shape):
                original = param[index]
                param[index] = original + step
                upper = loss_value(self.params, self.speckles, self.targets, weight)
                param[index] = original - step
                lower = loss_value(self.params, self.speckles, self.targets, weight)
                param[index] = original
                numeric[index] = (upper - lower) / (2.0 * step)
            relative = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-6)
            self.assertLess(relative.max(), 1e-4)

    def test_unused_hidden_unit(self):
        params = [param.copy() for param in self.params]
        params[0][2] = 0.0
        params[1][2] = 0.0
        _, grads = loss_and_grads(params, self.speckles, self.targets, 0.3)
        np.testing.assert_array_equal(grads.w1[2], np.zeros(6))
        self.assertEqual(grads.b1[2], 0.0)
        np.testing.assert_array_equal(grads.w2[:, 2], np.zeros(6))


class AdamTest(TestCase):
    def test_first_step_is_learning_rate(self):
        param = np.array([1.0, -1.0])
        optimizer = Adam([param], learning_rate=0.01)
        optimizer.step([np.array([2.0, -0.5])])
        np.testing.assert_allclose(param, [0.99, -0.99], rtol=1e-6)
        self.assertEqual(optimizer.steps, 1)

    def test_minimizes_quadratic(self):
        param = np.array([3.0, -2.0])
        optimizer = Adam([param], learning_rate=0.05)
        for _ in range(2000):
            optimizer.step([2.0 * param])
        np.testing.assert_allclose(param, [0.0, 0.0], atol=0.1)


class NetConfigTest(TestCase):
    def test_validation(self):
        for bad in (
            NetConfig(dice_weight=1.5),
            NetConfig(validation_fraction=0.0),
            NetConfig(validation_fraction=1.0),
            NetConfig(hidden_width=0),
            NetConfig(learning_rate=0.0),
        ):
            with self.assertRaises(InvalidSpecError):
                bad.validated()

    def test_dict_round_trip(self):
        cfg = NetConfig(hidden_width=8, max_epochs=3, init_seed=4)
        self.assertEqual(NetConfig.from_dict(cfg.to_dict()), cfg)


class TrainNetTest(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.medium = generate_medium(MediumSpec(MediumKind.LINEAR, (8, 8), (6, 6), 2))

    def dataset(self, count, seed=0):
        spec = DatasetSpec(TargetFamily.DIGIT, CaseRecipe.PLAIN, count, (8, 8), seed=seed)
        return build_dataset(spec, self.medium)

    def test_memorizes_identical_pairs(self):
        truth = gen_digit(3, (8, 8)).values
        speckle = propagate(self.medium, truth).values
        dataset = Dataset.from_arrays(np.repeat(truth[None], 20, 0), np.repeat(speckle[None], 20, 0))
        mapping = train_net(dataset, NetConfig(hidden_width=16, learning_rate=1e-2, max_epochs=50))
        self.assertGreaterEqual(pcc(predict(mapping, speckle).values, truth), 0.99)

    def test_loss_decreases_after_first_epoch(self):
        dataset = self.dataset(40)
        for seed in range(3):
            cfg = NetConfig(
                hidden_width=16, batch_size=64, max_epochs=1, init_seed=seed
            )
            history = train_net(dataset, cfg).history
            self.assertEqual([record.epoch for record in history], [0, 1])
            self.assertLess(history[1].train_loss, history[0].train_loss)

    def test_history_and_early_stopping(self):
        cfg = NetConfig(hidden_width=8, max_epochs=30, early_stop_patience=2)
        mapping = train_net(self.dataset(20), cfg)
        self.assertEqual(mapping.kind, MappingKind.SMALL_NET)
        self.assertEqual(mapping.layer_dims, (36, 8, 64))
        self.assertGreaterEqual(len(mapping.history), 2)
        self.assertLessEqual(len(mapping.history), 31)

    def test_deterministic(self):
        cfg = NetConfig(hidden_width=8, max_epochs=2, init_seed=5)
        dataset = self.dataset(12)
        self.assertEqual(train_net(dataset, cfg), train_net(dataset, cfg))

    def test_divergence(self):
        speckles = np.full((12, 6, 6), np.nan)
        dataset = Dataset.from_arrays(np.zeros((12, 8, 8)), speckles)
        with self.assertRaises(DivergenceError) as context:
            train_net(dataset, NetConfig(hidden_width=4, max_epochs=2))
        self.assertEqual((context.exception.epoch, context.exception.batch), (1, 0))

    def test_needs_ten_pairs(self):
        with self.assertRaises(InvalidArgumentError):
            train_net(self.dataset(9))


@pytest.mark.slow
@pytest.mark.allowloggingwarn
class CoherentNetTest(TestCase):
    """Default small network on an intensity-detected complex medium."""

    def test_held_out_digits(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (12, 12), (18, 18), 0))
        train_spec = DatasetSpec(TargetFamily.DIGIT, CaseRecipe.PLAIN, 4000, (12, 12), seed=0)
        mapping = train_net(build_dataset(train_spec, medium), NetConfig())
        self.assertEqual(mapping.layer_dims, (324, 256, 144))
        self.assertLessEqual(len(mapping.history), 51)
        test_set = build_dataset(train_spec._replace(count=50, seed=1), medium)
        reconstructions = predict_batch(mapping, test_set.speckles()).values
        scores = [pcc(recon, truth) for recon, truth in zip(reconstructions, test_set.targets())]
        self.assertGreaterEqual(np.mean(scores), 0.6)


class TrainDispatchTest(TestCase):
    def test_dispatch(self):
        values = np.random.default_rng(9).random((12, 3, 3))
        dataset = Dataset.from_arrays(values, values)
        self.assertEqual(train(dataset).kind, MappingKind.RIDGE_AFFINE)
        self.assertEqual(
            train(dataset, "net", NetConfig(hidden_width=4, max_epochs=1)).kind,
            MappingKind.SMALL_NET,
        )
        with self.assertRaises(InvalidSpecError):
            train(dataset, MappingKind.RIDGE_AFFINE, NetConfig())
        with self.assertRaises(InvalidSpecError):
            train(dataset, "net", RidgeConfig())
        with self.assertRaises(InvalidSpecError):
            train(dataset, "forest")
