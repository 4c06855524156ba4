from unittest import TestCase

import numpy as np

from scattersim.media import (
    MediumKind,
    MediumSpec,
    SolverError,
    SpecklePattern,
    TransmissionMedium,
    UnsupportedKindError,
    bin_speckle,
    exact_inverse,
    generate_medium,
    medium_fingerprint,
    propagate,
    propagate_batch,
)
from scattersim.util import InvalidArgumentError, InvalidSpecError, ShapeError
from tests.conftest import MediumBaseTest


def injected(matrix, in_dims, out_dims, kind=MediumKind.LINEAR):
    return TransmissionMedium(MediumSpec(kind, in_dims, out_dims, 0), matrix)


class MediumSpecTest(TestCase):
    def test_rejects_small_planes(self):
        with self.assertRaises(InvalidSpecError):
            generate_medium(MediumSpec(MediumKind.LINEAR, (1, 4), (4, 4), 0))
        with self.assertRaises(InvalidSpecError):
            generate_medium(MediumSpec(MediumKind.LINEAR, (4, 4), (0, 4), 0))

    def test_rejects_unknown_kind_and_seed(self):
        with self.assertRaises(InvalidSpecError):
            MediumSpec("nonlinear", (4, 4), (4, 4), 0).validated()
        with self.assertRaises(InvalidSpecError):
            MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), -1).validated()
        with self.assertRaises(InvalidSpecError):
            MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), 1 << 64).validated()

    def test_dict_round_trip(self):
        spec = MediumSpec(MediumKind.COHERENT, (4, 6), (8, 8), 12)
        self.assertEqual(MediumSpec.from_dict(spec.to_dict()), spec)

    def test_fingerprint_depends_on_seed(self):
        first = MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), 1)
        self.assertEqual(medium_fingerprint(first), medium_fingerprint(first._replace(seed=1)))
        self.assertNotEqual(medium_fingerprint(first), medium_fingerprint(first._replace(seed=2)))


class GenerateMediumTest(TestCase):
    def test_deterministic(self):
        spec = MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), 7)
        first, second = generate_medium(spec), generate_medium(spec)
        self.assertEqual(first.matrix.tobytes(), second.matrix.tobytes())
        self.assertEqual(first.fingerprint, second.fingerprint)

    def test_linear_entries_nonnegative(self):
        medium = generate_medium(MediumSpec(MediumKind.LINEAR, (16, 16), (24, 24), 1))
        self.assertEqual(medium.matrix.shape, (576, 256))
        self.assertTrue(np.all(medium.matrix >= 0))

    def test_coherent_entry_power(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (16, 16), (24, 24), 1))
        self.assertTrue(np.iscomplexobj(medium.matrix))
        power = np.mean(np.abs(medium.matrix) ** 2)
        self.assertAlmostEqual(power * 256, 1.0, delta=0.1)

    def test_matrix_is_read_only(self):
        medium = generate_medium(MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), 7))
        with self.assertRaises(ValueError):
            medium.matrix[0, 0] = 1.0

    def test_injected_matrix_checks(self):
        with self.assertRaises(ShapeError):
            injected(np.ones((3, 4)), (2, 2), (2, 2))
        with self.assertRaises(InvalidSpecError):
            injected(-np.eye(4), (2, 2), (2, 2))
        with self.assertRaises(InvalidSpecError):
            injected(np.full((4, 4), np.nan), (2, 2), (2, 2))


class PropagateTest(MediumBaseTest):
    __test__ = True

    def test_identity(self):
        medium = injected(np.eye(4), (2, 2), (2, 2))
        target = np.array([[0.1, 0.2], [0.3, 0.4]])
        speckle = propagate(medium, target)
        self.assertIsInstance(speckle, SpecklePattern)
        self.assertAllClose(speckle.values, target)
        self.assertEqual(speckle.medium_fingerprint, medium.fingerprint)

    def test_coherent_single_row(self):
        medium = injected(np.array([[1.0, 1j]]), (1, 2), (1, 1), MediumKind.COHERENT)
        speckle = propagate(medium, np.array([[1.0, 1.0]]))
        self.assertAlmostEqual(float(speckle.values[0, 0]), 2.0)

    def test_averaging_matrix(self):
        medium = injected(np.full((9, 4), 0.25), (2, 2), (3, 3))
        self.assertAllClose(propagate(medium, np.ones((2, 2))).values, np.ones((3, 3)))

    def test_row_major_convention(self):
        matrix = np.zeros((1, 6))
        matrix[0, 1 * 3 + 2] = 1.0
        medium = injected(matrix, (2, 3), (1, 1))
        target = np.zeros((2, 3))
        target[1, 2] = 0.5
        self.assertEqual(float(propagate(medium, target).values[0, 0]), 0.5)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        first, second = rng.random((2, 16, 16))
        combined = propagate(self.medium, 0.3 * first + 0.6 * second).values
        expected = 0.3 * propagate(self.medium, first).values + 0.6 * propagate(
            self.medium, second
        ).values
        self.assertAllClose(combined, expected)

    def test_coherent_scaling(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (8, 8), (8, 8), 3))
        target = np.random.default_rng(1).random((8, 8))
        self.assertAllClose(
            propagate(medium, 0.5 * target).values, 0.25 * propagate(medium, target).values
        )

    def test_speckles_nonnegative(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (8, 8), (8, 8), 3))
        speckle = propagate(medium, np.random.default_rng(2).random((8, 8)))
        self.assertTrue(np.all(speckle.values >= 0))

    def test_errors(self):
        with self.assertRaises(ShapeError):
            propagate(self.medium, np.zeros((8, 8)))
        with self.assertRaises(InvalidArgumentError):
            propagate(self.medium, np.full((16, 16), 1.5))

    def test_batch_matches_single(self):
        targets = np.random.default_rng(3).random((5, 16, 16))
        batch = propagate_batch(self.medium, targets)
        for target, speckle in zip(targets, batch):
            self.assertAllClose(speckle, propagate(self.medium, target).values, rtol=1e-12)
        self.assertEqual(propagate_batch(self.medium, np.zeros((0, 16, 16))).shape, (0, 24, 24))


class ExactInverseTest(TestCase):
    def test_identity(self):
        medium = injected(np.eye(4), (2, 2), (2, 2))
        np.testing.assert_allclose(exact_inverse(medium), np.eye(4), atol=1e-12)

    def test_diagonal(self):
        medium = injected(np.diag([2.0, 4.0]), (1, 2), (1, 2))
        np.testing.assert_allclose(exact_inverse(medium), np.diag([0.5, 0.25]), atol=1e-12)

    def test_random_full_column_rank(self):
        medium = generate_medium(MediumSpec(MediumKind.LINEAR, (4, 5), (5, 6), 11))
        inverse = exact_inverse(medium)
        self.assertEqual(inverse.shape, (20, 30))
        self.assertLess(np.max(np.abs(inverse @ medium.matrix - np.eye(20))), 1e-8)

    def test_errors(self):
        coherent = generate_medium(MediumSpec(MediumKind.COHERENT, (2, 2), (2, 2), 0))
        with self.assertRaises(UnsupportedKindError):
            exact_inverse(coherent)
        with self.assertRaises(SolverError):
            exact_inverse(injected(np.zeros((4, 4)), (2, 2), (2, 2)))
        with self.assertRaises(InvalidArgumentError):
            exact_inverse(injected(np.eye(4), (2, 2), (2, 2)), ridge=-1.0)


class BinSpeckleTest(TestCase):
    def test_block_sums(self):
        values = np.arange(16, dtype=float).reshape(4, 4)
        binned = bin_speckle(SpecklePattern(values, 5), 2)
        np.testing.assert_array_equal(binned.values, [[10, 18], [42, 50]])
        self.assertEqual(binned.medium_fingerprint, 5)

    def test_identity_factor(self):
        values = np.random.default_rng(0).random((3, 3))
        np.testing.assert_array_equal(bin_speckle(values, 1).values, values)

    def test_errors(self):
        with self.assertRaises(ShapeError):
            bin_speckle(np.ones((5, 4)), 2)
        with self.assertRaises(InvalidArgumentError):
            bin_speckle(np.ones((4, 4)), 0)
