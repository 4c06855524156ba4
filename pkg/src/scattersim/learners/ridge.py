"""Module for the closed-form ridge affine inverse mapping."""
import logging
import warnings
from enum import Enum, unique
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from scattersim.datasets.builder import Dataset
from scattersim.learners.mapping import LearnedMapping, MappingKind
from scattersim.media import SolverError
from scattersim.util import (
    InvalidArgumentError,
    InvalidSpecError,
    ScatterSimError,
    coerce_enum,
)

_LOGGER = logging.getLogger(__name__)

SLOW_CONVERGENCE_SHARE = 0.8


class ConvergenceError(ScatterSimError):
    """Raised when an iterative solver hits its iteration cap.

    Parameters
    ----------
    message : str
        description of the problem
    residual : float
        final relative residual norm
    iterations : int
        number of performed iterations
    """

    category = "numerical"

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@unique
class RidgeSolver(str, Enum):
    """Solvers for the regularized normal equations"""

    CHOLESKY = "cholesky"
    CONJUGATE_GRADIENT = "cg"


class RidgeConfig(NamedTuple):
    """Ridge regression options.

    ``cg_max_iter`` None means 10 times the number of speckle pixels.
    """

    lambda_rel: float = 1e-4
    solver: RidgeSolver = RidgeSolver.CHOLESKY
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None

    def validated(self) -> "RidgeConfig":
        try:
            lambda_rel = float(self.lambda_rel)
            cg_tol = float(self.cg_tol)
        except (TypeError, ValueError) as error:
            raise InvalidSpecError(f"ridge options must be numbers: {error}") from error
        if not lambda_rel >= 0 or not np.isfinite(lambda_rel):
            raise InvalidSpecError(f"lambda_rel must be >= 0, got {self.lambda_rel}")
        if not cg_tol > 0:
            raise InvalidSpecError(f"cg_tol must be > 0, got {self.cg_tol}")
        cg_max_iter = self.cg_max_iter
        if cg_max_iter is not None:
            cg_max_iter = int(cg_max_iter)
            if cg_max_iter < 1:
                raise InvalidSpecError(f"cg_max_iter must be >= 1, got {cg_max_iter}")
        return RidgeConfig(
            lambda_rel=lambda_rel,
            solver=coerce_enum(RidgeSolver, self.solver, "ridge solver"),
            cg_tol=cg_tol,
            cg_max_iter=cg_max_iter,
        )

    def to_dict(self) -> Dict[str, Any]:
        cfg = self.validated()
        return {
            "lambda_rel": cfg.lambda_rel,
            "solver": cfg.solver.value,
            "cg_tol": cfg.cg_tol,
            "cg_max_iter": cfg.cg_max_iter,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RidgeConfig":
        try:
            cfg = cls(**{key: data[key] for key in cls._fields if key in data})
        except TypeError as error:
            raise InvalidSpecError(f"invalid ridge config: {error}") from error
        return cfg.validated()


def conjugate_gradient(
    matrix: np.ndarray, rhs: np.ndarray, tol: float = 1e-10, max_iter: Optional[int] = None
) -> Tuple[np.ndarray, int, float]:
    """Solve ``matrix @ X = rhs`` for a symmetric positive definite matrix.

    All right hand side columns are iterated together, a column stops once
    its residual norm is below ``tol`` times its right hand side norm.

    Parameters
    ----------
    matrix : np.ndarray
        n x n symmetric positive definite matrix
    rhs : np.ndarray
        n x k right hand sides
    tol : float, optional
        relative residual tolerance, by default 1e-10
    max_iter : int, optional
        iteration cap, by default 10 n

    Returns
    -------
    Tuple[np.ndarray, int, float]
        solution, performed iterations, largest relative residual

    Raises
    ------
    ConvergenceError
        If a column has not converged after max_iter iterations.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    vector = rhs.ndim == 1
    if vector:
        rhs = rhs[:, np.newaxis]
    size = matrix.shape[0]
    if max_iter is None:
        max_iter = 10 * size
    solution = np.zeros_like(rhs)
    residual = rhs.copy()
    direction = residual.copy()
    rhs_norms = np.linalg.norm(rhs, axis=0)
    # zero columns are solved by zero
    active = rhs_norms > 0
    thresholds = tol * rhs_norms
    rs_old = np.sum(residual * residual, axis=0)
    iterations = 0
    while active.any() and iterations < max_iter:
        iterations += 1
        product = matrix @ direction
        curvature = np.sum(direction * product, axis=0)
        alpha = np.where(active, rs_old / np.where(curvature > 0, curvature, 1.0), 0.0)
        solution += alpha * direction
        residual -= alpha * product
        rs_new = np.sum(residual * residual, axis=0)
        active &= np.sqrt(rs_new) > thresholds
        beta = np.where(active, rs_new / np.where(rs_old > 0, rs_old, 1.0), 0.0)
        direction = residual + beta * direction
        rs_old = rs_new
    with np.errstate(invalid="ignore", divide="ignore"):
        relative = np.where(rhs_norms > 0, np.sqrt(rs_old) / rhs_norms, 0.0)
    worst = float(relative.max()) if relative.size else 0.0
    if active.any():
        raise ConvergenceError("conjugate gradient did not converge", worst, iterations)
    if iterations > SLOW_CONVERGENCE_SHARE * max_iter:
        _LOGGER.warning(
            "conjugate gradient needed %d of %d iterations", iterations, max_iter
        )
    return (solution[:, 0] if vector else solution), iterations, worst


def fit_ridge(
    targets: np.ndarray, speckles: np.ndarray, cfg: RidgeConfig = RidgeConfig()
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fit the affine map ``x = W (y - y_mean) + x_mean`` by ridge regression.

    Parameters
    ----------
    targets : np.ndarray
        N x target_pixels flattened targets
    speckles : np.ndarray
        N x speckle_pixels flattened speckles
    cfg : RidgeConfig, optional
        regression options

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        W, x_mean, y_mean

    Raises
    ------
    InvalidArgumentError
        If fewer than 2 pairs are given.
    SolverError
        If the Cholesky factorization fails.
    ConvergenceError
        If conjugate gradient does not converge.
    """
    cfg = RidgeConfig(*cfg).validated()
    targets = np.asarray(targets, dtype=np.float64)
    speckles = np.asarray(speckles, dtype=np.float64)
    count, speckle_pixels = speckles.shape
    if count < 2:
        raise InvalidArgumentError(f"ridge training needs at least 2 pairs, got {count}")
    if count < speckle_pixels:
        warnings.warn(
            f"ridge training with {count} pairs for {speckle_pixels} speckle pixels "
            "is underdetermined, the ridge term decides the solution"
        )

    target_mean = targets.mean(axis=0)
    # constant pixels keep their exact value so their centered column is exactly zero
    constant = np.all(targets == targets[0], axis=0)
    target_mean[constant] = targets[0, constant]
    speckle_mean = speckles.mean(axis=0)
    centered_targets = targets - target_mean
    centered_speckles = speckles - speckle_mean

    s_yy = centered_speckles.T @ centered_speckles
    s_xy = centered_targets.T @ centered_speckles
    lambda_eff = cfg.lambda_rel * np.trace(s_yy) / speckle_pixels
    system = s_yy
    system[np.diag_indices_from(system)] += lambda_eff
    _LOGGER.debug(
        "ridge system %dx%d, lambda_eff=%.3e, %d constant target pixels",
        speckle_pixels,
        speckle_pixels,
        lambda_eff,
        int(constant.sum()),
    )

    if cfg.solver is RidgeSolver.CHOLESKY:
        try:
            factor = scipy.linalg.cho_factor(system)
        except np.linalg.LinAlgError as error:
            raise SolverError(
                f"Cholesky factorization failed ({error}), retry with a larger lambda_rel"
            ) from error
        weights_t = scipy.linalg.cho_solve(factor, s_xy.T)
    else:
        weights_t, iterations, residual = conjugate_gradient(
            system, s_xy.T, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter
        )
        _LOGGER.debug("conjugate gradient: %d iterations, residual %.3e", iterations, residual)
    _LOGGER.info("ridge solve (%s) finished, lambda_eff=%.3e", cfg.solver.value, lambda_eff)
    return weights_t.T, target_mean, speckle_mean


def train_ridge(dataset: Dataset, cfg: RidgeConfig = RidgeConfig()) -> LearnedMapping:
    """Train a RIDGE_AFFINE mapping on a dataset.

    Parameters
    ----------
    dataset : Dataset
        at least 2 pairs
    cfg : RidgeConfig, optional
        regression options

    Returns
    -------
    LearnedMapping
        mapping from speckle dims to target dims
    """
    count = len(dataset)
    weights, target_mean, speckle_mean = fit_ridge(
        dataset.targets().reshape(count, -1) if count else np.zeros((0, 1)),
        dataset.speckles().reshape(count, -1) if count else np.zeros((0, 1)),
        cfg,
    )
    return LearnedMapping(
        kind=MappingKind.RIDGE_AFFINE,
        in_dims=dataset.speckle_dims,
        out_dims=dataset.target_dims,
        params=(weights, target_mean, speckle_mean),
        training_fingerprint=dataset.fingerprint,
    )
