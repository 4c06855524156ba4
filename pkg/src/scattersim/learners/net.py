"""Module for the small fully connected network learner.

The network is ``flatten -> dense(hidden) -> ReLU -> dense(target) -> sigmoid``
trained with Adam on a weighted sum of MSE and soft Dice loss.
Gradients are computed analytically by reverse-mode differentiation.
"""
import logging
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.special import expit

from scattersim.datasets.builder import Dataset
from scattersim.learners.mapping import (
    EpochRecord,
    LearnedMapping,
    MappingKind,
    net_forward,
)
from scattersim.metrics import dice_coeff
from scattersim.util import (
    InvalidArgumentError,
    InvalidSpecError,
    ScatterSimError,
    make_rng,
)

_LOGGER = logging.getLogger(__name__)

MIN_TRAINING_PAIRS = 10


class DivergenceError(ScatterSimError):
    """Raised when the training loss becomes non-finite.

    Parameters
    ----------
    epoch : int
        epoch (starting at 1) of the failing batch
    batch : int
        batch index (starting at 0) within the epoch
    """

    category = "numerical"

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"training diverged in epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class NetConfig(NamedTuple):
    """Network and training options"""

    hidden_width: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 5
    dice_weight: float = 0.3
    validation_fraction: float = 0.1
    init_seed: int = 0

    def validated(self) -> "NetConfig":
        """Return a copy with checked and normalized values.

        Raises
        ------
        InvalidSpecError
            If an option is out of range.
        """
        for name in ("hidden_width", "batch_size", "max_epochs", "early_stop_patience"):
            if int(getattr(self, name)) < 1:
                raise InvalidSpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= float(self.dice_weight) <= 1.0:
            raise InvalidSpecError(f"dice_weight must lie in [0, 1], got {self.dice_weight}")
        if not 0.0 < float(self.validation_fraction) < 1.0:
            raise InvalidSpecError(
                f"validation_fraction must lie in (0, 1), got {self.validation_fraction}"
            )
        if not float(self.learning_rate) > 0:
            raise InvalidSpecError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= float(self.beta1) < 1.0 and 0.0 <= float(self.beta2) < 1.0):
            raise InvalidSpecError("Adam betas must lie in [0, 1)")
        return NetConfig(
            hidden_width=int(self.hidden_width),
            learning_rate=float(self.learning_rate),
            beta1=float(self.beta1),
            beta2=float(self.beta2),
            epsilon=float(self.epsilon),
            batch_size=int(self.batch_size),
            max_epochs=int(self.max_epochs),
            early_stop_patience=int(self.early_stop_patience),
            dice_weight=float(self.dice_weight),
            validation_fraction=float(self.validation_fraction),
            init_seed=int(self.init_seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return self.validated()._asdict()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetConfig":
        try:
            return cls(**{key: data[key] for key in cls._fields if key in data}).validated()
        except (TypeError, ValueError) as error:
            raise InvalidSpecError(f"invalid net config: {error}") from error


class NetParams(NamedTuple):
    """Weights and biases of the network"""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_params(in_pixels: int, hidden_width: int, out_pixels: int, seed: int) -> NetParams:
    """He initialization for the hidden layer, Xavier for the output layer."""
    rng = make_rng(seed, "init")
    w1 = rng.standard_normal((hidden_width, in_pixels)) * np.sqrt(2.0 / in_pixels)
    w2 = rng.standard_normal((out_pixels, hidden_width)) * np.sqrt(
        2.0 / (hidden_width + out_pixels)
    )
    return NetParams(w1, np.zeros(hidden_width), w2, np.zeros(out_pixels))


def soft_dice(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample soft Dice ``(2 sum(p x) + 1) / (sum(p^2) + sum(x^2) + 1)``."""
    numerator = 2.0 * np.sum(predictions * targets, axis=1) + 1.0
    denominator = np.sum(predictions**2, axis=1) + np.sum(targets**2, axis=1) + 1.0
    return numerator / denominator


def loss_value(
    params: Sequence[np.ndarray], speckles: np.ndarray, targets: np.ndarray, dice_weight: float
) -> float:
    """Loss ``(1 - w) MSE + w (1 - mean soft Dice)`` without gradients."""
    predictions = net_forward(params, speckles)
    mse = np.mean((predictions - targets) ** 2)
    dice = np.mean(soft_dice(predictions, targets))
    return float((1.0 - dice_weight) * mse + dice_weight * (1.0 - dice))


def loss_and_grads(
    params: Sequence[np.ndarray],
    speckles: np.ndarray,
    targets: np.ndarray,
    dice_weight: float,
) -> Tuple[float, NetParams]:
    """Loss and its analytic gradients for one batch.

    Parameters
    ----------
    params : Sequence[np.ndarray]
        (W1, b1, W2, b2)
    speckles : np.ndarray
        B x speckle_pixels network inputs
    targets : np.ndarray
        B x target_pixels ground truth
    dice_weight : float
        weight w of the Dice term

    Returns
    -------
    Tuple[float, NetParams]
        loss, gradient of every parameter
    """
    w1, b1, w2, b2 = params
    batch, pixels = targets.shape

    pre_hidden = speckles @ w1.T + b1
    hidden = np.maximum(pre_hidden, 0.0)
    predictions = expit(hidden @ w2.T + b2)

    residual = predictions - targets
    mse = np.mean(residual**2)
    numerator = 2.0 * np.sum(predictions * targets, axis=1) + 1.0
    denominator = np.sum(predictions**2, axis=1) + np.sum(targets**2, axis=1) + 1.0
    dice = numerator / denominator
    loss = (1.0 - dice_weight) * mse + dice_weight * (1.0 - np.mean(dice))

    d_predictions = (1.0 - dice_weight) * 2.0 * residual / (batch * pixels)
    d_dice = 2.0 * (targets - dice[:, np.newaxis] * predictions) / denominator[:, np.newaxis]
    d_predictions -= dice_weight * d_dice / batch
    d_logits = d_predictions * predictions * (1.0 - predictions)
    grad_w2 = d_logits.T @ hidden
    grad_b2 = d_logits.sum(axis=0)
    d_pre_hidden = (d_logits @ w2) * (pre_hidden > 0.0)
    grad_w1 = d_pre_hidden.T @ speckles
    grad_b1 = d_pre_hidden.sum(axis=0)
    return float(loss), NetParams(grad_w1, grad_b1, grad_w2, grad_b2)


class Adam:
    """Adam optimizer updating a list of arrays in place.

    Parameters
    ----------
    params : List[np.ndarray]
        parameters, updated in place by :meth:`step`
    learning_rate : float
        step size
    beta1 : float
        decay of the first moment estimate
    beta2 : float
        decay of the second moment estimate
    epsilon : float
        denominator offset
    """

    def __init__(
        self,
        params: List[np.ndarray],
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.steps = 0
        self._first = [np.zeros_like(param) for param in params]
        self._second = [np.zeros_like(param) for param in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for param, grad, first, second in zip(self.params, grads, self._first, self._second):
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad**2
            param -= (
                self.learning_rate
                * (first / correction1)
                / (np.sqrt(second / correction2) + self.epsilon)
            )


def mean_hard_dice(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean Dice coefficient of the binarized predictions."""
    if not len(predictions):
        return 0.0
    return float(
        np.mean([dice_coeff(pred, truth) for pred, truth in zip(predictions, targets)])
    )


def train_net(dataset: Dataset, cfg: NetConfig = NetConfig()) -> LearnedMapping:
    """Train a SMALL_NET mapping with Adam and Dice based early stopping.

    The inputs are standardized during training (per-pixel mean, global
    scale); the standardization is folded into the first layer of the
    returned mapping, which therefore operates on raw speckles.

    Parameters
    ----------
    dataset : Dataset
        at least 10 pairs
    cfg : NetConfig, optional
        network and training options

    Returns
    -------
    LearnedMapping
        parameters of the best validation epoch, with training history

    Raises
    ------
    InvalidArgumentError
        If the dataset has fewer than 10 pairs.
    DivergenceError
        If the loss becomes non-finite.
    """
    cfg = NetConfig(*cfg).validated()
    count = len(dataset)
    if count < MIN_TRAINING_PAIRS:
        raise InvalidArgumentError(
            f"net training needs at least {MIN_TRAINING_PAIRS} pairs, got {count}"
        )
    targets = dataset.targets().reshape(count, -1)
    speckles = dataset.speckles().reshape(count, -1)

    order = make_rng(cfg.init_seed, "split").permutation(count)
    n_validation = min(max(1, int(round(cfg.validation_fraction * count))), count - 1)
    validation, training = order[:n_validation], order[n_validation:]

    offset = speckles[training].mean(axis=0)
    scale = float(np.std(speckles[training] - offset))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    inputs = (speckles - offset) / scale

    params = list(
        init_params(speckles.shape[1], cfg.hidden_width, targets.shape[1], cfg.init_seed)
    )
    optimizer = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    shuffle_rng = make_rng(cfg.init_seed, "shuffle")

    def evaluate(epoch: int) -> EpochRecord:
        return EpochRecord(
            epoch=epoch,
            train_loss=loss_value(params, inputs[training], targets[training], cfg.dice_weight),
            validation_loss=loss_value(
                params, inputs[validation], targets[validation], cfg.dice_weight
            ),
            validation_dice=mean_hard_dice(
                net_forward(params, inputs[validation]), targets[validation]
            ),
        )

    history = [evaluate(0)]
    best = history[0]
    best_params = [param.copy() for param in params]
    stale_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        permutation = shuffle_rng.permutation(training)
        for batch, start in enumerate(range(0, len(permutation), cfg.batch_size)):
            rows = permutation[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(params, inputs[rows], targets[rows], cfg.dice_weight)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, batch)
            optimizer.step(grads)
        record = evaluate(epoch)
        history.append(record)
        _LOGGER.info(
            "epoch %d: train loss %.5f, validation loss %.5f, validation dice %.4f",
            epoch,
            record.train_loss,
            record.validation_loss,
            record.validation_dice,
        )
        improved = record.validation_dice > best.validation_dice or (
            record.validation_dice == best.validation_dice
            and record.validation_loss < best.validation_loss
        )
        if improved:
            best = record
            best_params = [param.copy() for param in params]
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.early_stop_patience:
                _LOGGER.info("early stopping after epoch %d", epoch)
                break

    w1, b1, w2, b2 = best_params
    folded_w1 = w1 / scale
    folded_b1 = b1 - folded_w1 @ offset
    _LOGGER.info(
        "training finished, best epoch %d with validation dice %.4f",
        best.epoch,
        best.validation_dice,
    )
    return LearnedMapping(
        kind=MappingKind.SMALL_NET,
        in_dims=dataset.speckle_dims,
        out_dims=dataset.target_dims,
        params=(folded_w1, folded_b1, w2, b2),
        training_fingerprint=dataset.fingerprint,
        history=history,
    )
