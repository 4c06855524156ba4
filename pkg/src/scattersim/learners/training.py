"""Dispatch between the available learners."""
import logging
from typing import Optional, Union

from scattersim.datasets.builder import Dataset
from scattersim.learners.mapping import LearnedMapping, MappingKind
from scattersim.learners.net import NetConfig, train_net
from scattersim.learners.ridge import RidgeConfig, train_ridge
from scattersim.util import InvalidSpecError, coerce_enum

_LOGGER = logging.getLogger(__name__)


def train(
    dataset: Dataset,
    learner: Union[MappingKind, str] = MappingKind.RIDGE_AFFINE,
    cfg: Optional[Union[RidgeConfig, NetConfig]] = None,
) -> LearnedMapping:
    """Train the chosen learner on dataset.

    Parameters
    ----------
    dataset : Dataset
        training pairs
    learner : MappingKind or str, optional
        "ridge" or "net", by default ridge
    cfg : RidgeConfig or NetConfig, optional
        options of the learner, defaults if None

    Returns
    -------
    LearnedMapping
        the trained mapping

    Raises
    ------
    InvalidSpecError
        If cfg does not belong to learner.
    """
    learner = coerce_enum(MappingKind, learner, "learner")
    _LOGGER.info("training %s on %d pairs", learner.value, len(dataset))
    if learner is MappingKind.RIDGE_AFFINE:
        if cfg is None:
            cfg = RidgeConfig()
        if not isinstance(cfg, RidgeConfig):
            raise InvalidSpecError("the ridge learner needs a RidgeConfig")
        return train_ridge(dataset, cfg)
    if cfg is None:
        cfg = NetConfig()
    if not isinstance(cfg, NetConfig):
        raise InvalidSpecError("the net learner needs a NetConfig")
    return train_net(dataset, cfg)
