"""Ingestion of external target images."""
import logging
from pathlib import Path
from typing import List, Sequence, Union

from scattersim.datasets.generators import TargetFamily, TargetImage, make_target
from scattersim.datasets.idx import fit_to_dims
from scattersim.io.pgm import read_pgm
from scattersim.util import Dims, check_dims

_LOGGER = logging.getLogger(__name__)


def load_external(paths: Sequence[Union[str, Path]], dims: Dims) -> List[TargetImage]:
    """Read PGM images as EXTERNAL targets of dims.

    Images that fit into dims are center padded, larger ones are
    resized bilinearly.
    """
    dims = check_dims(dims)
    targets = [
        make_target(fit_to_dims(read_pgm(path), dims), TargetFamily.EXTERNAL)
        for path in paths
    ]
    _LOGGER.info("loaded %d external targets", len(targets))
    return targets
