"""Package for simulating learned imaging through scattering media.

Simulated transmission media turn target images into speckle patterns,
learned mappings reconstruct the targets, and the experiments show how
the coverage and grayscale diversity of the training set decide how
well a mapping generalizes.

Examples
--------
For example usage please refer to the README and the command line help
of ``scattersim``.
"""


from scattersim.media import (
    MediumKind,
    MediumSpec,
    TransmissionMedium,
    generate_medium,
    propagate,
    exact_inverse,
    bin_speckle,
)
from scattersim.datasets.generators import TargetFamily, TargetImage, gen_digit, gen_texture
from scattersim.datasets.builder import CaseRecipe, Dataset, DatasetSpec, build_dataset
from scattersim.datasets.idx import load_idx, dump_idx
from scattersim.learners.mapping import LearnedMapping, MappingKind, predict
from scattersim.learners.ridge import RidgeConfig
from scattersim.learners.net import NetConfig
from scattersim.learners.training import train
from scattersim.metrics import pcc, ssim, cosine, dice_coeff
from scattersim.diagnostics import superpose, pixel_histograms
from scattersim.experiments import CaseId, ExperimentConfig, run_case, compare_cases, run_all
from scattersim.util import ScatterSimError, tool_version

__version__ = tool_version()

__all__ = [
    "MediumKind",
    "MediumSpec",
    "TransmissionMedium",
    "generate_medium",
    "propagate",
    "exact_inverse",
    "bin_speckle",
    "TargetFamily",
    "TargetImage",
    "gen_digit",
    "gen_texture",
    "CaseRecipe",
    "Dataset",
    "DatasetSpec",
    "build_dataset",
    "load_idx",
    "dump_idx",
    "LearnedMapping",
    "MappingKind",
    "predict",
    "RidgeConfig",
    "NetConfig",
    "train",
    "pcc",
    "ssim",
    "cosine",
    "dice_coeff",
    "superpose",
    "pixel_histograms",
    "CaseId",
    "ExperimentConfig",
    "run_case",
    "compare_cases",
    "run_all",
    "ScatterSimError",
]
