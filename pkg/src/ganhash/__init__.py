"""Unsupervised GAN-based image hashing with Hamming retrieval tooling."""

from .config import RunConfig
from .evaluation import ablation_run, desk_experiment, evaluate, random_code_baseline
from .neighborhood import build_neighborhood, neighborhood_precision
from .networks import build_model, encode_images
from .retrieval import HammingIndex
from .synthetic import SyntheticDataset, make_synthetic_dataset
from .training import train

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "HammingIndex",
    "ablation_run",
    "build_model",
    "build_neighborhood",
    "desk_experiment",
    "encode_images",
    "evaluate",
    "make_synthetic_dataset",
    "neighborhood_precision",
    "random_code_baseline",
    "SyntheticDataset",
    "train",
    "__version__",
]
