"""Implicit maximum likelihood estimation for one-to-many prediction."""
from .data import GMMSpec, MnistSet, PairedDataset, PCAModel, ring_gmm, sample_gmm
from .imle import (
    TrainConfig,
    hierarchical_select,
    imle_loss_conditional,
    imle_loss_unconditional,
    train_conditional,
    train_progressive,
    train_unconditional,
    traverse_latent,
)
from .metrics import L2Metric, PerceptualProxy, faithfulness_weighted_variance, frechet_feature_distance, mode_coverage
from .models import Generator, GeneratorConfig, ProgressiveGenerator, sample_latent
from .tensor import Tensor

__version__ = "0.1.0"
