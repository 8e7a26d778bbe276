"""Desk-scale laboratory for identity-aligned masked flow matching.

The package trains a small conditional flow-matching model on synthetic
identity-bearing sequences, optionally pulls its intermediate layers
toward a frozen identity encoder with a time-adaptive weighting, and
measures the effect with neighborhood-based representation alignment.
"""

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    IntegrityError,
    NumericError,
    ShapeMismatchError,
    TrainingDiagnosticsError,
)
from .tensor import Tensor, no_grad, check_gradients
from .optim import AdamW, cosine_warmup_lr
from .synth import (
    DatasetConfig,
    SynthDataset,
    generate_dataset,
    make_batch,
    read_manifest,
    write_manifest,
)
from .encoder import EncoderConfig, SpeakerEncoder, train_encoder
from .flow import FlowConfig, FlowModel, cfm_loss, make_interpolant, sample
from .alignment import AlignConfig, AlignmentHead
from .cknna import cknna, layer_alignment
from .harness import ExperimentConfig, TrainConfig, Workspace, run_ablation, train_run

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AlignConfig",
    "AlignmentHead",
    "ConfigurationError",
    "DatasetConfig",
    "DegenerateInputError",
    "DomainError",
    "EncoderConfig",
    "ExperimentConfig",
    "FlowConfig",
    "FlowModel",
    "IntegrityError",
    "NumericError",
    "ShapeMismatchError",
    "SpeakerEncoder",
    "SynthDataset",
    "Tensor",
    "TrainConfig",
    "TrainingDiagnosticsError",
    "Workspace",
    "cfm_loss",
    "check_gradients",
    "cknna",
    "cosine_warmup_lr",
    "generate_dataset",
    "layer_alignment",
    "make_batch",
    "make_interpolant",
    "no_grad",
    "read_manifest",
    "run_ablation",
    "sample",
    "train_encoder",
    "train_run",
    "write_manifest",
    "__version__",
]
