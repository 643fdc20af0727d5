"""Binary image classifier built from scratch: a YOLO-style Conv/C2f backbone
with hand-written backpropagation, four first-order optimizers, PR-curve
metrics, and exact t-SNE visualization, exposed as a library plus CLI."""

from .data import DatasetManifest, batches, decode_image, generate_synthetic, load_manifest
from .metrics import (
    ConfusionMatrix2,
    MetricsReport,
    accuracy,
    average_precision,
    confusion,
    f1,
    precision,
    recall,
    report,
)
from .net import Network, NetworkSpec, build_network
from .optim import (
    OptimizerState,
    TrainHyper,
    adam_step,
    adamw_step,
    make_optimizer,
    rmsprop_step,
    sgd_step,
)
from .tsne import AffinityMatrix, EmbeddingResult, conditional_affinities, kl_divergence, tsne_embed

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "ConfusionMatrix2",
    "DatasetManifest",
    "EmbeddingResult",
    "MetricsReport",
    "Network",
    "NetworkSpec",
    "OptimizerState",
    "TrainHyper",
    "accuracy",
    "adam_step",
    "adamw_step",
    "average_precision",
    "batches",
    "build_network",
    "conditional_affinities",
    "confusion",
    "decode_image",
    "f1",
    "generate_synthetic",
    "kl_divergence",
    "load_manifest",
    "make_optimizer",
    "precision",
    "recall",
    "report",
    "rmsprop_step",
    "sgd_step",
    "tsne_embed",
]
