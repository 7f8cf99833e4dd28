"""Benchmark tooling for few-shot object detection with foundation models.

K-shot split generation, cohort-aware COCO-style AP, federated loss
mathematics (FedLoss sampling, pseudo-negative class selection) and
synonym-averaged prompt classification.
"""

from .dataset import (
    Annotation,
    BBox,
    Category,
    Dataset,
    FrequencyCohort,
    assign_cohorts,
    class_frequencies,
    load_dataset,
)
from .errors import DegenerateEmbeddingError, FsodError, ParseError, ValidationError
from .evaluation import Detection, EvalConfig, EvalResult, average_precision, evaluate, iou
from .fedloss import (
    ClassSubset,
    LossReport,
    federated_bce,
    finite_difference_check,
    get_negatives,
    pseudo_positive_filter,
    sample_fedloss_subset,
    select_classes,
)
from .prompts import class_embedding, classify, load_embeddings
from .splits import SplitSpec, best_split, build_test_subset, read_split, sample_kshot_split, write_split

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BBox",
    "Category",
    "ClassSubset",
    "Dataset",
    "DegenerateEmbeddingError",
    "Detection",
    "EvalConfig",
    "EvalResult",
    "FrequencyCohort",
    "FsodError",
    "LossReport",
    "ParseError",
    "SplitSpec",
    "ValidationError",
    "assign_cohorts",
    "average_precision",
    "best_split",
    "build_test_subset",
    "class_embedding",
    "class_frequencies",
    "classify",
    "evaluate",
    "federated_bce",
    "finite_difference_check",
    "get_negatives",
    "iou",
    "load_dataset",
    "load_embeddings",
    "pseudo_positive_filter",
    "read_split",
    "sample_fedloss_subset",
    "sample_kshot_split",
    "select_classes",
    "write_split",
]
