"""Parametric contrastive learning for long-tailed data, in numpy."""

from .contrast import (
    ClassPriors,
    ContrastBatch,
    ContrastSet,
    DegenerateFeatureError,
    FeatureQueue,
    build_contrast_sets,
    class_priors_from_counts,
    expected_positives,
    l2_normalize,
    momentum_update,
    queue_push,
)
from .losses import (
    Decomposition,
    LossConfig,
    LossResult,
    batch_loss,
    cross_entropy,
    decompose_paco,
    evaluate_loss,
    info_nce,
    l_extra,
    multi_task_loss,
    paco_loss,
    paco_rebalanced_loss,
    supcon_at_fixed_psup,
    supcon_loss,
)

__version__ = "0.1.0"
