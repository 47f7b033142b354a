"""Deterministic binary-mask L0 regularization for small neural networks.

Binary masks quantized from real-valued latent weights multiply network
weights or input features; the latent weights train jointly with the
network through an identity straight-through gradient. On top of that sit
input-feature selection with smoothed masks and an exact-count penalty
search, plus L1/L2/dropout baselines for regularizer comparisons.
"""

from .data import (
    Dataset,
    SplitSpec,
    duplicate_to_min_batches,
    load_cache,
    load_csv,
    normalize,
    save_cache,
    split_dataset,
    synth_overfit_prone,
    synth_planted_features,
)
from .errors import BinMaskError, ConfigError, DataError, NumericalError, StateError
from .experiment import load_config, run_experiment, run_gradcheck, validate_config
from .fselect import (
    RetrainEval,
    SearchError,
    SelectionProtocol,
    SelectionResult,
    retrain_eval,
    search_lambda,
    select_by_lambda,
    select_exact_k,
)
from .mask import (
    MaskState,
    mask_converged,
    penalty_grad,
    penalty_value,
    quantize,
    ste_backward,
    warmup_epochs,
)
from .masking import (
    InputBinding,
    MaskSpec,
    WeightBinding,
    apply_mask,
    mask_grad,
    weight_grad_through_mask,
)
from .nn import (
    LayerSpec,
    LossKind,
    Mode,
    Network,
    Param,
    accuracy,
    build_mlp,
    finite_diff_grad,
    loss_and_grad,
    predict_scores,
)
from .optim import SGD, Adam, AdamW, CosineSchedule, cosine_lr
from .report import TrialAggregate, aggregate, auc, ci95
from .train import (
    ClassifierSpec,
    EpochMetrics,
    TrainConfig,
    TrainResult,
    early_stop_select,
    train,
    train_with_l1,
    weight_norm_report,
)

__version__ = "0.1.0"
