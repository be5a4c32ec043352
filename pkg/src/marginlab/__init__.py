"""marginlab: pairwise margin maximization and minimal-margin-score
batch selection for small classifiers, with a deterministic trainer."""

from ._kernels import BACKEND
from .data import (
    LabeledDataset,
    SplitSpec,
    SyntheticSpec,
    batch_iter,
    gen_synthetic,
    load_csv,
    load_idx,
    save_csv,
    split,
    standardize,
)
from .harness import (
    MetricsRecord,
    RunSummary,
    TrainConfig,
    TrainResult,
    compare_runs,
    evaluate,
    export_embeddings,
    load_checkpoint,
    lr_at,
    min_norm_margin,
    run_summary,
    save_checkpoint,
    train_run,
)
from .margin import (
    LinearHead,
    MarginRecord,
    competitive_class,
    mms,
    mms_batch,
    normalized_feature_margin,
    one_vs_all_distance,
    pairwise_distance,
    predict,
    score_batch,
    score_gap,
)
from .model import (
    Activation,
    Mlp,
    backward,
    extract_features,
    forward,
    init_mlp,
    sgd_step,
)
from .numkernel import RngStream, derive_seed
from .objective import (
    AlphaSchedule,
    GradientSet,
    ObjectiveConfig,
    ObjectiveValue,
    PhiMaxMode,
    RegKind,
    RiskKind,
    alpha_at,
    ce_risk,
    hinge_risk,
    objective_batch,
    objective_gradients,
    ova_reg,
    phi_max_norm,
    pmm_reg,
)
from .selector import SelectionConfig, SelectionMode, SelectionResult, select_mms, select_random

__version__ = "0.1.0"
