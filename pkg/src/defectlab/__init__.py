"""defectlab: human-in-the-loop active-learning workbench for binary image
defect classification."""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    DatasetManifest,
    PoolState,
    PreprocessConfig,
    Sample,
    init_pools,
    load_manifest,
    preprocess_image,
    save_manifest,
    scan_directory,
)
from .classifier import (  # noqa: F401
    Model,
    ModelConfig,
    TrainConfig,
    build_model,
    fine_tune,
    load_checkpoint,
    predict_label,
    predict_proba,
    save_checkpoint,
    train,
)
from .metrics import ConfusionMatrix, EvalReport, confusion, evaluate_model, roc_auc, summarize  # noqa: F401
from .active_learning import (  # noqa: F401
    ALConfig,
    ALSessionState,
    OracleAnnotator,
    QueryBatch,
    StopRule,
    history_stats,
    new_session,
    resume_session,
    run_with_oracle,
    save_session,
    select_query,
    step,
    submit_labels,
    uncertainty_scores,
)
from .autolabel import AutoLabelReport, autolabel, export_labeled  # noqa: F401
from .sweep import GridSpec, SweepResult, render_report, run_sweep  # noqa: F401
