"""Attention-guided, fairness-aware skin lesion classification toolkit.

The pieces: grouped fairness metrics (equalized odds family, AUROC/AUPRC,
confidence intervals), a soft-guidance attention loss that aligns model
attention with lesion masks, a desk-scale residual attention network, a
bi-objective Pareto frontier for model selection, a synthetic shortcut-bias
data generator plus HAM/BCN-style ingestion, a reproducible training
harness, and attention-alignment analysis tools.
"""

from .analysis import (
    AlignmentStats,
    ReportBundle,
    alignment_stats,
    binarize_attention,
    iou,
    plot_curves,
    render_overlay,
)
from .data import (
    DatasetSplit,
    LabeledImage,
    SyntheticSpec,
    dataset_summary,
    generate_synthetic,
    load_dataset_dir,
    load_real_dataset,
    save_dataset,
    split_dataset,
)
from .guidance import (
    attention_loss,
    attention_loss_gradient,
    cosine_alignment,
    soften_mask,
)
from .metrics import (
    FairnessReport,
    GroupedPredictions,
    auprc,
    auroc,
    confidence_interval,
    equalized_odds,
    fairness_report,
    group_rates,
)
from .model import (
    RANN,
    ForwardOutput,
    ModelConfig,
    apply_attention,
    lesion_only_input,
    load_checkpoint,
    save_checkpoint,
)
from .pareto import (
    ModelCandidate,
    ParetoSet,
    dominates,
    pareto_frontier,
    select_final,
)
from .training import (
    RunRecord,
    TrainConfig,
    best_configuration,
    emit_candidates,
    evaluate,
    grid_search,
    train,
)

__version__ = "0.1.0"
