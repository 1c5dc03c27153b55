"""Antibody binding-affinity classifier: a miniature decoder-style
transformer trained with stratified k-fold cross-validation."""

from abaffinity._core import (  # noqa: F401
    Checkpoint,
    ConfusionMatrix,
    CvResult,
    Dataset,
    FoldAssignment,
    FoldReport,
    MetricsReport,
    ModelConfig,
    RocCurve,
    RocPoint,
    TokenizedSample,
    TrainConfig,
    TrainResult,
    Vocabulary,
    __version__,
    accuracy,
    average_report,
    build_vocabulary,
    confusion,
    cross_validate,
    detokenize,
    evaluate,
    f1_score,
    fold_reports_to_json,
    fold_reports_to_table,
    load_checkpoint,
    load_jsonl,
    precision,
    predict_proba,
    recall,
    roc_auc,
    roc_curve,
    save_jsonl,
    stratified_kfold,
    synth_generate,
    tokenize,
    train_fold,
)
