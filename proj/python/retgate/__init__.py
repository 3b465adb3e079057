"""Retrieval gating from hidden-state features."""

from ._retgate import (
    ClassifierModel,
    Error,
    FeatureRecord,
    IoError,
    ParseError,
    SweepGrid,
    ValidationError,
    assemble,
    compare_policies,
    decide,
    derive_label,
    evaluate,
    gate,
    generate,
    generate_layers,
    gradient_check,
    load_records,
    max_pool,
    mean_pool,
    oracle_policy_accuracies,
    run_cli,
    save_records,
    sweep,
    train,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
