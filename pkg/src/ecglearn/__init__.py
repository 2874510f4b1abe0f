"""12-lead ECG multilabel classification with gradient-boosted tree ensembles."""

from .boosting import (
    BoostedModel, BoostedTreesClassifier, GbdtParams, fit_boosted, importance_gain,
    predict_proba,
)
from .extract import EcgFeatureExtractor, PrepConfig
from .io import EcgRecord
from .labels import LabelTable, default_label_table
from .pipeline import RunConfig, TwoPhaseEcgClassifier, run_once, run_repeated
from .synth import ClassSpec, SynthSpec, generate_dataset, generate_record

__version__ = "0.1.0"

__all__ = [
    "BoostedModel", "BoostedTreesClassifier", "GbdtParams", "fit_boosted",
    "importance_gain", "predict_proba", "EcgFeatureExtractor", "PrepConfig",
    "EcgRecord", "LabelTable", "default_label_table", "RunConfig",
    "TwoPhaseEcgClassifier", "run_once", "run_repeated", "ClassSpec",
    "SynthSpec", "generate_dataset", "generate_record", "__version__",
]
