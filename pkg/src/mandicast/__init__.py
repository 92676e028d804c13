"""Direction forecasts for sparse multi-market produce price panels.

The pipeline: ingest raw feed CSVs into a canonical dataset, align the
series on a daily calendar with explicit missingness masks, window the
panel into mask-aware examples, train one small 3-class model per
(market, horizon) output, and evaluate with both raw and class-balanced
accuracy.  A single weight knob alpha trades the two.
"""
from .config import RunConfig, dump_config, load_config
from .errors import (
    ConfigError,
    DataError,
    FormatVersionError,
    LayoutMismatchError,
    MandicastError,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    SweepRow,
    TuneResult,
    alpha_sweep,
    confusion_from_labels,
    emit_curve_csv,
    emit_curve_svg,
    evaluate,
    format_report,
    tune,
)
from .ingest import (
    CanonicalDataset,
    ParseIssue,
    RawRecord,
    build_dataset,
    load_dataset,
    parse_csv,
    save_dataset,
)
from .learners import (
    ClassWeights,
    Forecast,
    ModelBank,
    ModelSpec,
    class_weights,
    explain,
    predict,
    predict_batch,
    train,
)
from .panel import (
    AlignedPanel,
    DirectionLabel,
    PriceObservation,
    PriceSeries,
    align,
    day_of_year,
    direction_of,
    missing_fraction,
)
from .serialize import load_model, save_model
from .synthgen import GroundTruth, SynthConfig, generate, reference_accuracy
from .windowing import (
    SplitSpec,
    WindowConfig,
    WindowExample,
    build_examples,
    feature_length,
    inference_features,
    layout_version,
    split_examples,
)

__version__ = "0.1.0"

__all__ = [
    "AlignedPanel",
    "CanonicalDataset",
    "ClassWeights",
    "ConfigError",
    "ConfusionMatrix",
    "DataError",
    "DirectionLabel",
    "EvalReport",
    "Forecast",
    "FormatVersionError",
    "GroundTruth",
    "LayoutMismatchError",
    "MandicastError",
    "ModelBank",
    "ModelSpec",
    "ParseIssue",
    "PriceObservation",
    "PriceSeries",
    "RawRecord",
    "RunConfig",
    "SplitSpec",
    "SweepRow",
    "SynthConfig",
    "TuneResult",
    "WindowConfig",
    "WindowExample",
    "align",
    "alpha_sweep",
    "build_dataset",
    "build_examples",
    "class_weights",
    "confusion_from_labels",
    "day_of_year",
    "direction_of",
    "dump_config",
    "emit_curve_csv",
    "emit_curve_svg",
    "evaluate",
    "explain",
    "feature_length",
    "format_report",
    "generate",
    "inference_features",
    "layout_version",
    "load_config",
    "load_dataset",
    "load_model",
    "missing_fraction",
    "parse_csv",
    "predict",
    "predict_batch",
    "reference_accuracy",
    "save_dataset",
    "save_model",
    "split_examples",
    "train",
    "tune",
    "__version__",
]
