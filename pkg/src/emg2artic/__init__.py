"""Articulatory feature prediction from surface EMG at desk scale.

The package covers the whole loop: synthetic corpus generation with a
known electrode-to-feature dependency matrix, EMG preprocessing,
a convolutional-transformer encoder with its own reverse-mode autodiff,
multi-task training, Pearson evaluation with bootstrap intervals, and
per-electrode ablation studies. `emg2artic --help` drives it end to end.
"""

__version__ = "0.1.0"

from .ablation import (
    AblationCondition,
    AblationSweep,
    ElectrodeSet,
    Heatmap,
    SubsetSelection,
    build_heatmap,
    full_condition,
    mask_electrodes,
    remove_one,
    run_condition,
    run_sweep,
    select_subset,
    subset_condition,
    use_only_one,
)
from .eval_metrics import (
    CorrelationReport,
    UtterancePrediction,
    bootstrap_ci,
    drop_rate,
    evaluate,
    pearson,
)
from .feature_targets import (
    EMA_DIM_NAMES,
    EMA_SENSORS,
    N_EMA_DIMS,
    ArticulatoryTrack,
    PhonemeTrack,
)
from .model import (
    EncoderConfig,
    LossWeights,
    ModelParams,
    encode,
    encode_batch,
    frame_length,
    full_scale_config,
    init_params,
    predict,
    total_loss,
)
from .signal_prep import (
    PreprocessConfig,
    PreprocessedEmg,
    RawEmgRecording,
    preprocess_recording,
)
from .synth_data import DependencyMatrix, SynthConfig, gen_corpus, gen_utterance
from .trainer import (
    TrainConfig,
    TrainResult,
    load_checkpoint,
    make_train_item,
    predict_items,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "AblationCondition",
    "AblationSweep",
    "ArticulatoryTrack",
    "CorrelationReport",
    "DependencyMatrix",
    "ElectrodeSet",
    "EMA_DIM_NAMES",
    "EMA_SENSORS",
    "EncoderConfig",
    "Heatmap",
    "LossWeights",
    "ModelParams",
    "N_EMA_DIMS",
    "PhonemeTrack",
    "PreprocessConfig",
    "PreprocessedEmg",
    "RawEmgRecording",
    "SubsetSelection",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "UtterancePrediction",
    "bootstrap_ci",
    "build_heatmap",
    "drop_rate",
    "encode",
    "encode_batch",
    "evaluate",
    "frame_length",
    "full_condition",
    "full_scale_config",
    "gen_corpus",
    "gen_utterance",
    "init_params",
    "load_checkpoint",
    "make_train_item",
    "mask_electrodes",
    "pearson",
    "predict",
    "predict_items",
    "preprocess_recording",
    "remove_one",
    "run_condition",
    "run_sweep",
    "save_checkpoint",
    "select_subset",
    "subset_condition",
    "total_loss",
    "train",
    "use_only_one",
]
