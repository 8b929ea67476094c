"""Cognitive-fatigue classification from 4D fMRI.

A contrastive-pretraining pipeline: NIfTI I/O and dataset handling,
simplified preprocessing, seeded two-view augmentation, a CNN+LSTM
attention encoder, momentum-contrast pretraining with a key queue,
supervised fine-tuning with a linear head, k-fold evaluation, and a
synthetic-data harness that makes each stage verifiable at desk scale.
"""

__version__ = "0.1.0"

from .augment import AugmentConfig, ContrastiveViewMaker, ViewPair, make_view_pair, spatial_augment, temporal_crop
from .data import (
    DatasetIndex,
    FatigueClass,
    Group,
    ScanRecord,
    SplitSpec,
    Task,
    make_kfold,
    make_splits,
    read_manifest,
    score_to_class,
    write_manifest,
)
from .encoder import EncoderConfig, FatigueEncoder, attention_weights, encode, init_encoder, pooled_features
from .errors import (
    CogFatigueError,
    ConfigError,
    DomainError,
    FormatError,
    RangeError,
    ShapeError,
    SizeError,
    TrainingError,
    ValidationError,
)
from .finetune import (
    ClassifierModel,
    CrossValResult,
    FatigueClassifier,
    FinetuneConfig,
    cross_validate,
    evaluate,
    finetune,
    predict,
)
from .metrics import Metrics, emit_report, evaluate_predictions, format_mean_std
from .moco import (
    MocoPretrainer,
    MocoState,
    PretrainConfig,
    cosine_sim,
    enqueue_dequeue,
    info_nce,
    init_moco_state,
    lr_at,
    momentum_update,
    pretrain,
    pretrain_step,
)
from .nifti import load_nifti, save_nifti
from .preprocess import PreprocessConfig, Preprocessor, run_pipeline, spatial_smooth, temporal_znorm
from .synth import SynthSpec, baseline_oracle, generate_dataset, scan_external_dir
from .volume import VolumeSeries

__all__ = [name for name in dir() if not name.startswith("_")]
