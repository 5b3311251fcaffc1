"""Shared third/first-person embeddings learned with a frame selector."""

__version__ = "0.1.0"

from .errors import (ActorObserverError, ConfigError, ConstraintError, CorruptionError,
                     DegenerateVideoError, EmptyVideoError, FormatError,
                     InfeasiblePairError, IngestError, MalformedItemError,
                     MalformedPairError, ModeError, NumericError,
                     OrderingError, ScenarioMismatchError, ShapeError)
from .evaluation import (alignment_errors, average_precision, correspondence_accuracy,
                         nearest_neighbors, selector_informativeness, video_map,
                         zero_shot_map)
from .formats import (load_dataset, read_checkpoint, read_feature_file, write_checkpoint,
                      write_feature_file, write_synthetic)
from .model import ModelParameters
from .objective import RunningLossState, running_loss_update, triplet_loss
from .sampling import (EGO, THIRD, FrameRecord, SamplerConfig, TripletSample, Video, VideoPair,
                       cross_person_triplets, enumerate_test_triplets, sample_triplet)
from .selector import AccumulatorBank, VideoAccumulator, accumulator_update, video_softmax_exact
from .synthetic import SyntheticConfig, synthesize
from .training import TrainConfig, mixed_step, train, train_step

__all__ = [
    "AccumulatorBank",
    "ActorObserverError",
    "ConfigError",
    "ConstraintError",
    "CorruptionError",
    "DegenerateVideoError",
    "EGO",
    "EmptyVideoError",
    "FormatError",
    "FrameRecord",
    "InfeasiblePairError",
    "IngestError",
    "MalformedItemError",
    "MalformedPairError",
    "ModeError",
    "ModelParameters",
    "NumericError",
    "OrderingError",
    "RunningLossState",
    "SamplerConfig",
    "ScenarioMismatchError",
    "ShapeError",
    "SyntheticConfig",
    "THIRD",
    "TrainConfig",
    "TripletSample",
    "Video",
    "VideoAccumulator",
    "VideoPair",
    "accumulator_update",
    "alignment_errors",
    "average_precision",
    "correspondence_accuracy",
    "cross_person_triplets",
    "enumerate_test_triplets",
    "load_dataset",
    "mixed_step",
    "nearest_neighbors",
    "read_checkpoint",
    "read_feature_file",
    "running_loss_update",
    "sample_triplet",
    "selector_informativeness",
    "synthesize",
    "train",
    "train_step",
    "triplet_loss",
    "video_map",
    "video_softmax_exact",
    "write_checkpoint",
    "write_feature_file",
    "write_synthetic",
    "zero_shot_map",
]
