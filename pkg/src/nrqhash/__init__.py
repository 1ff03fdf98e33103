"""Binary hashing with a relaxed-orthogonality projection and an orthogonal rotation."""

from .dataio import (
    BinaryCodeMatrix,
    FeatureMatrix,
    FormatError,
    LabelSet,
    PackedCodes,
    apply_center,
    center,
    load_codes,
    load_features,
    load_labels,
    load_model,
    pack_codes,
    save_codes,
    save_features,
    save_labels,
    save_model,
    unpack_codes,
)
from .hashcore import HashModel, LossRecord, TrainConfig, TrainerState, encode, train, train_itq
from .metrics import ANY_SHARED_LABEL, SINGLE_LABEL, RelevanceRule, RetrievalReport, evaluate
from .numopt import MaximizeResult, NonFiniteError, ObjectiveFn, SolverSettings, check_gradient, maximize
from .search import CodeDatabase, RankedList, hamming, rank_all

__version__ = "0.1.0"

__all__ = [
    "ANY_SHARED_LABEL",
    "BinaryCodeMatrix",
    "CodeDatabase",
    "FeatureMatrix",
    "FormatError",
    "HashModel",
    "LabelSet",
    "LossRecord",
    "MaximizeResult",
    "NonFiniteError",
    "ObjectiveFn",
    "PackedCodes",
    "RankedList",
    "RelevanceRule",
    "RetrievalReport",
    "SINGLE_LABEL",
    "SolverSettings",
    "TrainConfig",
    "TrainerState",
    "apply_center",
    "center",
    "check_gradient",
    "encode",
    "evaluate",
    "hamming",
    "load_codes",
    "load_features",
    "load_labels",
    "load_model",
    "maximize",
    "pack_codes",
    "rank_all",
    "save_codes",
    "save_features",
    "save_labels",
    "save_model",
    "train",
    "train_itq",
    "unpack_codes",
]
