"""Supervised bilinear hashing for matrix-form features.

Learns compact binary codes with two-sided discriminant projections and a
discrete alternating optimizer, encodes out-of-sample queries, and benchmarks
Hamming-ranking retrieval against random-projection and random-rotation
baselines.
"""

from .baselines import (
    BpbcModel,
    LshModel,
    bpbc_encode,
    bpbc_model,
    bpbc_objective,
    lsh_encode,
    lsh_model,
    random_orthonormal,
)
from .encoder import encode
from .evaluation import (
    RankingResult,
    ZeroRelevantError,
    average_precision,
    evaluate_retrieval,
    hamming_distance,
    mean_average_precision,
    pr_curve,
    precision_at_k,
    rank_database,
    recall_at_k,
)
from .io import (
    DataFormatError,
    load_any_model,
    load_b2f,
    load_codes,
    load_idx,
    load_model,
    save_b2f,
    save_codes,
    save_model,
    split_dataset,
    synth_multilabel,
)
from .projection import (
    ClassStatistics,
    EigenSolverError,
    ScatterPair,
    class_statistics,
    discriminant_traces,
    fit_bilinear,
    project_features,
    scatter_for_left,
    scatter_for_right,
    top_discriminant_directions,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    TrainState,
    objective_value,
    train,
    update_classifier,
    update_code_regression,
    update_code_row,
    update_codes,
)
from .types import (
    BilinearHashModel,
    CodeMatrix,
    FeatureTensor,
    LabelMatrix,
    ModelHyper,
    PackedCodes,
    pack_codes,
    sign,
    unpack_codes,
    unvectorize,
    vectorize,
)

__version__ = "0.1.0"
