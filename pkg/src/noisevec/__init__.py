"""Noise-vector estimation for noise-aware acoustic front-ends.

An utterance's noise vector stacks its speech-frame mean on top of its
silence-frame mean.  This package estimates that vector offline, streaming,
or with MAP shrinkage under a coupled Gaussian prior, generates synthetic
corpora for calibration, and ships a CLI mirroring the library surface.
"""

from .errors import DataError, FormatError, NoiseVecError, NumericalError
from .features import (
    FeatureMatrix,
    Manifest,
    ManifestEntry,
    SadLabels,
    read_features,
    read_labels,
    read_manifest,
    write_features,
    write_labels,
    write_manifest,
)
from .sad import SadConfig, label_by_energy
from .estimators import (
    NoiseVector,
    StreamingMle,
    cmn_apply,
    format_noise_vector_line,
    nat_vector,
    offline_noise_vector,
    parse_noise_vector_line,
    read_noise_vectors,
    utt_mean,
    write_noise_vectors,
)
from .map_model import (
    R_MAX,
    R_MIN,
    R_POLICIES,
    R_POLICY_EM_EVERY_K,
    R_POLICY_FIXED_ONE,
    R_POLICY_GLOBAL,
    JointPriorStats,
    MapPosterior,
    NoisePrior,
    ScalingFactors,
    ScalingFit,
    StreamingMap,
    SufficientStats,
    accumulate_stats,
    em_update_scaling,
    estimate_global_scaling,
    fit_scaling,
    log_evidence,
    map_estimate,
    read_prior,
    reconstruct_joint,
    train_prior,
    write_prior,
)
from .synth import SynthConfig, iter_utterances, read_ground_truth, sample_corpus, sample_utterance
from .transform import AffineMap, apply_control_layer, identity_append, read_affine, write_affine
from .evaluation import (
    Trajectory,
    compare_estimators,
    convergence_summary,
    label_noise_sweep,
    trace_convergence,
)

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "DataError",
    "FeatureMatrix",
    "FormatError",
    "JointPriorStats",
    "Manifest",
    "ManifestEntry",
    "MapPosterior",
    "NoisePrior",
    "NoiseVecError",
    "NoiseVector",
    "NumericalError",
    "R_MAX",
    "R_MIN",
    "R_POLICIES",
    "R_POLICY_EM_EVERY_K",
    "R_POLICY_FIXED_ONE",
    "R_POLICY_GLOBAL",
    "SadConfig",
    "SadLabels",
    "ScalingFactors",
    "ScalingFit",
    "StreamingMap",
    "StreamingMle",
    "SufficientStats",
    "SynthConfig",
    "Trajectory",
    "accumulate_stats",
    "apply_control_layer",
    "cmn_apply",
    "compare_estimators",
    "convergence_summary",
    "em_update_scaling",
    "estimate_global_scaling",
    "fit_scaling",
    "format_noise_vector_line",
    "identity_append",
    "iter_utterances",
    "label_by_energy",
    "label_noise_sweep",
    "log_evidence",
    "map_estimate",
    "nat_vector",
    "offline_noise_vector",
    "parse_noise_vector_line",
    "read_affine",
    "read_features",
    "read_ground_truth",
    "read_labels",
    "read_manifest",
    "read_noise_vectors",
    "read_prior",
    "reconstruct_joint",
    "sample_corpus",
    "sample_utterance",
    "trace_convergence",
    "train_prior",
    "utt_mean",
    "write_affine",
    "write_features",
    "write_labels",
    "write_manifest",
    "write_noise_vectors",
    "write_prior",
]
