"""Coupled Gaussian prior over per-utterance class means and MAP estimation.

The generative picture: each utterance ``i`` owns a silence mean drawn around
a corpus-level silence mean, and a speech mean drawn around an affine
function of that utterance's silence mean,

    silence_mean_i ~ N(silence_mean, silence_precision^-1)
    speech_mean_i  ~ N(speech_offset + coupling @ silence_mean_i, speech_precision^-1)

while frames scatter around their class mean with a per-utterance multiplier
``r`` on the class precision.  Because everything is Gaussian the posterior
over the stacked means ``[speech; silence]`` given a few frames is Gaussian
too; its precision ``K`` and linear term ``Q`` are assembled from sufficient
statistics, and the MAP estimate is the solve ``K^-1 Q``.  An EM loop fits
the ``r`` multipliers when they are not known.

All solves go through Cholesky factorizations; matrices that must be
positive definite raise :class:`NumericalError` when they are not.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, FormatError, NumericalError
from .features import FeatureMatrix, SadLabels, format_float, validate_pair
from .estimators import NoiseVector

# Scaling factors are clamped to this range; values at the edges signal
# degenerate data rather than a genuinely huge or tiny precision multiplier.
R_MIN = 1e-6
R_MAX = 1e6

R_POLICY_FIXED_ONE = "fixed_one"
R_POLICY_GLOBAL = "global"
R_POLICY_EM_EVERY_K = "per_utterance_em_every_k"
R_POLICIES = (R_POLICY_FIXED_ONE, R_POLICY_GLOBAL, R_POLICY_EM_EVERY_K)


# ---------------------------------------------------------------------------
# small linear-algebra helpers
# ---------------------------------------------------------------------------

def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0


def _validated_symmetric(matrix: np.ndarray, what: str, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DataError(f"{what} must be square, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DataError(f"{what} must be {dim}x{dim}, got {arr.shape[0]}x{arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    scale = np.abs(arr).max() + 1e-300
    if np.abs(arr - arr.T).max() > 1e-8 * scale:
        raise DataError(f"{what} is not symmetric")
    return _symmetrize(arr)


def _spd_factor(matrix: np.ndarray, what: str):
    try:
        return cho_factor(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None


def _spd_inverse(matrix: np.ndarray, what: str) -> np.ndarray:
    factor = _spd_factor(matrix, what)
    inverse = cho_solve(factor, np.eye(matrix.shape[0]), check_finite=False)
    return _symmetrize(inverse)


def _spd_logdet(matrix: np.ndarray, what: str) -> float:
    factor, _ = _spd_factor(matrix, what)
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointPriorStats:
    """Mean, covariance and precision of the stacked per-utterance means.

    Layout is speech block first, silence block second, so all arrays are
    sized ``2d`` / ``2d x 2d`` for per-class dimension ``d``.
    """

    joint_mean: np.ndarray
    joint_cov: np.ndarray
    joint_precision: np.ndarray
    num_utterances: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.joint_mean, dtype=np.float64)
        if mean.ndim != 1 or mean.size % 2 != 0 or mean.size == 0:
            raise DataError(f"joint mean must be 1-D of even length, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise DataError("joint mean contains non-finite values")
        cov = _validated_symmetric(self.joint_cov, "joint covariance", mean.size)
        prec = _validated_symmetric(self.joint_precision, "joint precision", mean.size)
        if self.num_utterances < 0:
            raise DataError("num_utterances must be >= 0")
        object.__setattr__(self, "joint_mean", mean)
        object.__setattr__(self, "joint_cov", cov)
        object.__setattr__(self, "joint_precision", prec)

    @property
    def dim(self) -> int:
        """Per-class dimension ``d`` (the stacked arrays are ``2d``)."""
        return self.joint_mean.size // 2


@dataclass(frozen=True)
class NoisePrior:
    """Factored form of the joint prior, as consumed by the MAP solve.

    Attributes
    ----------
    silence_mean : (d,) array
        Corpus-level mean of the per-utterance silence means.
    speech_offset : (d,) array
        Offset of the conditional mean of the speech means: the expected
        speech mean of an utterance is ``speech_offset + coupling @ sm_i``
        where ``sm_i`` is that utterance's silence mean.
    coupling : (d, d) array
        Linear map from an utterance's silence mean into its speech mean.
    speech_precision : (d, d) array
        Conditional precision of the speech means given the silence mean.
    silence_precision : (d, d) array
        Marginal precision of the silence means.
    r_speech, r_silence : float
        Corpus-level likelihood scaling factors (precision multipliers)
        estimated at training time; per-utterance EM may override them.
    """

    silence_mean: np.ndarray
    speech_offset: np.ndarray
    coupling: np.ndarray
    speech_precision: np.ndarray
    silence_precision: np.ndarray
    r_speech: float = 1.0
    r_silence: float = 1.0

    def __post_init__(self) -> None:
        sm = np.asarray(self.silence_mean, dtype=np.float64)
        off = np.asarray(self.speech_offset, dtype=np.float64)
        if sm.ndim != 1 or sm.size == 0 or off.shape != sm.shape:
            raise DataError(
                f"silence mean / speech offset must be equally sized vectors, "
                f"got {sm.shape} / {off.shape}"
            )
        if not (np.all(np.isfinite(sm)) and np.all(np.isfinite(off))):
            raise DataError("prior mean vectors contain non-finite values")
        d = sm.size
        coupling = np.asarray(self.coupling, dtype=np.float64)
        if coupling.shape != (d, d):
            raise DataError(f"coupling must be {d}x{d}, got shape {coupling.shape}")
        if not np.all(np.isfinite(coupling)):
            raise DataError("coupling contains non-finite values")
        sp = _validated_symmetric(self.speech_precision, "speech precision", d)
        si = _validated_symmetric(self.silence_precision, "silence precision", d)
        _spd_factor(sp, "speech precision")
        _spd_factor(si, "silence precision")
        for name in ("r_speech", "r_silence"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DataError(f"{name} must be finite and > 0, got {value}")
        object.__setattr__(self, "silence_mean", sm)
        object.__setattr__(self, "speech_offset", off)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "speech_precision", sp)
        object.__setattr__(self, "silence_precision", si)

    @property
    def dim(self) -> int:
        return self.silence_mean.size

    @property
    def joint_mean(self) -> np.ndarray:
        """Mean of the stacked ``[speech; silence]`` vector under the prior."""
        return np.concatenate(
            [self.speech_offset + self.coupling @ self.silence_mean, self.silence_mean]
        )

    @property
    def scaling(self) -> "ScalingFactors":
        return ScalingFactors(self.r_speech, self.r_silence)


@dataclass(frozen=True)
class SufficientStats:
    """Per-class frame count, frame sum, and outer-product sum for one utterance."""

    speech_count: int
    silence_count: int
    speech_sum: np.ndarray
    silence_sum: np.ndarray
    speech_outer: np.ndarray
    silence_outer: np.ndarray

    def __post_init__(self) -> None:
        ssum = np.asarray(self.speech_sum, dtype=np.float64)
        nsum = np.asarray(self.silence_sum, dtype=np.float64)
        if ssum.ndim != 1 or nsum.shape != ssum.shape or ssum.size == 0:
            raise DataError("sum vectors must be equally sized 1-D arrays")
        d = ssum.size
        souter = _validated_symmetric(self.speech_outer, "speech outer-product sum", d)
        nouter = _validated_symmetric(self.silence_outer, "silence outer-product sum", d)
        if self.speech_count < 0 or self.silence_count < 0:
            raise DataError("frame counts must be non-negative")
        for count, vec, mat, what in (
            (self.speech_count, ssum, souter, "speech"),
            (self.silence_count, nsum, nouter, "silence"),
        ):
            if count == 0 and (np.any(vec != 0) or np.any(mat != 0)):
                raise DataError(f"zero {what} frames but non-zero {what} statistics")
        if not (np.all(np.isfinite(ssum)) and np.all(np.isfinite(nsum))):
            raise DataError("sum vectors contain non-finite values")
        object.__setattr__(self, "speech_sum", ssum)
        object.__setattr__(self, "silence_sum", nsum)
        object.__setattr__(self, "speech_outer", souter)
        object.__setattr__(self, "silence_outer", nouter)

    @classmethod
    def zeros(cls, dim: int) -> "SufficientStats":
        z = np.zeros(dim)
        zz = np.zeros((dim, dim))
        return cls(0, 0, z.copy(), z.copy(), zz.copy(), zz.copy())

    @property
    def dim(self) -> int:
        return self.speech_sum.size

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        if other.dim != self.dim:
            raise DataError(f"cannot merge stats of dimension {self.dim} and {other.dim}")
        return SufficientStats(
            self.speech_count + other.speech_count,
            self.silence_count + other.silence_count,
            self.speech_sum + other.speech_sum,
            self.silence_sum + other.silence_sum,
            self.speech_outer + other.speech_outer,
            self.silence_outer + other.silence_outer,
        )


@dataclass(frozen=True)
class ScalingFactors:
    """Per-class likelihood precision multipliers."""

    r_speech: float
    r_silence: float

    def __post_init__(self) -> None:
        for name in ("r_speech", "r_silence"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DataError(f"{name} must be finite and > 0, got {value}")


@dataclass(frozen=True)
class MapPosterior:
    """Gaussian posterior over the stacked ``[speech; silence]`` means."""

    mean: np.ndarray
    precision: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or mean.size % 2 != 0 or mean.size == 0:
            raise DataError(f"posterior mean must be 1-D of even length, got {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise DataError("posterior mean contains non-finite values")
        prec = _validated_symmetric(self.precision, "posterior precision", mean.size)
        cov = _validated_symmetric(self.covariance, "posterior covariance", mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size // 2

    @property
    def speech_mean(self) -> np.ndarray:
        return self.mean[: self.dim]

    @property
    def silence_mean(self) -> np.ndarray:
        return self.mean[self.dim :]


# ---------------------------------------------------------------------------
# statistics accumulation and prior training
# ---------------------------------------------------------------------------

def accumulate_stats(features: FeatureMatrix, labels: SadLabels) -> SufficientStats:
    """Sufficient statistics (count, sum, outer-product sum) per class."""
    validate_pair(features, labels)
    mask = labels.speech
    speech = features.frames[mask]
    silence = features.frames[~mask]
    return SufficientStats(
        speech_count=speech.shape[0],
        silence_count=silence.shape[0],
        speech_sum=speech.sum(axis=0) if speech.size else np.zeros(features.dim),
        silence_sum=silence.sum(axis=0) if silence.size else np.zeros(features.dim),
        speech_outer=_symmetrize(speech.T @ speech)
        if speech.size
        else np.zeros((features.dim, features.dim)),
        silence_outer=_symmetrize(silence.T @ silence)
        if silence.size
        else np.zeros((features.dim, features.dim)),
    )


def train_prior(
    corpus: Iterable[tuple[FeatureMatrix, SadLabels]],
    min_class_frames: int = 10,
    ridge: float = 1e-6,
) -> tuple[JointPriorStats, NoisePrior]:
    """Fit the coupled prior from a labelled corpus.

    Each utterance with at least ``min_class_frames`` frames of *both*
    classes contributes its per-class mean vectors.  The stacked means are
    summarized by their sample mean and maximum-likelihood covariance
    (normalized by the utterance count, not count minus one); the diagonal
    gets a relative ridge of ``ridge * mean(diag)`` before inversion so a
    barely-spread corpus still yields a usable precision.  When the means
    carry no spread at all the ridge is applied as an absolute value, which
    makes a fully degenerate corpus come out as an isotropic prior.

    Returns the joint summary and its factored form; the factored form also
    carries corpus-level scaling factors from :func:`estimate_global_scaling`
    with each utterance's class means taken at their point estimates.

    Raises :class:`DataError` when fewer than ``2d + 1`` utterances qualify.
    """
    if min_class_frames < 1:
        raise DataError(f"min_class_frames must be >= 1, got {min_class_frames}")
    if not (np.isfinite(ridge) and ridge >= 0):
        raise DataError(f"ridge must be finite and >= 0, got {ridge}")

    dim: int | None = None
    mean_sum: np.ndarray | None = None
    mean_outer: np.ndarray | None = None
    scatter_totals: np.ndarray | None = None
    count_totals = np.zeros(2, dtype=np.int64)
    qualifying = 0
    seen = 0
    for features, labels in corpus:
        seen += 1
        if dim is None:
            dim = features.dim
            mean_sum = np.zeros(2 * dim)
            mean_outer = np.zeros((2 * dim, 2 * dim))
            scatter_totals = np.zeros((2, dim, dim))
        elif features.dim != dim:
            raise DataError(
                f"utterance {seen} has dimension {features.dim}, expected {dim}"
            )
        stats = accumulate_stats(features, labels)
        if stats.speech_count < min_class_frames or stats.silence_count < min_class_frames:
            continue
        qualifying += 1
        stacked = np.concatenate(
            [stats.speech_sum / stats.speech_count, stats.silence_sum / stats.silence_count]
        )
        mean_sum += stacked
        mean_outer += np.outer(stacked, stacked)
        # within-class scatter around the point-estimate mean, accumulated for
        # the corpus-level scaling factors
        for row, (count, fsum, souter) in enumerate(
            (
                (stats.speech_count, stats.speech_sum, stats.speech_outer),
                (stats.silence_count, stats.silence_sum, stats.silence_outer),
            )
        ):
            mean = fsum / count
            scatter_totals[row] += souter - count * np.outer(mean, mean)
            count_totals[row] += count
    if dim is None:
        raise DataError("prior training needs at least 2d + 1 qualifying utterances, got 0")
    needed = 2 * dim + 1
    if qualifying < needed:
        raise DataError(
            f"prior training needs at least {needed} qualifying utterances "
            f"(dimension {dim}), got {qualifying} of {seen} seen"
        )

    joint_mean = mean_sum / qualifying
    cov = _symmetrize(mean_outer / qualifying - np.outer(joint_mean, joint_mean))
    trace = float(np.trace(cov))
    epsilon = ridge * trace / (2 * dim) if trace > 0 else ridge
    cov = cov + epsilon * np.eye(2 * dim)
    precision = _spd_inverse(cov, "joint covariance (after ridge)")
    stats_out = JointPriorStats(joint_mean, cov, precision, qualifying)
    prior = _factor_joint(stats_out)
    r_speech, r_silence = _scaling_from_totals(
        count_totals, scatter_totals, prior, what="corpus"
    )
    return stats_out, replace(prior, r_speech=r_speech, r_silence=r_silence)


def _factor_joint(stats: JointPriorStats) -> NoisePrior:
    d = stats.dim
    precision_ss = _symmetrize(stats.joint_precision[:d, :d])
    precision_sn = stats.joint_precision[:d, d:]
    gain = cho_solve(
        _spd_factor(precision_ss, "speech block of the joint precision"),
        precision_sn,
        check_finite=False,
    )
    mean_s = stats.joint_mean[:d]
    mean_n = stats.joint_mean[d:]
    return NoisePrior(
        silence_mean=mean_n,
        speech_offset=mean_s + gain @ mean_n,
        coupling=-gain,
        speech_precision=precision_ss,
        silence_precision=_spd_inverse(
            _symmetrize(stats.joint_cov[d:, d:]), "silence block of the joint covariance"
        ),
    )


def reconstruct_joint(prior: NoisePrior) -> JointPriorStats:
    """Rebuild the stacked mean/covariance/precision from the factored prior.

    Inverse of the factorization performed by :func:`train_prior`: the
    silence marginal and the speech-given-silence conditional recombine into
    the joint precision block structure, and the joint mean is the prior
    mean of the stacked vector.
    """
    d = prior.dim
    coupled = prior.speech_precision @ prior.coupling
    joint_precision = np.empty((2 * d, 2 * d))
    joint_precision[:d, :d] = prior.speech_precision
    joint_precision[:d, d:] = -coupled
    joint_precision[d:, :d] = -coupled.T
    joint_precision[d:, d:] = prior.silence_precision + _symmetrize(
        prior.coupling.T @ coupled
    )
    joint_cov = _spd_inverse(joint_precision, "reconstructed joint precision")
    return JointPriorStats(prior.joint_mean, joint_cov, joint_precision, 0)


# ---------------------------------------------------------------------------
# MAP estimation
# ---------------------------------------------------------------------------

def _posterior_system(
    stats: SufficientStats, prior: NoisePrior, scaling: ScalingFactors
) -> tuple[np.ndarray, np.ndarray]:
    """Precision ``K`` and linear term ``Q`` of the Gaussian posterior.

    With no observed frames ``K`` reduces to the joint prior precision and
    ``Q`` to ``K @ joint_mean``, so the MAP estimate falls back to the prior
    mean.  Note the minus sign on the offset term in the silence block of
    ``Q``: it comes from expanding the squared conditional residual
    ``speech - offset - coupling @ silence``.
    """
    if stats.dim != prior.dim:
        raise DataError(f"stats dimension {stats.dim} != prior dimension {prior.dim}")
    d = prior.dim
    r_s, r_n = scaling.r_speech, scaling.r_silence
    coupled = prior.speech_precision @ prior.coupling

    k = np.empty((2 * d, 2 * d))
    k[:d, :d] = (1.0 + r_s * stats.speech_count) * prior.speech_precision
    k[:d, d:] = -coupled
    k[d:, :d] = -coupled.T
    k[d:, d:] = (1.0 + r_n * stats.silence_count) * prior.silence_precision + _symmetrize(
        prior.coupling.T @ coupled
    )

    offset_pull = prior.speech_precision @ prior.speech_offset
    q = np.concatenate(
        [
            prior.speech_precision @ (prior.speech_offset + r_s * stats.speech_sum),
            prior.silence_precision @ (prior.silence_mean + r_n * stats.silence_sum)
            - prior.coupling.T @ offset_pull,
        ]
    )
    return k, q


def map_estimate(
    stats: SufficientStats, prior: NoisePrior, scaling: ScalingFactors
) -> MapPosterior:
    """Posterior over the stacked class means given one utterance's statistics.

    The posterior is Gaussian with precision ``K`` and mean ``K^-1 Q``; the
    covariance is materialized once (needed by the EM update of the scaling
    factors).  Raises :class:`NumericalError` if ``K`` is not positive
    definite, which signals a corrupt prior or a non-positive scaling.
    """
    k, q = _posterior_system(stats, prior, scaling)
    factor = _spd_factor(k, "posterior precision")
    mean = cho_solve(factor, q, check_finite=False)
    covariance = _symmetrize(cho_solve(factor, np.eye(k.shape[0]), check_finite=False))
    return MapPosterior(mean, k, covariance)


def log_evidence(
    stats: SufficientStats, prior: NoisePrior, scaling: ScalingFactors
) -> float:
    """Marginal log-likelihood of the frames with the class means integrated out.

    This is the quantity EM on the scaling factors pushes uphill, so it is
    the right thing to monitor for convergence diagnostics.
    """
    d = prior.dim
    r_s, r_n = scaling.r_speech, scaling.r_silence
    logdet_sp = _spd_logdet(prior.speech_precision, "speech precision")
    logdet_si = _spd_logdet(prior.silence_precision, "silence precision")
    log2pi = np.log(2.0 * np.pi)

    total = 0.0
    for count, souter, lam, logdet, r in (
        (stats.speech_count, stats.speech_outer, prior.speech_precision, logdet_sp, r_s),
        (stats.silence_count, stats.silence_outer, prior.silence_precision, logdet_si, r_n),
    ):
        total += 0.5 * count * (d * np.log(r) + logdet - d * log2pi)
        total -= 0.5 * r * float(np.sum(lam * souter))
    total += 0.5 * (logdet_sp + logdet_si) - d * log2pi
    total -= 0.5 * float(
        prior.speech_offset @ prior.speech_precision @ prior.speech_offset
    )
    total -= 0.5 * float(prior.silence_mean @ prior.silence_precision @ prior.silence_mean)

    k, q = _posterior_system(stats, prior, scaling)
    factor = _spd_factor(k, "posterior precision")
    mean = cho_solve(factor, q, check_finite=False)
    logdet_k = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    total += d * log2pi - 0.5 * logdet_k + 0.5 * float(q @ mean)
    return total


# ---------------------------------------------------------------------------
# scaling-factor estimation (EM)
# ---------------------------------------------------------------------------

def _expected_scatter(
    count: int, fsum: np.ndarray, souter: np.ndarray, mean: np.ndarray, cov: np.ndarray
) -> np.ndarray:
    """Posterior expectation of the within-class scatter around the class mean."""
    second_moment = cov + np.outer(mean, mean)
    return souter - np.outer(fsum, mean) - np.outer(mean, fsum) + count * second_moment


def _scaling_from_traces(
    dim: int,
    counts: Sequence[int],
    traces: Sequence[float],
    fallback: tuple[float, float],
    r_min: float,
    r_max: float,
    what: str,
) -> tuple[float, float]:
    out = []
    for count, trace, fb, cls in zip(counts, traces, fallback, ("speech", "silence")):
        if count == 0:
            out.append(fb)
            continue
        if trace <= 0:
            warnings.warn(
                f"degenerate (constant) {cls} data in {what}: scatter trace is "
                f"{trace:.3g}; clamping scaling factor to {r_max:g}",
                RuntimeWarning,
                stacklevel=3,
            )
            out.append(r_max)
            continue
        out.append(float(np.clip(dim * count / trace, r_min, r_max)))
    return out[0], out[1]


def _scaling_from_totals(
    count_totals: np.ndarray,
    scatter_totals: np.ndarray,
    prior: NoisePrior,
    what: str,
    r_min: float = R_MIN,
    r_max: float = R_MAX,
) -> tuple[float, float]:
    if count_totals[0] == 0:
        raise DataError(f"no speech frames in {what}")
    if count_totals[1] == 0:
        raise DataError(f"no silence frames in {what}")
    traces = (
        float(np.sum(prior.speech_precision * scatter_totals[0])),
        float(np.sum(prior.silence_precision * scatter_totals[1])),
    )
    return _scaling_from_traces(
        prior.dim, tuple(count_totals), traces, (1.0, 1.0), r_min, r_max, what
    )


def em_update_scaling(
    stats: SufficientStats,
    prior: NoisePrior,
    posterior: MapPosterior,
    current: ScalingFactors | None = None,
    r_min: float = R_MIN,
    r_max: float = R_MAX,
) -> ScalingFactors:
    """One M-step for the per-utterance scaling factors.

    The update inverts the per-frame average of the posterior-expected
    Mahalanobis scatter: ``1/r = trace(precision @ E[scatter]) / (d * count)``
    per class.  A class with no frames keeps its ``current`` value (1 when no
    current value is supplied); a non-positive scatter trace means the data
    are degenerate, and the factor is clamped to ``r_max`` with a warning.
    """
    if stats.dim != prior.dim:
        raise DataError(f"stats dimension {stats.dim} != prior dimension {prior.dim}")
    cur = current if current is not None else ScalingFactors(1.0, 1.0)
    d = prior.dim
    cov = posterior.covariance
    traces = []
    for count, fsum, souter, lam, mean, block in (
        (
            stats.speech_count,
            stats.speech_sum,
            stats.speech_outer,
            prior.speech_precision,
            posterior.speech_mean,
            cov[:d, :d],
        ),
        (
            stats.silence_count,
            stats.silence_sum,
            stats.silence_outer,
            prior.silence_precision,
            posterior.silence_mean,
            cov[d:, d:],
        ),
    ):
        if count == 0:
            traces.append(0.0)
            continue
        scatter = _expected_scatter(count, fsum, souter, mean, block)
        traces.append(float(np.sum(lam * scatter)))
    r_speech, r_silence = _scaling_from_traces(
        d,
        (stats.speech_count, stats.silence_count),
        traces,
        (cur.r_speech, cur.r_silence),
        r_min,
        r_max,
        "utterance",
    )
    return ScalingFactors(r_speech, r_silence)


def estimate_global_scaling(
    stats_list: Sequence[SufficientStats],
    prior: NoisePrior,
    posteriors: Sequence[MapPosterior] | None = None,
    r_min: float = R_MIN,
    r_max: float = R_MAX,
) -> ScalingFactors:
    """Corpus-level scaling factors pooled over utterances.

    Numerators (scatter traces) and denominators (frame counts) are summed
    over utterances before the division, so two copies of the same utterance
    give the same answer as one.  When ``posteriors`` is omitted each
    utterance's class means are taken at their point estimates (the sums
    divided by the counts), which is the right plug-in during prior training;
    pass MAP posteriors for the shrunk version.
    """
    if posteriors is not None and len(posteriors) != len(stats_list):
        raise DataError(
            f"got {len(stats_list)} stats but {len(posteriors)} posteriors"
        )
    if not stats_list:
        raise DataError("estimate_global_scaling needs at least one utterance")
    d = prior.dim
    count_totals = np.zeros(2, dtype=np.int64)
    scatter_totals = np.zeros((2, d, d))
    for i, stats in enumerate(stats_list):
        if stats.dim != d:
            raise DataError(f"stats {i} dimension {stats.dim} != prior dimension {d}")
        posterior = posteriors[i] if posteriors is not None else None
        for row, (count, fsum, souter) in enumerate(
            (
                (stats.speech_count, stats.speech_sum, stats.speech_outer),
                (stats.silence_count, stats.silence_sum, stats.silence_outer),
            )
        ):
            if count == 0:
                continue
            if posterior is None:
                mean = fsum / count
                cov_block = np.zeros((d, d))
            elif row == 0:
                mean = posterior.speech_mean
                cov_block = posterior.covariance[:d, :d]
            else:
                mean = posterior.silence_mean
                cov_block = posterior.covariance[d:, d:]
            scatter_totals[row] += _expected_scatter(count, fsum, souter, mean, cov_block)
            count_totals[row] += count
    r_speech, r_silence = _scaling_from_totals(
        count_totals, scatter_totals, prior, "corpus", r_min, r_max
    )
    return ScalingFactors(r_speech, r_silence)


@dataclass(frozen=True)
class ScalingFit:
    """Result of :func:`fit_scaling`: the factors, the matching posterior,
    how many EM iterations ran, and whether the relative-change test passed."""

    scaling: ScalingFactors
    posterior: MapPosterior
    iterations: int
    converged: bool


def fit_scaling(
    stats: SufficientStats,
    prior: NoisePrior,
    init: ScalingFactors | None = None,
    max_iters: int = 50,
    rel_tol: float = 1e-6,
) -> ScalingFit:
    """Alternate MAP solves and scaling updates until the factors settle.

    Stops when the largest relative change across the two factors drops
    below ``rel_tol`` (an already-converged input therefore returns after a
    single iteration) or after ``max_iters``.  The returned posterior is
    recomputed with the final factors.
    """
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")
    scaling = init if init is not None else ScalingFactors(1.0, 1.0)
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        posterior = map_estimate(stats, prior, scaling)
        updated = em_update_scaling(stats, prior, posterior, current=scaling)
        change = max(
            abs(updated.r_speech - scaling.r_speech) / max(scaling.r_speech, 1e-300),
            abs(updated.r_silence - scaling.r_silence) / max(scaling.r_silence, 1e-300),
        )
        scaling = updated
        if change < rel_tol:
            converged = True
            break
    return ScalingFit(scaling, map_estimate(stats, prior, scaling), iterations, converged)


# ---------------------------------------------------------------------------
# streaming MAP
# ---------------------------------------------------------------------------

class StreamingMap:
    """Streaming MAP estimator: accumulate statistics, solve on demand.

    ``r_policy`` picks the scaling factors used by :meth:`estimate`:

    - ``"fixed_one"``: both factors pinned to 1;
    - ``"global"``: the corpus-level factors carried by the prior;
    - ``"per_utterance_em_every_k"``: refit by EM every ``em_every`` pushes,
      starting from the corpus-level factors.

    With no frames pushed the estimate is the prior mean (unlike the
    streaming point estimator, which falls back to zeros).  One instance per
    utterance; not thread-safe.
    """

    def __init__(
        self,
        prior: NoisePrior,
        r_policy: str = R_POLICY_FIXED_ONE,
        em_every: int = 100,
        em_max_iters: int = 50,
        em_rel_tol: float = 1e-6,
    ) -> None:
        if r_policy not in R_POLICIES:
            raise DataError(f"unknown r_policy {r_policy!r}, expected one of {R_POLICIES}")
        if em_every < 1:
            raise DataError(f"em_every must be >= 1, got {em_every}")
        self.prior = prior
        self.r_policy = r_policy
        self.em_every = em_every
        self.em_max_iters = em_max_iters
        self.em_rel_tol = em_rel_tol
        d = prior.dim
        self._counts = [0, 0]
        self._sums = np.zeros((2, d))
        self._outers = np.zeros((2, d, d))
        if r_policy == R_POLICY_FIXED_ONE:
            self._scaling = ScalingFactors(1.0, 1.0)
        else:
            self._scaling = prior.scaling
        self._pushes_since_fit = 0

    def push(self, frame: np.ndarray, is_speech: bool) -> None:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.prior.dim,):
            raise DataError(
                f"expected frame of shape ({self.prior.dim},), got {frame.shape}"
            )
        row = 0 if is_speech else 1
        self._counts[row] += 1
        self._sums[row] += frame
        self._outers[row] += np.outer(frame, frame)
        if self.r_policy == R_POLICY_EM_EVERY_K:
            self._pushes_since_fit += 1
            if self._pushes_since_fit >= self.em_every:
                fit = fit_scaling(
                    self.stats(),
                    self.prior,
                    init=self._scaling,
                    max_iters=self.em_max_iters,
                    rel_tol=self.em_rel_tol,
                )
                self._scaling = fit.scaling
                self._pushes_since_fit = 0

    def stats(self) -> SufficientStats:
        return SufficientStats(
            self._counts[0],
            self._counts[1],
            self._sums[0].copy(),
            self._sums[1].copy(),
            self._outers[0].copy(),
            self._outers[1].copy(),
        )

    @property
    def scaling(self) -> ScalingFactors:
        return self._scaling

    def posterior(self) -> MapPosterior:
        return map_estimate(self.stats(), self.prior, self._scaling)

    def estimate(self) -> NoiseVector:
        posterior = self.posterior()
        return NoiseVector(
            posterior.speech_mean,
            posterior.silence_mean,
            self._counts[0],
            self._counts[1],
        )


# ---------------------------------------------------------------------------
# prior file format (magic NVPRIOR1)
# ---------------------------------------------------------------------------

_META_RE = re.compile(r"^\[meta\] dim=(\d+) r_s=(\S+) r_n=(\S+)$")


def write_prior(prior: NoisePrior, path: str | Path) -> None:
    """Sectioned text format; floats carry 17 significant digits."""
    with open(path, "w") as handle:
        _write_prior_to(prior, handle)


def _write_prior_to(prior: NoisePrior, handle: IO[str]) -> None:
    handle.write("NVPRIOR1\n")
    handle.write(
        f"[meta] dim={prior.dim} r_s={format_float(prior.r_speech)} "
        f"r_n={format_float(prior.r_silence)}\n"
    )
    for section, value in (
        ("mu_n", prior.silence_mean),
        ("a", prior.speech_offset),
        ("B", prior.coupling),
        ("lambda_s", prior.speech_precision),
        ("lambda_n", prior.silence_precision),
    ):
        handle.write(f"[{section}]\n")
        rows = value if value.ndim == 2 else value[np.newaxis, :]
        for row in rows:
            handle.write("\t".join(format_float(v) for v in row) + "\n")


def read_prior(path: str | Path) -> NoisePrior:
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    cursor = _LineCursor(path, lines)
    if cursor.take() != "NVPRIOR1":
        raise FormatError(f"{path}: line 1: expected magic 'NVPRIOR1'")
    meta = _META_RE.match(cursor.take())
    if meta is None:
        raise FormatError(f"{path}: line 2: malformed [meta] line")
    dim = int(meta.group(1))
    try:
        r_speech = float(meta.group(2))
        r_silence = float(meta.group(3))
    except ValueError:
        raise FormatError(f"{path}: line 2: scaling factors are not numbers") from None
    silence_mean = cursor.matrix("mu_n", 1, dim)[0]
    speech_offset = cursor.matrix("a", 1, dim)[0]
    coupling = cursor.matrix("B", dim, dim)
    speech_precision = cursor.matrix("lambda_s", dim, dim)
    silence_precision = cursor.matrix("lambda_n", dim, dim)
    cursor.expect_end()
    return NoisePrior(
        silence_mean=silence_mean,
        speech_offset=speech_offset,
        coupling=coupling,
        speech_precision=speech_precision,
        silence_precision=silence_precision,
        r_speech=r_speech,
        r_silence=r_silence,
    )


class _LineCursor:
    """Line-oriented reader that raises FormatError with 1-based line numbers."""

    def __init__(self, path: str | Path, lines: list[str]) -> None:
        self.path = path
        self.lines = lines
        self.index = 0

    def take(self) -> str:
        if self.index >= len(self.lines):
            raise FormatError(f"{self.path}: line {self.index + 1}: unexpected end of file")
        line = self.lines[self.index]
        self.index += 1
        return line

    def matrix(self, section: str, rows: int, cols: int) -> np.ndarray:
        header = self.take()
        if header != f"[{section}]":
            raise FormatError(
                f"{self.path}: line {self.index}: expected section [{section}], "
                f"got {header!r}"
            )
        out = np.empty((rows, cols))
        for r in range(rows):
            line = self.take()
            parts = line.split("\t")
            if len(parts) != cols:
                raise FormatError(
                    f"{self.path}: line {self.index}: expected {cols} values, "
                    f"got {len(parts)}"
                )
            for c, token in enumerate(parts):
                try:
                    out[r, c] = float(token)
                except ValueError:
                    raise FormatError(
                        f"{self.path}: line {self.index}: column {c + 1}: "
                        f"not a number: {token!r}"
                    ) from None
        return out

    def expect_end(self) -> None:
        if self.index != len(self.lines):
            raise FormatError(
                f"{self.path}: line {self.index + 1}: trailing content after last section"
            )
