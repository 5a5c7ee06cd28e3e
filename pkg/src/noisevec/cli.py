"""Command-line front end.

Every subcommand is a thin wrapper over the library: load inputs, call the
same functions a script would, write the same bytes.  Data goes to ``--out``
when given, otherwise to stdout; diagnostics always go to stderr.

Exit codes: 0 success, 1 usage error, 2 malformed or inconsistent data,
3 numerical failure (e.g. a matrix that must be positive definite is not).

Defaults honor ``NV_``-prefixed environment variables (``NV_SEED``,
``NV_JOBS``, ``NV_RIDGE``, ``NV_MIN_CLASS_FRAMES``, ``NV_EDGE_FRAMES``,
``NV_SAD_QUANTILE``, ``NV_SAD_WINDOW``, ``NV_SAD_ENERGY_INDEX``,
``NV_R_POLICY``, ``NV_EVERY``, ``NV_EM_EVERY``); explicit flags win.
"""

from __future__ import annotations

import argparse
import functools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, NumericalError
from .estimators import (
    NoiseVector,
    StreamingMle,
    cmn_apply,
    format_noise_vector_line,
    nat_vector,
    offline_noise_vector,
    read_noise_vectors,
    utt_mean,
)
from .features import (
    FeatureMatrix,
    SadLabels,
    format_float,
    infer_feature_format,
    read_features,
    read_labels,
    read_manifest,
    resolve_path,
    write_features,
    write_labels,
)
from .map_model import (
    R_POLICY_EM_EVERY_K,
    R_POLICY_FIXED_ONE,
    R_POLICY_GLOBAL,
    ScalingFactors,
    accumulate_stats,
    fit_scaling,
    map_estimate,
    read_prior,
    train_prior,
    write_prior,
    _write_prior_to,
)
from .sad import SadConfig, label_by_energy
from .synth import SynthConfig, read_ground_truth, sample_corpus
from .transform import apply_control_layer, read_affine
from . import evaluation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_R_POLICY_CHOICES = {
    "fixed-one": R_POLICY_FIXED_ONE,
    "global": R_POLICY_GLOBAL,
    "em-every-k": R_POLICY_EM_EVERY_K,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name: str, fallback, cast):
    raw = os.environ.get(f"NV_{name}")
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        sys.stderr.write(f"error: NV_{name}={raw!r} is not a valid {cast.__name__}\n")
        raise SystemExit(EXIT_USAGE) from None


def _env_choice(name: str, fallback: str, choices) -> str:
    value = _env(name, fallback, str)
    if value not in choices:
        sys.stderr.write(
            f"error: NV_{name}={value!r} is not one of {sorted(choices)}\n"
        )
        raise SystemExit(EXIT_USAGE)
    return value


@contextmanager
def _out_handle(out: str | None):
    if out is None:
        yield sys.stdout
    else:
        with open(out, "w") as handle:
            yield handle


def _add_sad_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--sad-quantile",
        type=float,
        default=_env("SAD_QUANTILE", 0.3, float),
        help="energy quantile used as the speech threshold (default %(default)s)",
    )
    parser.add_argument(
        "--sad-window",
        type=int,
        default=_env("SAD_WINDOW", 5, int),
        help="odd majority-smoothing window (default %(default)s)",
    )
    parser.add_argument(
        "--sad-energy-index",
        type=int,
        default=_env("SAD_ENERGY_INDEX", 0, int),
        help="feature coefficient carrying energy (default %(default)s)",
    )


def _sad_config(args: argparse.Namespace) -> SadConfig:
    return SadConfig(
        speech_quantile=args.sad_quantile,
        smoothing_window=args.sad_window,
        energy_coefficient_index=args.sad_energy_index,
    )


def _add_seed_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed",
        type=int,
        default=_env("SEED", 42, int),
        help="random seed (default %(default)s)",
    )


def _load_labels_or_sad(
    features: FeatureMatrix,
    label_path: str | None,
    sad_config: SadConfig,
) -> SadLabels:
    """External labels win; the energy heuristic is only a fallback."""
    if label_path is not None:
        return read_labels(label_path, features.num_frames)
    return label_by_energy(features, sad_config)


@functools.lru_cache(maxsize=8)
def _cached_prior(path: str):
    return read_prior(path)


def _single_vector(
    features: FeatureMatrix,
    labels: SadLabels,
    mode: str,
    prior_path: str | None,
    r_policy: str,
    em_every: int,
) -> NoiseVector:
    if mode == "offline":
        return offline_noise_vector(features, labels)
    if mode == "mle":
        streaming = StreamingMle(features.dim)
        for t in range(features.num_frames):
            streaming.push(features.frames[t], bool(labels.speech[t]))
        return streaming.estimate()
    if mode == "map":
        if prior_path is None:
            raise DataError("mode 'map' requires --prior")
        prior = _cached_prior(prior_path)
        stats = accumulate_stats(features, labels)
        if r_policy == R_POLICY_FIXED_ONE:
            scaling = ScalingFactors(1.0, 1.0)
        elif r_policy == R_POLICY_GLOBAL:
            scaling = prior.scaling
        else:
            scaling = fit_scaling(stats, prior, init=prior.scaling).scaling
        posterior = map_estimate(stats, prior, scaling)
        return NoiseVector(
            posterior.speech_mean,
            posterior.silence_mean,
            stats.speech_count,
            stats.silence_count,
        )
    raise DataError(f"unknown mode {mode!r}")


def _extract_entry_worker(payload: tuple) -> str:
    """Process one manifest entry; top-level so the process pool can pickle it."""
    (
        utterance_id,
        feature_path,
        label_path,
        mode,
        prior_path,
        r_policy,
        em_every,
        sad_quantile,
        sad_window,
        sad_energy_index,
    ) = payload
    features = read_features(feature_path, infer_feature_format(feature_path))
    labels = _load_labels_or_sad(
        features,
        label_path,
        SadConfig(sad_quantile, sad_window, sad_energy_index),
    )
    vector = _single_vector(features, labels, mode, prior_path, r_policy, em_every)
    return format_noise_vector_line(utterance_id, vector)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_extract(args: argparse.Namespace) -> int:
    r_policy = _R_POLICY_CHOICES[args.r_policy]
    if args.manifest is not None:
        manifest = read_manifest(args.manifest)
        base = Path(args.manifest).parent
        payloads = [
            (
                entry.utterance_id,
                str(resolve_path(entry.feature_path, base)),
                str(resolve_path(entry.label_path, base)) if entry.label_path else None,
                args.mode,
                args.prior,
                r_policy,
                args.em_every,
                args.sad_quantile,
                args.sad_window,
                args.sad_energy_index,
            )
            for entry in manifest
        ]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                lines = list(pool.map(_extract_entry_worker, payloads))
        else:
            lines = [_extract_entry_worker(p) for p in payloads]
        logger.info("extracted %d noise vectors", len(lines))
        with _out_handle(args.out) as handle:
            for line in lines:
                handle.write(line + "\n")
        return EXIT_OK

    features = read_features(args.feats, args.format or infer_feature_format(args.feats))
    labels = _load_labels_or_sad(features, args.labels, _sad_config(args))
    vector = _single_vector(
        features, labels, args.mode, args.prior, r_policy, args.em_every
    )
    utterance_id = args.utt_id or Path(args.feats).stem
    with _out_handle(args.out) as handle:
        handle.write(format_noise_vector_line(utterance_id, vector) + "\n")
    return EXIT_OK


def cmd_train_prior(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    sad_config = _sad_config(args)

    def utterances():
        for entry in manifest:
            features = read_features(
                resolve_path(entry.feature_path, base),
                infer_feature_format(entry.feature_path),
            )
            labels = _load_labels_or_sad(
                features,
                str(resolve_path(entry.label_path, base)) if entry.label_path else None,
                sad_config,
            )
            yield features, labels

    _, prior = train_prior(
        utterances(), min_class_frames=args.min_class_frames, ridge=args.ridge
    )
    logger.info(
        "trained prior: dim=%d r_s=%g r_n=%g", prior.dim, prior.r_speech, prior.r_silence
    )
    if args.out is None:
        _write_prior_to(prior, sys.stdout)
    else:
        write_prior(prior, args.out)
    return EXIT_OK


def cmd_stream(args: argparse.Namespace) -> int:
    features = read_features(args.feats, args.format or infer_feature_format(args.feats))
    labels = _load_labels_or_sad(features, args.labels, _sad_config(args))
    prior = _cached_prior(args.prior) if args.prior else None
    if args.mode == "map" and prior is None:
        raise DataError("mode 'map' requires --prior")
    trajectory = evaluation.trace_convergence(
        features,
        labels,
        method=args.mode,
        prior=prior,
        r_policy=_R_POLICY_CHOICES[args.r_policy],
        em_every=args.em_every,
    )
    if args.coeffs is not None:
        indices = tuple(int(tok) for tok in args.coeffs.split(","))
    else:
        indices = evaluation.default_coefficient_indices(features.dim)
    with _out_handle(args.out) as handle:
        evaluation.write_trajectory_tsv(trajectory, handle, indices, every=args.every)
    if args.plot:
        if args.out is None:
            raise DataError("--plot needs --out to know where to put the figure")
        from . import plots

        figure_path = Path(args.out).with_suffix(".png")
        plots.plot_trajectory(trajectory, indices, figure_path)
        logger.info("wrote %s", figure_path)
    return EXIT_OK


def cmd_sad(args: argparse.Namespace) -> int:
    features = read_features(args.feats, args.format or infer_feature_format(args.feats))
    labels = label_by_energy(features, _sad_config(args))
    if args.out is None:
        sys.stdout.write(labels.to_string() + "\n")
    else:
        write_labels(labels, args.out)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    prior = read_prior(args.prior)
    config = SynthConfig(
        prior=prior,
        num_utterances=args.num_utterances,
        frames_per_utterance=args.frames,
        r_speech=args.r_s,
        r_silence=args.r_n,
        speech_fraction=args.speech_fraction,
        segment_mean_length=args.segment_mean_length,
        seed=args.seed,
    )
    manifest = sample_corpus(config, args.out_dir)
    logger.info(
        "wrote %d utterances of %d frames to %s",
        len(manifest),
        args.frames,
        args.out_dir,
    )
    return EXIT_OK


def _load_corpus_dir(corpus_dir: Path) -> list[tuple[str, FeatureMatrix, SadLabels]]:
    manifest = read_manifest(corpus_dir / "manifest.tsv")
    rows = []
    for entry in manifest:
        features = read_features(
            resolve_path(entry.feature_path, corpus_dir),
            infer_feature_format(entry.feature_path),
        )
        if entry.label_path is None:
            raise DataError(
                f"utterance {entry.utterance_id!r} has no label file; "
                "evaluation needs labelled corpora"
            )
        labels = read_labels(
            resolve_path(entry.label_path, corpus_dir), features.num_frames
        )
        rows.append((entry.utterance_id, features, labels))
    return rows


def cmd_eval(args: argparse.Namespace) -> int:
    corpus_dir = Path(args.corpus)
    rows = _load_corpus_dir(corpus_dir)
    prior = _cached_prior(args.prior) if args.prior else None
    figure_path = Path(args.out).with_suffix(".png") if args.out and args.plot else None
    if args.plot and args.out is None:
        raise DataError("--plot needs --out to know where to put the figure")

    if args.task == "compare":
        if prior is None:
            raise DataError("task 'compare' requires --prior")
        truth = {row[0]: row[1] for row in read_ground_truth(corpus_dir / "truth.tsv")}
        corpus = []
        for utterance_id, features, labels in rows:
            if utterance_id not in truth:
                raise DataError(f"no ground truth for utterance {utterance_id!r}")
            corpus.append((features, labels, truth[utterance_id]))
        table = evaluation.compare_estimators(corpus, prior, edge_frames=args.edge_frames)
        with _out_handle(args.out) as handle:
            evaluation.write_comparison_tsv(table, handle)
        if figure_path is not None:
            from . import plots

            plots.plot_comparison(table, figure_path)
    elif args.task == "label-noise":
        probabilities = [float(tok) for tok in args.flip_probs.split(",")]
        points = evaluation.label_noise_sweep(
            [(features, labels) for _, features, labels in rows],
            probabilities,
            method=args.mode,
            prior=prior,
            seed=args.seed,
        )
        with _out_handle(args.out) as handle:
            evaluation.write_sweep_tsv(points, handle)
        if figure_path is not None:
            from . import plots

            plots.plot_sweep(points, figure_path)
    elif args.task == "convergence":
        summary = evaluation.convergence_summary(
            rows,
            method=args.mode,
            prior=prior,
            r_policy=_R_POLICY_CHOICES[args.r_policy],
        )
        with _out_handle(args.out) as handle:
            evaluation.write_convergence_tsv(summary, handle)
        if figure_path is not None:
            from . import plots

            plots.plot_convergence_summary(summary, figure_path)
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown task {args.task!r}")
    return EXIT_OK


def cmd_apply(args: argparse.Namespace) -> int:
    features = read_features(args.feats, args.format or infer_feature_format(args.feats))
    if args.vector is not None:
        vectors = read_noise_vectors(args.vector)
        if not vectors:
            raise DataError(f"{args.vector}: no noise vectors found")
        _, vector = vectors[0]
    else:
        labels = read_labels(args.labels, features.num_frames)
        vector = offline_noise_vector(features, labels)
    affine = read_affine(args.affine) if args.affine else None
    transformed = apply_control_layer(features, vector, affine)
    write_features(transformed, args.out, fmt=args.out_format)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    features = read_features(args.feats, args.format or infer_feature_format(args.feats))
    utterance_id = args.utt_id or Path(args.feats).stem
    if args.method == "cmn":
        normalized = cmn_apply(features)
        if args.out is None:
            raise DataError("baseline cmn writes a feature file; --out is required")
        write_features(normalized, args.out, fmt=args.out_format)
        return EXIT_OK
    if args.method == "utt-mean":
        vector = utt_mean(features)
    else:
        vector = nat_vector(features, edge_frames=args.edge_frames)
    line = "\t".join([utterance_id] + [format_float(v) for v in vector])
    with _out_handle(args.out) as handle:
        handle.write(line + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="noisevec",
        description="Estimate per-utterance speech/silence noise vectors.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("extract", help="noise vectors for one utterance or a manifest")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--feats", help="feature file for a single utterance")
    source.add_argument("--manifest", help="TSV manifest of utterances")
    p.add_argument("--labels", help="label file (energy SAD is the fallback)")
    p.add_argument("--format", choices=["binary", "text"], help="feature file format")
    p.add_argument("--mode", choices=["offline", "mle", "map"], default="offline")
    p.add_argument("--prior", help="prior file, required for --mode map")
    p.add_argument(
        "--r-policy",
        choices=sorted(_R_POLICY_CHOICES),
        default=_env_choice("R_POLICY", "fixed-one", _R_POLICY_CHOICES),
        help="scaling factors used by --mode map (default %(default)s)",
    )
    p.add_argument(
        "--em-every",
        type=int,
        default=_env("EM_EVERY", 100, int),
        help="frames between EM refits under em-every-k (default %(default)s)",
    )
    p.add_argument("--utt-id", help="utterance id for single-file mode")
    p.add_argument(
        "--jobs",
        type=int,
        default=_env("JOBS", 1, int),
        help="parallel workers for manifest mode (default %(default)s)",
    )
    p.add_argument("--out", help="output path (stdout if omitted)")
    _add_sad_args(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-prior", help="fit the coupled prior from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument(
        "--min-class-frames",
        type=int,
        default=_env("MIN_CLASS_FRAMES", 10, int),
        help="frames of each class an utterance needs to qualify (default %(default)s)",
    )
    p.add_argument(
        "--ridge",
        type=float,
        default=_env("RIDGE", 1e-6, float),
        help="relative diagonal ridge on the covariance (default %(default)s)",
    )
    p.add_argument("--out", help="prior file path (stdout if omitted)")
    _add_sad_args(p)
    p.set_defaults(func=cmd_train_prior)

    p = sub.add_parser("stream", help="frame-by-frame estimate trajectory")
    p.add_argument("--feats", required=True)
    p.add_argument("--labels")
    p.add_argument("--format", choices=["binary", "text"])
    p.add_argument("--mode", choices=["mle", "map"], default="mle")
    p.add_argument("--prior")
    p.add_argument(
        "--r-policy",
        choices=sorted(_R_POLICY_CHOICES),
        default=_env_choice("R_POLICY", "fixed-one", _R_POLICY_CHOICES),
    )
    p.add_argument("--em-every", type=int, default=_env("EM_EVERY", 100, int))
    p.add_argument(
        "--every",
        type=int,
        default=_env("EVERY", 1, int),
        help="record every k-th frame, plus the final one (default %(default)s)",
    )
    p.add_argument("--coeffs", help="comma-separated stacked coefficient indices")
    p.add_argument("--out", help="trajectory TSV path (stdout if omitted)")
    p.add_argument("--plot", action="store_true", help="render a PNG next to --out")
    _add_sad_args(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("sad", help="energy-quantile speech activity labels")
    p.add_argument("--feats", required=True)
    p.add_argument("--format", choices=["binary", "text"])
    p.add_argument("--out", help="label file path (stdout if omitted)")
    _add_sad_args(p)
    p.set_defaults(func=cmd_sad)

    p = sub.add_parser("synth", help="draw a synthetic corpus from a prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-utterances", type=int, default=100)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--r-s", type=float, default=1.0, help="true speech scaling factor")
    p.add_argument("--r-n", type=float, default=1.0, help="true silence scaling factor")
    p.add_argument("--speech-fraction", type=float, default=0.5)
    p.add_argument("--segment-mean-length", type=float, default=20.0)
    _add_seed_arg(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="reports over a corpus directory")
    p.add_argument("--corpus", required=True, help="directory with manifest.tsv")
    p.add_argument(
        "--task", choices=["compare", "label-noise", "convergence"], required=True
    )
    p.add_argument("--prior")
    p.add_argument("--mode", choices=["mle", "map"], default="mle")
    p.add_argument(
        "--r-policy",
        choices=sorted(_R_POLICY_CHOICES),
        default=_env_choice("R_POLICY", "fixed-one", _R_POLICY_CHOICES),
    )
    p.add_argument(
        "--flip-probs",
        default="0,0.05,0.1,0.2",
        help="comma-separated label flip probabilities for task label-noise",
    )
    p.add_argument(
        "--edge-frames",
        type=int,
        default=_env("EDGE_FRAMES", 10, int),
        help="edge frames for the nat baseline in task compare (default %(default)s)",
    )
    p.add_argument("--out", help="report TSV path (stdout if omitted)")
    p.add_argument("--plot", action="store_true", help="render a PNG next to --out")
    _add_seed_arg(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("apply", help="condition frames on a noise vector")
    p.add_argument("--feats", required=True)
    p.add_argument("--format", choices=["binary", "text"])
    vector_source = p.add_mutually_exclusive_group(required=True)
    vector_source.add_argument("--vector", help="noise-vector file (first line is used)")
    vector_source.add_argument("--labels", help="compute the vector from these labels")
    p.add_argument("--affine", help="affine map file (identity-append if omitted)")
    p.add_argument("--out-format", choices=["binary", "text"], default="text")
    p.add_argument("--out", required=True, help="transformed feature file")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("baseline", help="classical single-vector baselines")
    p.add_argument("--method", choices=["cmn", "utt-mean", "nat"], required=True)
    p.add_argument("--feats", required=True)
    p.add_argument("--format", choices=["binary", "text"])
    p.add_argument(
        "--edge-frames",
        type=int,
        default=_env("EDGE_FRAMES", 10, int),
        help="edge frames for --method nat (default %(default)s)",
    )
    p.add_argument("--utt-id")
    p.add_argument("--out-format", choices=["binary", "text"], default="text")
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (FormatError, DataError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except NumericalError as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
