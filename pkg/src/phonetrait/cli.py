"""Command-line entry point for the whole pipeline.

Subcommands: ``gen-corpus``, ``train``, ``score``, ``eval``, ``fratio``,
``explain``, ``gradcheck``. Every subcommand accepts ``--config`` (a
key=value file whose keys are the flag names with dashes as underscores),
``--seed`` and ``--out-dir``; explicit flags override config-file values,
which override the built-in defaults. The effective settings are echoed to
``config_used.txt`` in the output directory, in the same key=value format.

Exit codes: 0 success, 2 bad command line, 3 missing input file, 4 unparsable
input, 5 invalid configuration or insufficient data, 6 numeric failure or
divergence, 7 gradient check failure. Errors print a single line
``error: <Kind>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import presets
from .analysis import (
    compute_metrics,
    explainability_correlation,
    export_explanation,
    f_ratio,
    labelled_scores,
    save_f_ratio,
    write_report,
)
from .corpus import (
    CMU_PHONES,
    NON_VERBAL,
    CorpusIndex,
    PhoneInventory,
    atomic_write,
    default_inventory,
    generate_corpus,
    load_alignments,
    load_features,
    load_inventory,
    load_trials,
    make_trials,
    save_alignments,
    save_features,
    save_inventory,
    save_trials,
)
from .encoder import EncoderConfig, format_layer_string, parse_layer_string
from .errors import (
    BatchError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    EmptyUtteranceError,
    NumericGuardError,
    ParseError,
    UndefinedEvidenceError,
)
from .losses import LOSS_LOG_HEADER, AamConfig, LossWeights, format_loss_log_line
from .scoring import load_scores, save_scores, score_trials
from .training import (
    ModelConfig,
    TrainConfig,
    grad_check,
    init_model,
    load_checkpoint,
    sample_pair_batch,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_PARSE = 4
EXIT_CONFIG = 5
EXIT_NUMERIC = 6
EXIT_GRADCHECK = 7

INVENTORY_FILE = "inventory.txt"
FEATURES_FILE = "features.txt"
ALIGNMENTS_FILE = "alignments.txt"
TRIALS_FILE = "trials.txt"
SCORES_FILE = "scores.txt"
LOSS_LOG_FILE = "loss_log.txt"
REPORT_TXT_FILE = "report.txt"
REPORT_CSV_FILE = "report.csv"
FRATIO_FILE = "fratio.csv"
EXPLANATION_FILE = "explanation.txt"
GRADCHECK_FILE = "gradcheck.txt"
CONFIG_ECHO_FILE = "config_used.txt"


def _add(parser: argparse.ArgumentParser, registry: dict, *names, **kwargs):
    action = parser.add_argument(*names, **kwargs)
    registry[action.dest] = action.type if action.type is not None else str
    return action


def _new_subcommand(subparsers, registries, name: str, help_text: str):
    sub = subparsers.add_parser(
        name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    registry: dict = {}
    registries[name] = registry
    sub.add_argument("--config", type=str, default=None,
                     help="key=value file with defaults for any flag of this subcommand")
    return sub, registry


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phonetrait",
        description="Explainable phonetic-trait speaker verification pipeline",
    )
    subparsers = parser.add_subparsers(dest="command")
    registries: dict[str, dict] = {}

    sub, reg = _new_subcommand(subparsers, registries, "gen-corpus",
                               "generate a synthetic corpus with alignments and trials")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the corpus files")
    _add(sub, reg, "--seed", type=int, default=presets.CORPUS_SEED, help="corpus generation seed")
    _add(sub, reg, "--n-speakers", type=int, default=presets.N_SPEAKERS, help="speakers to generate")
    _add(sub, reg, "--utts-per-speaker", type=int, default=presets.UTTS_PER_SPEAKER,
         help="utterances per speaker")
    _add(sub, reg, "--feature-dim", type=int, default=presets.FEATURE_DIM,
         help="synthetic feature width F")
    _add(sub, reg, "--segment-min", type=int, default=presets.SEGMENT_LENGTH_RANGE[0],
         help="minimum frames per phone segment")
    _add(sub, reg, "--segment-max", type=int, default=presets.SEGMENT_LENGTH_RANGE[1],
         help="maximum frames per phone segment")
    _add(sub, reg, "--phones-min", type=int, default=presets.PHONES_PER_UTT_RANGE[0],
         help="minimum segments per utterance")
    _add(sub, reg, "--phones-max", type=int, default=presets.PHONES_PER_UTT_RANGE[1],
         help="maximum segments per utterance")
    _add(sub, reg, "--noise-std", type=float, default=presets.NOISE_STD,
         help="frame noise standard deviation")
    _add(sub, reg, "--speaker-spread", type=float, default=presets.SPEAKER_SPREAD,
         help="speaker deviation around the shared phone prototypes")
    _add(sub, reg, "--rare-phone", type=str, default=presets.RARE_PHONE,
         help="label emitted rarely, empty string to disable")
    _add(sub, reg, "--rare-phone-weight", type=float, default=presets.RARE_PHONE_WEIGHT,
         help="relative emission weight of the rare phone")
    _add(sub, reg, "--n-target", type=int, default=presets.EVAL_N_TARGET,
         help="same-speaker trials to sample")
    _add(sub, reg, "--n-nontarget", type=int, default=presets.EVAL_N_NONTARGET,
         help="cross-speaker trials to sample")
    _add(sub, reg, "--trial-seed", type=int, default=presets.TRIAL_SEED, help="trial sampling seed")

    sub, reg = _new_subcommand(subparsers, registries, "train",
                               "train a model on a generated corpus")
    _add(sub, reg, "--out-dir", type=str, default=None,
         help="directory for checkpoints and the loss log")
    _add(sub, reg, "--seed", type=int, default=presets.TRAIN_SEED,
         help="initialisation and batch sampling seed")
    _add(sub, reg, "--corpus-dir", type=str, default=None, help="directory holding the corpus files")
    default_train = presets.desk_train_config()
    _add(sub, reg, "--epochs", type=int, default=default_train.epochs, help="training epochs")
    _add(sub, reg, "--steps-per-epoch", type=int, default=default_train.steps_per_epoch,
         help="batches per epoch")
    _add(sub, reg, "--speakers-per-batch", type=int, default=default_train.speakers_per_batch,
         help="speakers K per pair batch")
    _add(sub, reg, "--learning-rate", type=float, default=default_train.learning_rate,
         help="constant SGD learning rate")
    _add(sub, reg, "--momentum", type=float, default=default_train.momentum, help="SGD momentum")
    _add(sub, reg, "--alpha", type=float, default=0.0007,
         help="weight of the matched trait verification term")
    _add(sub, reg, "--beta", type=float, default=0.00001,
         help="weight of the unmatched trait verification term")
    _add(sub, reg, "--gamma", type=float, default=0.0001, help="weight of the trait center term")
    _add(sub, reg, "--margin", type=float, default=0.2, help="angular margin of the class loss")
    _add(sub, reg, "--scale", type=float, default=30.0, help="logit scale of the class loss")
    _add(sub, reg, "--layers", type=str,
         default="-1,0,1:16:relu;0:16:relu",
         help="encoder layers as offsets:dim:nonlinearity groups separated by ';'")
    _add(sub, reg, "--embedding-dim", type=int, default=8, help="speaker embedding width")

    sub, reg = _new_subcommand(subparsers, registries, "score",
                               "score a trial list with a trained checkpoint")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the score file")
    _add(sub, reg, "--seed", type=int, default=0, help="unused, accepted for uniformity")
    _add(sub, reg, "--corpus-dir", type=str, default=None, help="directory holding the corpus files")
    _add(sub, reg, "--checkpoint", type=str, default=None, help="checkpoint file to score with")
    _add(sub, reg, "--trials", type=str, default=None,
         help="trial file, default <corpus-dir>/trials.txt")

    sub, reg = _new_subcommand(subparsers, registries, "eval",
                               "compute detection metrics and the explainability correlation")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the reports")
    _add(sub, reg, "--seed", type=int, default=0, help="unused, accepted for uniformity")
    _add(sub, reg, "--scores", type=str, default=None, help="score file to evaluate")
    _add(sub, reg, "--p-target", type=float, default=0.01,
         help="target prior of the detection cost")
    _add(sub, reg, "--c-miss", type=float, default=1.0, help="miss cost")
    _add(sub, reg, "--c-fa", type=float, default=1.0, help="false-alarm cost")

    sub, reg = _new_subcommand(subparsers, registries, "fratio",
                               "per-phone discriminability table from a score file")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the table")
    _add(sub, reg, "--seed", type=int, default=0, help="resampling seed")
    _add(sub, reg, "--scores", type=str, default=None, help="score file to analyse")
    _add(sub, reg, "--inventory", type=str, default=None, help="inventory file naming the phones")
    _add(sub, reg, "--n-samples", type=int, default=500, help="draws per pool; also the "
         "minimum pool size for a phone to be included")

    sub, reg = _new_subcommand(subparsers, registries, "explain",
                               "export one trial's per-phone evidence")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the explanation")
    _add(sub, reg, "--seed", type=int, default=0, help="unused, accepted for uniformity")
    _add(sub, reg, "--scores", type=str, default=None, help="score file to read")
    _add(sub, reg, "--inventory", type=str, default=None, help="inventory file naming the phones")
    _add(sub, reg, "--index", type=int, default=0, help="0-based trial row to explain")

    sub, reg = _new_subcommand(subparsers, registries, "gradcheck",
                               "finite-difference certification of all gradients")
    _add(sub, reg, "--out-dir", type=str, default=None, help="directory for the report")
    _add(sub, reg, "--seed", type=int, default=0, help="model and batch seed")
    _add(sub, reg, "--feature-dim", type=int, default=5, help="feature width of the toy corpus")
    _add(sub, reg, "--trait-dim", type=int, default=8, help="frame embedding width")
    _add(sub, reg, "--embedding-dim", type=int, default=4, help="speaker embedding width")
    _add(sub, reg, "--n-phones", type=int, default=6, help="inventory size of the toy corpus")
    _add(sub, reg, "--speakers-per-batch", type=int, default=3, help="speakers K in the checked batch")
    _add(sub, reg, "--step-size", type=float, default=1e-5, help="finite difference step")
    _add(sub, reg, "--tolerance", type=float, default=1e-4, help="max relative error to pass")

    return parser, subparsers, registries


def _render_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def _echo_config(command: str, args, registry: dict, out_dir) -> None:
    with atomic_write(Path(out_dir) / CONFIG_ECHO_FILE) as f:
        f.write(f"command={command}\n")
        for dest in sorted(registry):
            f.write(f"{dest}={_render_value(getattr(args, dest))}\n")


def _find_config_value(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _load_config_file(path: str, registry: dict) -> dict:
    overrides = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ParseError(path, line_no, f"expected key=value, got {stripped!r}")
            key = key.strip()
            if key == "command":
                continue
            if key not in registry:
                raise ConfigurationError(f"unknown config key {key!r} in {path}")
            converter = registry[key]
            try:
                overrides[key] = converter(value.strip())
            except ValueError:
                raise ParseError(
                    path, line_no, f"cannot convert {value.strip()!r} for key {key!r}"
                ) from None
    return overrides


def _require(value, flag: str):
    if value is None:
        raise ConfigurationError(f"{flag} is required")
    return value


def _out_dir(args) -> Path:
    return Path(_require(args.out_dir, "--out-dir"))


def _load_corpus(corpus_dir: str):
    base = Path(corpus_dir)
    inventory = load_inventory(base / INVENTORY_FILE)
    features = load_features(base / FEATURES_FILE)
    alignments = load_alignments(base / ALIGNMENTS_FILE, inventory)
    return inventory, features, alignments, CorpusIndex.build(features, alignments)


def cmd_gen_corpus(args) -> int:
    out = _out_dir(args)
    inventory = default_inventory()
    weights = np.ones(inventory.size)
    if args.rare_phone:
        weights[inventory.index_of(args.rare_phone)] = args.rare_phone_weight
    features, alignments, _ = generate_corpus(
        n_speakers=args.n_speakers,
        utts_per_speaker=args.utts_per_speaker,
        inventory=inventory,
        feature_dim=args.feature_dim,
        segment_length_range=(args.segment_min, args.segment_max),
        phones_per_utt_range=(args.phones_min, args.phones_max),
        noise_std=args.noise_std,
        seed=args.seed,
        speaker_spread=args.speaker_spread,
        phone_weights=weights,
    )
    trials = make_trials(features, args.n_target, args.n_nontarget, args.trial_seed)
    save_inventory(inventory, out / INVENTORY_FILE)
    save_features(features, out / FEATURES_FILE)
    save_alignments(alignments, inventory, out / ALIGNMENTS_FILE)
    save_trials(trials, out / TRIALS_FILE)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    inventory, features, _, index = _load_corpus(_require(args.corpus_dir, "--corpus-dir"))
    model_cfg = ModelConfig(
        encoder=EncoderConfig(features[0].dim, parse_layer_string(args.layers)),
        embedding_dim=args.embedding_dim,
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        speakers_per_batch=args.speakers_per_batch,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        seed=args.seed,
        weights=LossWeights(args.alpha, args.beta, args.gamma),
        aam=AamConfig(args.margin, args.scale),
    )

    def save_epoch(epoch: int, state) -> None:
        save_checkpoint(state, model_cfg, out / f"ckpt_epoch{epoch}")

    state, history = train(index, inventory, model_cfg, train_cfg, epoch_callback=save_epoch)
    with atomic_write(out / LOSS_LOG_FILE) as f:
        f.write(LOSS_LOG_HEADER + "\n")
        for rec in history:
            f.write(format_loss_log_line(
                rec.step, rec.total, rec.classification, rec.verification, rec.center
            ) + "\n")
    return EXIT_OK


def cmd_score(args) -> int:
    out = _out_dir(args)
    corpus_dir = _require(args.corpus_dir, "--corpus-dir")
    inventory, features, _, index = _load_corpus(corpus_dir)
    state, model_cfg = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    if model_cfg.encoder.input_dim != features[0].dim:
        raise ConfigurationError(
            f"checkpoint expects {model_cfg.encoder.input_dim}-dim features, "
            f"corpus provides {features[0].dim}"
        )
    trial_path = args.trials if args.trials else str(Path(corpus_dir) / TRIALS_FILE)
    trials = load_trials(trial_path)
    records = score_trials(state, index, trials, inventory.size)
    save_scores(records, out / SCORES_FILE)
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    scores_path = _require(args.scores, "--scores")
    records = load_scores(scores_path)

    def metrics_for(kind: str):
        scores, labels = labelled_scores(records, kind)
        try:
            return compute_metrics(scores, labels, args.p_target, args.c_miss, args.c_fa)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{scores_path}: {kind} scores: {exc}") from None

    final = metrics_for("final")
    evidence = metrics_for("evidence")
    try:
        correlation = explainability_correlation(records)
    except NumericGuardError as exc:
        raise NumericGuardError(f"{scores_path}: {exc}") from None

    entries = [
        ("n_trials", len(records)),
        ("p_target", args.p_target),
        ("c_miss", args.c_miss),
        ("c_fa", args.c_fa),
    ]
    table = []
    for kind, report in (("final", final), ("evidence", evidence)):
        entries.extend([
            (f"{kind}_eer", report.eer),
            (f"{kind}_min_dcf", report.min_dcf),
            (f"{kind}_threshold_at_eer", report.threshold_at_eer),
            (f"{kind}_n_target", report.n_target),
            (f"{kind}_n_nontarget", report.n_nontarget),
        ])
        table.extend([
            (kind, "eer", repr(report.eer)),
            (kind, "min_dcf", repr(report.min_dcf)),
            (kind, "threshold_at_eer", repr(report.threshold_at_eer)),
            (kind, "n_target", str(report.n_target)),
            (kind, "n_nontarget", str(report.n_nontarget)),
        ])
    entries.append(("explain_correlation", correlation))
    table.append(("explain", "correlation", repr(correlation)))
    write_report(entries, out / REPORT_TXT_FILE)
    with atomic_write(out / REPORT_CSV_FILE) as f:
        f.write("kind,metric,value\n")
        for kind, metric, value in table:
            f.write(f"{kind},{metric},{value}\n")
    return EXIT_OK


def cmd_fratio(args) -> int:
    out = _out_dir(args)
    inventory = load_inventory(_require(args.inventory, "--inventory"))
    records = load_scores(_require(args.scores, "--scores"), inventory.size)
    rows = f_ratio(records, inventory, n_samples=args.n_samples, seed=args.seed)
    save_f_ratio(rows, out / FRATIO_FILE)
    return EXIT_OK


def cmd_explain(args) -> int:
    out = _out_dir(args)
    inventory = load_inventory(_require(args.inventory, "--inventory"))
    records = load_scores(_require(args.scores, "--scores"), inventory.size)
    if not 0 <= args.index < len(records):
        raise ConfigurationError(
            f"--index {args.index} out of range for {len(records)} scored trials"
        )
    export_explanation(records[args.index], inventory, out / EXPLANATION_FILE)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    if not 2 <= args.n_phones <= len(CMU_PHONES) + 1:
        raise ConfigurationError("--n-phones must be between 2 and the full inventory size")
    inventory = PhoneInventory(CMU_PHONES[: args.n_phones - 1] + (NON_VERBAL,))
    n_speakers = max(args.speakers_per_batch, 2)
    features, alignments, _ = generate_corpus(
        n_speakers=n_speakers,
        utts_per_speaker=2,
        inventory=inventory,
        feature_dim=args.feature_dim,
        segment_length_range=(2, 4),
        phones_per_utt_range=(4, 8),
        noise_std=0.3,
        seed=args.seed,
        speaker_spread=0.4,
    )
    index = CorpusIndex.build(features, alignments)
    model_cfg = ModelConfig(
        encoder=EncoderConfig(
            args.feature_dim,
            parse_layer_string(f"-1,0,1:{args.trait_dim}:relu"),
        ),
        embedding_dim=args.embedding_dim,
    )
    seq = np.random.SeedSequence(args.seed)
    init_stream, batch_stream = seq.spawn(2)
    state = init_model(model_cfg, n_speakers, init_stream)
    selection = sample_pair_batch(
        index, args.speakers_per_batch, np.random.default_rng(batch_stream)
    )
    report = grad_check(
        state, index, selection, LossWeights(), AamConfig(), inventory.size,
        step_size=args.step_size, tolerance=args.tolerance,
    )
    with atomic_write(out / GRADCHECK_FILE) as f:
        for line in report.lines():
            f.write(line + "\n")
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_GRADCHECK


_HANDLERS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "fratio": cmd_fratio,
    "explain": cmd_explain,
    "gradcheck": cmd_gradcheck,
}


def _print_error(exc: BaseException) -> None:
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers, registries = build_parser()
    try:
        config_path = _find_config_value(argv)
        if config_path is not None:
            command = next((a for a in argv if not a.startswith("-")), None)
            if command not in registries:
                raise ConfigurationError("--config needs a recognised subcommand before it")
            overrides = _load_config_file(config_path, registries[command])
            subparsers.choices[command].set_defaults(**overrides)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse handles --help and bad flags
            return int(exc.code) if exc.code else EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        code = _HANDLERS[args.command](args)
        if args.out_dir is not None:
            _echo_config(args.command, args, registries[args.command], args.out_dir)
        return code
    except FileNotFoundError as exc:
        _print_error(exc)
        return EXIT_MISSING_INPUT
    except ParseError as exc:
        _print_error(exc)
        return EXIT_PARSE
    except (ConfigurationError, DimensionError, BatchError,
            EmptyUtteranceError, UndefinedEvidenceError) as exc:
        _print_error(exc)
        return EXIT_CONFIG
    except (NumericGuardError, DivergenceError) as exc:
        _print_error(exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
