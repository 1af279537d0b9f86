# src/cli.py
"""
Command-line entry point.

    python -m src.cli synth          --config configs/desk.yaml
    python -m src.cli featurize      --config configs/desk.yaml --jobs 4
    python -m src.cli train-phonetic --config configs/desk.yaml
    python -m src.cli train-lid      --config configs/desk.yaml --set model.input_mode=Ptn
    python -m src.cli score          --config configs/desk.yaml
    python -m src.cli eval           --config configs/desk.yaml --plot
    python -m src.cli compare        --config configs/desk.yaml --seeds 0 1 2

Exit codes: 0 ok, 1 invalid arguments/config, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .alignments import frame_labels_by_utt
from .config import ConfigError, RunConfig, load_run_config, validate_for_command
from .dsp_frontend import FeatureMatrix, fbank, mfcc, read_wav
from .gradcheck import run_suite
from .io_features import read_feature_archive, write_feature_archive
from .io_model import load_lid_model, load_tdnn, save_model
from .models import PHONETIC_MODES, ModelDims, Posteriorgram, build_model, forward_utterance
from .scoring_metrics import (
    ScoreMatrix, curve_records, degradation_table, det_curve, duration_curve, duration_distribution,
    frame_score_matrix, metrics_report, read_scores_tsv, score_matrix_from_posteriorgrams,
    utterance_trials, write_curve_csv, write_metrics_json, write_scores_tsv,
)
from .settings import LOG_ENV, __version__, derive_rng, parallel_map
from .synth_data import CorpusManifest, augment_corpus, build_experiment, condition_value, slice_corpus
from .tdnn import TdnnStack, apply_low_rank
from .training import Utterance, train

logger = logging.getLogger("src.cli")


def setup_logging(verbose: int = 0, quiet: bool = False) -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if verbose == 1:
        level = "INFO"
    elif verbose >= 2:
        level = "DEBUG"
    if quiet:
        level = "ERROR"
    logging.basicConfig(format="%(levelname)s: %(name)s: %(message)s", level=level, force=True)


def feature_archive(cfg: RunConfig, condition: str, kind: str = "fbank") -> Path:
    return cfg.paths.features_dir / f"{condition}.{kind}.feats"


# ------------------------------------------------------------
# Corpus helpers
# ------------------------------------------------------------

def load_utterances(cfg: RunConfig, corpus: CorpusManifest, pool: str, heads: Set[str],
                    split: str = "train") -> Tuple[List[Utterance], int]:
    """Clean utterances of (split, pool) with per-frame targets for `heads`; returns (utts, feat_dim)."""
    rows = corpus.select(split=split, pool=pool, condition="clean")
    if rows.empty:
        raise ConfigError(f"Nenhuma utterance em split={split}, pool={pool}")
    feats = read_feature_archive(feature_archive(cfg, "clean"), cfg.frontend.frame_shift)
    phones = {}
    if "phone" in heads:
        ali = corpus.alignments[corpus.alignments["utt_id"].isin(rows["utt_id"])]
        phones = frame_labels_by_utt(ali)
    utts = []
    for row in rows.itertuples(index=False):
        if row.utt_id not in feats:
            raise ValueError(f"{row.utt_id}: ausente do arquivo de features")
        f = feats[row.utt_id]
        targets = {}
        if "lid" in heads:
            targets["lid"] = np.full(f.num_frames, int(row.lang_index), dtype=np.int64)
        if "phone" in heads:
            labels = phones.get(row.utt_id)
            if labels is None or len(labels) != f.num_frames:
                raise ValueError(f"{row.utt_id}: alinhamento com {0 if labels is None else len(labels)} frames, "
                                 f"features com {f.num_frames}")
            targets["phone"] = labels
        utts.append(Utterance(row.utt_id, f.data, targets))
    return utts, utts[0].feats.shape[1]


def _featurize_one(args) -> Tuple[str, FeatureMatrix, int]:
    root, row, frontend, kind, seed = args
    wave = read_wav(Path(root) / row["wav_path"])
    utt_seed = int(derive_rng(seed, "featurize", row["utt_id"]).integers(2**31))
    f = fbank(wave, frontend, utt_seed) if kind == "fbank" else mfcc(wave, frontend, utt_seed)
    return row["utt_id"], f, int(row["num_frames"])


def _score_chunk(args) -> List[Tuple[str, np.ndarray]]:
    model, items = args
    return [(utt_id, forward_utterance(model, FeatureMatrix(data, "Fbank"), utt_id).data) for utt_id, data in items]


# ------------------------------------------------------------
# Commands
# ------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> None:
    corpus = build_experiment(cfg.experiment, cfg.paths.data_dir, cfg.frontend, jobs=args.jobs)
    print(f"{len(corpus.manifest)} utterances -> {cfg.paths.data_dir / 'manifest.tsv'}")


def cmd_featurize(cfg: RunConfig, args) -> None:
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    for condition in corpus.conditions():
        rows = corpus.select(condition=condition)
        tasks = [(corpus.root, row, cfg.frontend, args.kind, cfg.seed) for row in rows.to_dict("records")]
        out = {}
        for utt_id, f, expected in parallel_map(_featurize_one, tasks, args.jobs):
            if args.kind == "fbank" and f.num_frames != expected:
                logger.warning("%s: %d frames, manifest diz %d", utt_id, f.num_frames, expected)
            out[utt_id] = f
        path = write_feature_archive(feature_archive(cfg, condition, args.kind), out)
        logger.info("%s: %d utterances -> %s", condition, len(out), path)
    print(f"features -> {cfg.paths.features_dir}")


def cmd_train_phonetic(cfg: RunConfig, args) -> None:
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    tdnn_cfg = cfg.phonetic.tdnn
    heads = {"phone", "lid"} if tdnn_cfg.lid_head else {"phone"}
    utts, feat_dim = load_utterances(cfg, corpus, cfg.phonetic.pool, heads)
    num_languages = corpus.select(pool=cfg.phonetic.pool)["lang_index"].nunique()
    stack = TdnnStack.init(tdnn_cfg, feat_dim, corpus.num_phones, num_languages, seed=cfg.seed)
    stack, log = train(stack, utts, cfg.phonetic.train)
    if tdnn_cfg.low_rank is not None:
        stack = apply_low_rank(stack, tdnn_cfg.low_rank, tdnn_cfg.low_rank_layer)
    path = save_model(cfg.paths.phonetic_out, stack)
    log.to_csv(path.with_suffix(".train.csv"), index=False, float_format="%.6f")
    print(f"phonetic DNN -> {path}")


def cmd_train_lid(cfg: RunConfig, args) -> None:
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    spec = cfg.model
    languages = corpus.target_languages()
    if spec.num_languages != len(languages):
        raise ConfigError(f"model.num_languages={spec.num_languages}, corpus tem {len(languages)} línguas-alvo")
    heads = {"lid", "phone"} if spec.multitask else {"lid"}
    if spec.multitask and spec.num_phones < corpus.num_phones:
        raise ConfigError(f"model.num_phones={spec.num_phones} < {corpus.num_phones} fones no corpus")
    utts, feat_dim = load_utterances(cfg, corpus, "target", heads)
    phonetic = load_tdnn(spec.phonetic_dnn) if spec.input_mode in PHONETIC_MODES else None
    model = build_model(spec, ModelDims(fbank_dim=feat_dim), phonetic, seed=cfg.seed)
    model, log = train(model, utts, cfg.train)
    model.clear_phi_cache()
    path = save_model(cfg.paths.model_out, model)
    log.to_csv(path.with_suffix(".train.csv"), index=False, float_format="%.6f")
    print(f"LID model -> {path}")


def cmd_score(cfg: RunConfig, args) -> None:
    model = load_lid_model(cfg.scored_model)
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    test = corpus.select(split="test", pool="target")
    conditions = args.conditions or list(dict.fromkeys(test["condition"]))
    for condition in conditions:
        rows = test[test["condition"] == condition]
        if rows.empty:
            raise ConfigError(f"Condição sem utterances de teste: {condition}")
        feats = read_feature_archive(feature_archive(cfg, condition), cfg.frontend.frame_shift)
        items = [(u, feats[u].data) for u in rows["utt_id"]]
        n_chunks = max(1, min(args.jobs, len(items)))
        chunks = [(model, items[k::n_chunks]) for k in range(n_chunks)]
        scored = dict(kv for chunk in parallel_map(_score_chunk, chunks, args.jobs) for kv in chunk)
        pgs = [Posteriorgram(u, scored[u]) for u in rows["utt_id"]]
        labels = rows["lang_index"].to_numpy()
        write_scores_tsv(cfg.paths.scores_dir / f"frame_{condition}.tsv", frame_score_matrix(pgs, labels))
        write_scores_tsv(cfg.paths.scores_dir / f"utt_{condition}.tsv", score_matrix_from_posteriorgrams(pgs, labels))
        logger.info("%s: %d utterances pontuadas", condition, len(pgs))
    print(f"scores -> {cfg.paths.scores_dir}")


def cmd_eval(cfg: RunConfig, args) -> None:
    scores_dir, out_dir = cfg.paths.scores_dir, cfg.paths.eval_dir
    conditions = sorted(p.stem[len("utt_"):] for p in scores_dir.glob("utt_*.tsv"))
    matrices: Dict[str, Tuple[ScoreMatrix, ScoreMatrix]] = {
        c: (read_scores_tsv(scores_dir / f"frame_{c}.tsv"), read_scores_tsv(scores_dir / f"utt_{c}.tsv"))
        for c in conditions
    }
    reports = {c: metrics_report(f, u, cfg.eval.p_target) for c, (f, u) in matrices.items()}
    clean_name = cfg.eval.clean_condition
    if clean_name not in reports:
        raise ConfigError(f"Condição de referência '{clean_name}' sem scores")
    clean = reports[clean_name].model_copy(update={
        "conditions": {c: {m: r.metric(m) for m in ("cavg_frame", "cavg_utt", "eer_frame_pct", "eer_utt_pct")}
                       for c, r in reports.items()},
    })
    write_metrics_json(out_dir / "metrics.json", clean)

    det = pd.concat([curve_records(det_curve(*utterance_trials(u)), "p_fa", "p_miss", c)
                     for c, (_, u) in matrices.items()], ignore_index=True)
    write_curve_csv(out_dir / "det.csv", det)

    noisy = {v: reports[c] for c in conditions if (v := condition_value(c, "snr")) is not None}
    table = None
    if noisy:
        table = degradation_table(clean, noisy, on_zero="nan")
        write_curve_csv(out_dir / "degradation_table.csv", table)
        long = pd.concat([curve_records(table, "snr_db", col, col.replace("_rate_pct", ""))
                          for col in table.columns if col != "snr_db"], ignore_index=True)
        write_curve_csv(out_dir / "degradation.csv", long)

    by_dur = {v: matrices[c] for c in conditions if (v := condition_value(c, "dur")) is not None}
    if by_dur:
        write_curve_csv(out_dir / "duration.csv", duration_curve(by_dur, cfg.eval.p_target))

    manifest = cfg.paths.data_dir / "manifest.tsv"
    if manifest.exists():
        corpus = CorpusManifest.read(cfg.paths.data_dir)
        test = corpus.select(split="test", pool="target", condition=clean_name)
        if not test.empty:
            write_curve_csv(out_dir / "duration_distribution.csv", duration_distribution(test["duration_s"]))

    if args.plot or cfg.eval.plot:
        from .plots import plot_degradation, plot_det
        plot_det(det, out_dir / "det.png")
        if table is not None:
            plot_degradation(table, out_dir / "degradation.png")

    print(f"cavg_utt={clean.cavg_utt:.4f} eer_utt={clean.eer_utt_pct:.2f}% "
          f"cavg_frame={clean.cavg_frame:.4f} eer_frame={clean.eer_frame_pct:.2f}% -> {out_dir}")


def cmd_augment(cfg: RunConfig, args) -> None:
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    snrs = args.snr or list(cfg.experiment.snr_db)
    augment_corpus(corpus, snrs, cfg.experiment.seed, jobs=args.jobs)
    print(f"noisy copies at {snrs} dB -> {cfg.paths.data_dir}")


def cmd_slice(cfg: RunConfig, args) -> None:
    corpus = CorpusManifest.read(cfg.paths.data_dir)
    durations = args.durations or list(cfg.experiment.durations_s)
    slice_corpus(corpus, durations, cfg.experiment.seed, cfg.frontend, jobs=args.jobs)
    print(f"slices of {durations} s -> {cfg.paths.data_dir}")


def cmd_compare(cfg: RunConfig, args) -> None:
    from .experiments import DEFAULT_SYSTEMS, acceptance_checks, majority, run_comparison
    seeds = args.seeds or [cfg.seed]
    table = run_comparison(cfg, cfg.paths.eval_dir / "compare", args.systems or DEFAULT_SYSTEMS, seeds, args.jobs)
    checks = acceptance_checks(table, margin=args.margin, clean=cfg.eval.clean_condition)
    write_curve_csv(cfg.paths.eval_dir / "comparison.csv", table)
    write_curve_csv(cfg.paths.eval_dir / "acceptance.csv", checks)
    print(majority(checks).to_string(index=False))


def cmd_gradcheck(cfg: RunConfig, args) -> None:
    table = run_suite(cfg.seed, args.tolerance)
    print(table.to_string(index=False))


COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic corpus"),
    "featurize": (cmd_featurize, "write feature archives for every condition"),
    "train-phonetic": (cmd_train_phonetic, "train the phonetic TDNN"),
    "train-lid": (cmd_train_lid, "train a LID model"),
    "score": (cmd_score, "write frame and utterance scores"),
    "eval": (cmd_eval, "metrics report, DET/degradation/duration curves"),
    "augment": (cmd_augment, "noisy copies of the clean test set"),
    "slice": (cmd_slice, "fixed-duration slices of the clean test set"),
    "compare": (cmd_compare, "train and evaluate several systems over seeds"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient checks"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptn-lid", description="Phonetic temporal neural LID toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="single seed for every random stream")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    subs["featurize"].add_argument("--kind", choices=("fbank", "mfcc"), default="fbank")
    subs["score"].add_argument("--conditions", nargs="*", help="test conditions to score (default: all)")
    subs["eval"].add_argument("--plot", action="store_true", help="render DET/degradation PNGs")
    subs["augment"].add_argument("--snr", type=float, nargs="+", help="SNRs in dB")
    subs["slice"].add_argument("--durations", type=float, nargs="+", help="slice lengths in seconds")
    subs["compare"].add_argument("--seeds", type=int, nargs="+", help="seeds to repeat the comparison with")
    subs["compare"].add_argument("--systems", nargs="+", help="systems to compare (default: all but phaware)")
    subs["compare"].add_argument("--margin", type=float, default=2.0, help="EER points required by the checks")
    subs["gradcheck"].add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    setup_logging(args.verbose, args.quiet)

    try:
        cfg = load_run_config(args.config, args.overrides, args.seed)
        validate_for_command(cfg, args.command)
    except (ValueError, ValidationError) as e:
        logger.error("Configuração inválida: %s", e)
        return 1
    if args.dry_run:
        logger.info("%s: configuração válida (dry-run)", args.command)
        return 0

    handler, _ = COMMANDS[args.command]
    try:
        handler(cfg, args)
    except (ConfigError, ValidationError) as e:
        logger.error("%s", e)
        return 1
    except Exception as e:
        logger.error("%s falhou: %s: %s", args.command, type(e).__name__, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
