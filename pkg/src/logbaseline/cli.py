"""Command-line entry point wiring the pipeline stages into subcommands.

Every subcommand is a pure function of (input files, config, seed) to
output files, so re-running with identical inputs reproduces outputs
byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import events, labeler, model, preprocess, scoring, synthgen, vocab as vocab_mod

log = logging.getLogger(__name__)


class CliError(Exception):
    pass


def load_config(path: str) -> dict[str, str]:
    """Flat key=value config file; '#' starts a comment."""
    config: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            config[key.strip()] = value.strip()
    return config


def _preproc_config(config: dict[str, str]) -> preprocess.PreprocConfig:
    return preprocess.PreprocConfig.from_mapping(config)


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}")
    return p


def _token_matrix(term_records, vocab):
    """Tokenize a term-record list into (ids, hosts, timestamps, labels)."""
    ids = np.empty((len(term_records), events.NUM_FIELDS), dtype=np.int64)
    hosts, timestamps, labels = [], [], []
    for i, record in enumerate(term_records):
        ids[i] = [vocab.index_of(term) for term in record.terms]
        hosts.append(record.hostname)
        timestamps.append(record.timestamp)
        labels.append(record.label or "unlabeled")
    return ids, hosts, timestamps, labels


def _read_terms(path: str):
    with open(path, "r", encoding="utf-8") as handle:
        return list(preprocess.read_term_stream(handle))


# --- subcommands ---

def cmd_synth(args, config):
    scenario = synthgen.ScenarioConfig(seed=args.seed)
    if args.train_records:
        scenario.n_train_records = args.train_records
    if args.test_records:
        scenario.n_test_records = args.test_records
    if args.intensity is not None:
        scenario.attack_intensity = args.intensity
    summary = synthgen.generate(scenario, args.out)
    print(
        f"synth: {summary.n_train} train, {summary.n_test} test "
        f"({summary.n_malicious} malicious) -> {args.out}"
    )
    return 0


def cmd_ingest(args, config):
    _require(args.input, "input file")
    stats = events.StreamStats()
    with open(args.out, "w", encoding="utf-8") as out:
        for event in events.stream_corpus(
            args.input, host=args.host, t_start=args.t_from, t_end=args.t_to, stats=stats
        ):
            flat = {
                "id": event.event_id,
                "hostname": event.hostname,
                "timestamp": event.timestamp,
                "pid": event.pid,
                "ppid": event.ppid,
            }
            flat.update({name: event.fields[name] for name in events.FIELD_NAMES})
            out.write(json.dumps(flat) + "\n")
    print(
        f"ingest: read={stats.read} yielded={stats.yielded} "
        f"skipped={stats.skipped} filtered={stats.filtered}"
    )
    return 0


def cmd_preprocess(args, config):
    _require(args.input, "input file")
    pconfig = _preproc_config(config)
    stats = events.StreamStats()
    with open(args.out, "w", encoding="utf-8") as out:
        n = preprocess.write_term_stream(
            (
                preprocess.tokenize(event, pconfig)
                for event in events.stream_corpus(
                    args.input, host=args.host, t_start=args.t_from, t_end=args.t_to,
                    stats=stats,
                )
            ),
            out,
        )
    print(f"preprocess: {n} records -> {args.out} (skipped {stats.skipped})")
    return 0


def cmd_build_vocab(args, config):
    _require(args.input, "term stream")
    pconfig = _preproc_config(config)
    floor = args.floor if args.floor is not None else pconfig.rare_floor
    with open(args.input, "r", encoding="utf-8") as handle:
        vocabulary = vocab_mod.build(preprocess.read_term_stream(handle), floor=floor)
    vocab_mod.save(vocabulary, args.out)
    print(
        f"build-vocab: |V|={len(vocabulary)} total_tokens={vocabulary.total_tokens} "
        f"floor={floor} -> {args.out}"
    )
    return 0


def cmd_label(args, config):
    _require(args.input, "input file")
    _require(args.truth, "ground truth CSV")
    pconfig = _preproc_config(config)
    truth = labeler.load_ground_truth(args.truth)
    forest = labeler.build_process_forest(events.stream_corpus(args.input))
    n_malicious = 0
    with open(args.out, "w", encoding="utf-8") as out:
        def labeled_terms():
            nonlocal n_malicious
            for event, label in labeler.label_events(
                events.stream_corpus(args.input), forest, truth
            ):
                record = preprocess.tokenize(event, pconfig)
                record.label = label
                if label == labeler.MALICIOUS:
                    n_malicious += 1
                yield record

        n = preprocess.write_term_stream(labeled_terms(), out)
    print(f"label: {n} records ({n_malicious} malicious) -> {args.out}")
    return 0


def cmd_train(args, config):
    _require(args.terms, "term stream")
    _require(args.vocab, "vocab file")
    vocabulary = vocab_mod.load(args.vocab)
    ids, _, _, _ = _token_matrix(_read_terms(args.terms), vocabulary)
    mconfig = model.ModelConfig(
        vocab_size=len(vocabulary),
        embed_dim=int(config.get("embed_dim", 8)),
        hidden=int(config.get("hidden", 32)),
        alpha=float(config.get("alpha", 5.0)),
        seed=args.seed,
        learning_rate=float(config.get("learning_rate", 1e-3)),
        batch_size=int(config.get("batch_size", 32)),
        max_batches=args.max_batches,
    )
    result = model.train(
        ids, vocabulary, mconfig, log_every=int(config.get("log_every", 1000))
    )
    checksum = model.vocab_file_checksum(args.vocab)
    model.save_checkpoint(args.out, result.params, mconfig, checksum)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as handle:
            handle.write("batch,weighted_ce,recon,total\n")
            for batch, wce, recon, total in result.history:
                handle.write(f"{batch},{wce!r},{recon!r},{total!r}\n")
    if result.history:
        first, last = result.history[0], result.history[-1]
        print(
            f"train: {args.max_batches} batches, running-mean total "
            f"{first[3]:.3f} -> {last[3]:.3f} -> {args.out}"
        )
    else:
        print(f"train: 0 batches (initialization only) -> {args.out}")
    return 0


def _load_scored_model(args):
    _require(args.checkpoint, "checkpoint")
    _require(args.vocab, "vocab file")
    params, mconfig, expected = model.load_checkpoint(args.checkpoint)
    actual = model.vocab_file_checksum(args.vocab)
    if actual != expected:
        raise CliError(
            f"vocab file {args.vocab} does not match the checkpoint's vocabulary "
            f"(sha256 {actual} != {expected})"
        )
    return params, mconfig, vocab_mod.load(args.vocab)


def cmd_score(args, config):
    _require(args.terms, "term stream")
    params, mconfig, vocabulary = _load_scored_model(args)
    ids, hosts, timestamps, labels = _token_matrix(_read_terms(args.terms), vocabulary)
    scores = model.score_records(
        params, ids, vocabulary.weight_vector(), mconfig.alpha, mode=args.mode
    )
    with open(args.out, "w", encoding="utf-8", newline="") as handle:
        scoring.write_scores_csv(
            (
                scoring.ScoredRecord(
                    score=float(s), timestamp=t, hostname=h, label=l
                )
                for s, t, h, l in zip(scores, timestamps, hosts, labels)
            ),
            handle,
        )
    print(f"score: {len(scores)} records (mode={args.mode}) -> {args.out}")
    return 0


def cmd_report(args, config):
    _require(args.scores, "test scores CSV")
    _require(args.train_scores, "training scores CSV")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.scores, "r", encoding="utf-8", newline="") as handle:
        test = scoring.read_scores_csv(handle)
    with open(args.train_scores, "r", encoding="utf-8", newline="") as handle:
        train_scores = [r.score for r in scoring.read_scores_csv(handle)]
    if args.host:
        test = [r for r in test if r.hostname == args.host]

    report = scoring.threshold_report(test, train_scores)
    with open(out_dir / "threshold_report.csv", "w", encoding="utf-8", newline="") as handle:
        scoring.write_threshold_report_csv(report, handle)

    train_p999 = scoring.quantile(train_scores, 0.999)
    series = scoring.temporal_series(test, train_p999, bucket_minutes=args.bucket_minutes)
    with open(out_dir / "temporal.csv", "w", encoding="utf-8", newline="") as handle:
        scoring.write_temporal_csv(series, handle)

    hist = scoring.histogram(test, bins=args.bins)
    with open(out_dir / "histogram.csv", "w", encoding="utf-8", newline="") as handle:
        scoring.write_histogram_csv(hist, handle)

    if args.checkpoint and args.vocab:
        params, _, vocabulary = _load_scored_model(args)
        with open(out_dir / "embeddings.tsv", "w", encoding="utf-8") as handle:
            scoring.export_embeddings(params, vocabulary, handle)

    print(f"report: {len(test)} test records, train p99.9={train_p999!r} -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logbaseline",
        description="Learned baseline anomaly detection for telemetry logs",
    )
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train-records", type=int)
    p.add_argument("--test-records", type=int)
    p.add_argument("--intensity", type=float)
    p.set_defaults(func=cmd_synth)

    for name, func in (("ingest", cmd_ingest), ("preprocess", cmd_preprocess)):
        p = sub.add_parser(name)
        p.add_argument("--input", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--host")
        p.add_argument("--from", dest="t_from", type=int)
        p.add_argument("--to", dest="t_to", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("build-vocab", help="build the term vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--floor", type=int)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("label", help="label raw test events and emit terms")
    p.add_argument("--input", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train")
    p.add_argument("--terms", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-batches", type=int, default=50_000)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score")
    p.add_argument("--terms", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("ce", "full"), default="ce")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="emit threshold/temporal/histogram reports")
    p.add_argument("--scores", required=True)
    p.add_argument("--train-scores", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--host")
    p.add_argument("--bucket-minutes", type=int, default=60)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(args.config) if args.config else {}
    try:
        return args.func(args, config)
    except (CliError, OSError, ValueError, vocab_mod.VocabError, model.ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
