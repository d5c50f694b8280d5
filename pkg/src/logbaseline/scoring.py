"""Evaluation surface: quantile thresholds, precision/recall sweeps,
60-minute temporal anomaly-rate series, class histograms, embedding export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

BASELINE_RATE = 0.001  # expected over-threshold rate at the 99.9th percentile


@dataclass
class ScoredRecord:
    score: float
    timestamp: int
    hostname: str
    label: str  # "benign" | "malicious" | "unlabeled"


def quantile(values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: element at 1-based rank ceil(q*N) ascending."""
    if len(values) == 0:
        raise ValueError("quantile of empty multiset")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile fraction {q} outside (0, 1]")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = math.ceil(q * len(ordered))
    return float(ordered[rank - 1])


@dataclass
class ReportRow:
    q: float  # percentile, e.g. 99.9
    threshold: float
    predicted: int
    true_positives: int
    precision: float
    recall: Optional[float]  # None when no malicious records exist
    empty_prediction: bool  # precision is 1.0-by-convention
    train_reference: bool  # the training-99.9th-percentile row


@dataclass
class ThresholdReport:
    rows: list[ReportRow]
    n_test: int
    n_malicious: int


def _classify(scores: np.ndarray, labels: np.ndarray, threshold: float) -> ReportRow:
    predicted_mask = scores >= threshold  # ties count as anomalous
    predicted = int(predicted_mask.sum())
    tp = int((predicted_mask & labels).sum())
    n_malicious = int(labels.sum())
    if predicted == 0:
        precision, empty = 1.0, True
    else:
        precision, empty = tp / predicted, False
    recall = tp / n_malicious if n_malicious > 0 else None
    return ReportRow(
        q=0.0,
        threshold=threshold,
        predicted=predicted,
        true_positives=tp,
        precision=precision,
        recall=recall,
        empty_prediction=empty,
        train_reference=False,
    )


def default_q_grid() -> list[float]:
    return [round(95.0 + 0.1 * i, 1) for i in range(50)] + [100.0]


def threshold_report(
    test: Sequence[ScoredRecord],
    train_scores: Sequence[float],
    q_grid: Optional[Sequence[float]] = None,
) -> ThresholdReport:
    """Precision/recall per quantile of the test score distribution, plus a
    marked row at the training 99.9th percentile."""
    if q_grid is None:
        q_grid = default_q_grid()
    scores = np.array([r.score for r in test], dtype=np.float64)
    labels = np.array([r.label == "malicious" for r in test], dtype=bool)

    rows = []
    for q in q_grid:
        row = _classify(scores, labels, quantile(scores, q / 100.0))
        row.q = q
        rows.append(row)
    ref = _classify(scores, labels, quantile(train_scores, 0.999))
    ref.q = 99.9
    ref.train_reference = True
    rows.append(ref)
    return ThresholdReport(rows=rows, n_test=len(test), n_malicious=int(labels.sum()))


@dataclass
class TemporalBucket:
    bucket_start: int  # ms
    n_records: int
    n_over: int
    frac_over: float
    malicious_count: int


@dataclass
class TemporalSeries:
    buckets: list[TemporalBucket]
    threshold: float
    bucket_ms: int
    baseline_rate: float = BASELINE_RATE


def temporal_series(
    test: Sequence[ScoredRecord],
    train_p999: float,
    bucket_minutes: int = 60,
) -> TemporalSeries:
    """Fraction of records over threshold per time bucket; empty interior
    buckets are emitted with zero counts."""
    bucket_ms = bucket_minutes * 60_000
    series = TemporalSeries(buckets=[], threshold=train_p999, bucket_ms=bucket_ms)
    if not test:
        return series
    keys = np.array([r.timestamp // bucket_ms for r in test], dtype=np.int64)
    scores = np.array([r.score for r in test], dtype=np.float64)
    malicious = np.array([r.label == "malicious" for r in test], dtype=bool)
    for key in range(int(keys.min()), int(keys.max()) + 1):
        mask = keys == key
        n = int(mask.sum())
        over = int((scores[mask] >= train_p999).sum())
        series.buckets.append(
            TemporalBucket(
                bucket_start=key * bucket_ms,
                n_records=n,
                n_over=over,
                frac_over=over / n if n else 0.0,
                malicious_count=int(malicious[mask].sum()),
            )
        )
    return series


@dataclass
class ClassHistogram:
    edges: np.ndarray  # bins + 1 edges over [0, max score]
    masses: dict[str, np.ndarray]  # per class, len == bins


def histogram(
    scored: Sequence[ScoredRecord],
    bins: int,
    normalize_per_class: bool = True,
) -> ClassHistogram:
    if bins <= 0:
        raise ValueError("bins must be positive")
    scores = np.array([r.score for r in scored], dtype=np.float64)
    top = float(scores.max()) if len(scores) else 1.0
    if top <= 0:
        top = 1.0
    edges = np.linspace(0.0, top, bins + 1)
    masses: dict[str, np.ndarray] = {}
    for cls in sorted({r.label for r in scored}):
        cls_scores = scores[[r.label == cls for r in scored]]
        counts, _ = np.histogram(cls_scores, bins=edges)
        counts = counts.astype(np.float64)
        if normalize_per_class and counts.sum() > 0:
            counts /= counts.sum()
        masses[cls] = counts
    return ClassHistogram(edges=edges, masses=masses)


def export_embeddings(params, vocab, handle: IO[str]) -> int:
    """One line per term: index, term, count, then the embedding floats."""
    for idx, term in enumerate(vocab.terms):
        floats = " ".join(repr(float(x)) for x in params.E[idx])
        handle.write(f"{idx}\t{term}\t{int(vocab.counts[idx])}\t{floats}\n")
    return len(vocab.terms)


# --- scores CSV: timestamp, host, label, score ---

def write_scores_csv(records: Iterable[ScoredRecord], handle: IO[str]) -> None:
    writer = csv.writer(handle)
    writer.writerow(["timestamp", "host", "label", "score"])
    for r in records:
        writer.writerow([r.timestamp, r.hostname, r.label, repr(r.score)])


def read_scores_csv(handle: IO[str]) -> list[ScoredRecord]:
    out = []
    for row in csv.DictReader(handle):
        out.append(
            ScoredRecord(
                score=float(row["score"]),
                timestamp=int(row["timestamp"]),
                hostname=row["host"],
                label=row["label"] or "unlabeled",
            )
        )
    return out


def write_threshold_report_csv(report: ThresholdReport, handle: IO[str]) -> None:
    writer = csv.writer(handle)
    writer.writerow(
        [
            "q",
            "threshold",
            "predicted",
            "true_positives",
            "precision",
            "recall",
            "empty_prediction",
            "train_reference",
        ]
    )
    for row in report.rows:
        writer.writerow(
            [
                row.q,
                repr(row.threshold),
                row.predicted,
                row.true_positives,
                repr(row.precision),
                "" if row.recall is None else repr(row.recall),
                int(row.empty_prediction),
                int(row.train_reference),
            ]
        )


def write_temporal_csv(series: TemporalSeries, handle: IO[str]) -> None:
    writer = csv.writer(handle)
    writer.writerow([f"# threshold={series.threshold!r} bucket_ms={series.bucket_ms} baseline={series.baseline_rate}"])
    writer.writerow(["bucket_start", "n_records", "n_over", "frac_over", "malicious_count"])
    for b in series.buckets:
        writer.writerow([b.bucket_start, b.n_records, b.n_over, repr(b.frac_over), b.malicious_count])


def write_histogram_csv(hist: ClassHistogram, handle: IO[str]) -> None:
    writer = csv.writer(handle)
    classes = sorted(hist.masses)
    writer.writerow(["bin_lo", "bin_hi"] + classes)
    for i in range(len(hist.edges) - 1):
        writer.writerow(
            [repr(float(hist.edges[i])), repr(float(hist.edges[i + 1]))]
            + [repr(float(hist.masses[cls][i])) for cls in classes]
        )
