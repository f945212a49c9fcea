"""RR-interval segment datasets: parsing, validation, filtering, synthesis, folds.

Segment file format (UTF-8 text, one record per line):

    patient_id,label,segment_id,i1 i2 i3 ...

where intervals are milliseconds (decimal values allowed) and lines starting
with ``#`` are comments.  Fold files are ``patient_id,fold_index`` lines.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError, SpanError, ValidationError

log = logging.getLogger(__name__)

SEGMENT_DURATION_MS = 60_000.0

# Filter thresholds: a usable one-minute segment needs at least this many
# distinct interval values and an apparent heart rate inside [HR_MIN, HR_MAX].
MIN_UNIQUE_VALUES = 64
HR_MIN = 30.0
HR_MAX = 180.0


@dataclass(frozen=True)
class RRSegment:
    """One labeled 60-second inter-beat-interval series from one patient."""

    patient_id: str
    label: int
    segment_id: str
    intervals: tuple[float, ...]

    def validate(self) -> None:
        if not self.intervals:
            raise ValidationError(f"segment {self.segment_id}: empty interval list")
        if self.label not in (0, 1):
            raise ValidationError(f"segment {self.segment_id}: label must be 0 or 1")
        for x in self.intervals:
            if not math.isfinite(x) or x <= 0:
                raise ValidationError(
                    f"segment {self.segment_id}: non-positive or non-finite interval {x!r}"
                )
        total = sum(self.intervals)
        if total > SEGMENT_DURATION_MS + max(self.intervals):
            raise ValidationError(
                f"segment {self.segment_id}: intervals span {total:.0f} ms, "
                f"more than one minute plus one beat"
            )

    @property
    def mean_rr(self) -> float:
        return sum(self.intervals) / len(self.intervals)


@dataclass
class Dataset:
    """A collection of validated segments with a derived per-patient index."""

    segments: list[RRSegment]
    patients: dict[str, tuple[int, list[str]]] = field(init=False)

    def __post_init__(self) -> None:
        self.patients = {}
        seen_ids: set[str] = set()
        for seg in self.segments:
            if seg.segment_id in seen_ids:
                raise IntegrityError(f"duplicate segment_id {seg.segment_id!r}")
            seen_ids.add(seg.segment_id)
            if seg.patient_id in self.patients:
                label, ids = self.patients[seg.patient_id]
                if label != seg.label:
                    raise IntegrityError(
                        f"patient {seg.patient_id!r} carries labels {label} and {seg.label}"
                    )
                ids.append(seg.segment_id)
            else:
                self.patients[seg.patient_id] = (seg.label, [seg.segment_id])

    def __len__(self) -> int:
        return len(self.segments)

    def patient_ids(self) -> list[str]:
        return list(self.patients)

    def label_of(self, patient_id: str) -> int:
        return self.patients[patient_id][0]


@dataclass(frozen=True)
class FoldAssignment:
    """Patient-level fold labels for k-fold cross-validation."""

    k: int
    fold_of_patient: dict[str, int]

    def patients_in_fold(self, fold: int) -> list[str]:
        return [p for p, f in self.fold_of_patient.items() if f == fold]


class FilterResult(NamedTuple):
    accepted: bool
    reasons: tuple[str, ...]


def filter_segment(seg: RRSegment) -> FilterResult:
    """Apply the two segment-quality rules; reasons name every rule that fired.

    Rule ``unique_values``: fewer than 64 distinct interval values.
    Rule ``heart_rate``: apparent heart rate 60000/mean(rr) below 30 or above 180.
    """
    reasons = []
    if len(set(seg.intervals)) < MIN_UNIQUE_VALUES:
        reasons.append("unique_values")
    hr = 60_000.0 / seg.mean_rr
    if hr < HR_MIN or hr > HR_MAX:
        reasons.append("heart_rate")
    return FilterResult(not reasons, tuple(reasons))


def _parse_line(line: str, line_no: int) -> RRSegment:
    parts = line.split(",")
    if len(parts) != 4:
        raise ParseError(f"expected 4 comma-separated fields, got {len(parts)}", line_no)
    patient_id, label_str, segment_id, interval_str = (p.strip() for p in parts)
    if not patient_id or not segment_id:
        raise ParseError("empty patient_id or segment_id", line_no)
    if label_str not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {label_str!r}", line_no)
    try:
        intervals = tuple(float(tok) for tok in interval_str.split())
    except ValueError as exc:
        raise ParseError(f"bad interval value: {exc}", line_no) from exc
    seg = RRSegment(patient_id, int(label_str), segment_id, intervals)
    try:
        seg.validate()
    except ValidationError as exc:
        raise ParseError(str(exc), line_no) from exc
    return seg


def parse_segments(source) -> Dataset:
    """Read a segment file (path or iterable of lines) into a Dataset.

    Preserves input order; raises ParseError with the line number on a
    malformed record and IntegrityError if one patient carries two labels.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)
    segments = []
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        segments.append(_parse_line(line, i))
    return Dataset(segments)


def write_segments(path: str, ds: Dataset) -> None:
    """Write a Dataset in the segment file format (full-precision decimals)."""
    with open(path, "w", encoding="utf-8") as fh:
        for seg in ds.segments:
            ivals = " ".join(repr(float(x)) for x in seg.intervals)
            fh.write(f"{seg.patient_id},{seg.label},{seg.segment_id},{ivals}\n")


def extract_segments(
    beat_times: Sequence[float],
    n_segments: int = 100,
    duration_ms: float = SEGMENT_DURATION_MS,
    seed: int = 0,
    patient_id: str = "unknown",
    label: int = 0,
) -> list[RRSegment]:
    """Randomly extract filtered fixed-length windows from a beat-time series.

    Start times are drawn uniformly (seeded); windows whose interval series
    fails filter_segment are discarded and redrawn, up to 10*n_segments draws
    total.  May return fewer than n_segments when the budget runs out.
    """
    beats = np.asarray(beat_times, dtype=float)
    if beats.ndim != 1 or len(beats) < 2:
        raise ValidationError("need at least two beat timestamps")
    if not np.all(np.diff(beats) > 0):
        raise ValidationError("beat_times must be strictly ascending")
    span = beats[-1] - beats[0]
    if span < duration_ms:
        raise SpanError(f"recording spans {span:.0f} ms < window {duration_ms:.0f} ms")
    if n_segments <= 0:
        return []

    rng = np.random.default_rng(seed)
    out: list[RRSegment] = []
    budget = 10 * n_segments
    draws = 0
    while len(out) < n_segments and draws < budget:
        draws += 1
        start = beats[0] + rng.uniform(0.0, span - duration_ms)
        inside = beats[(beats >= start) & (beats < start + duration_ms)]
        if len(inside) < 2:
            continue
        seg = RRSegment(
            patient_id,
            label,
            f"{patient_id}-s{len(out):04d}",
            tuple(np.diff(inside).tolist()),
        )
        if filter_segment(seg).accepted:
            out.append(seg)
    if len(out) < n_segments:
        log.warning(
            "extract_segments: retry budget exhausted, %d of %d windows rejected; "
            "returning %d segments",
            draws - len(out),
            draws,
            len(out),
        )
    return out


@dataclass(frozen=True)
class ClassParams:
    """AR(1) generator settings for one class of synthetic RR series."""

    mean_rr: float
    jitter_sd: float  # innovation standard deviation, ms
    ar_coeff: float  # lag-1 autoregressive coefficient
    patient_sd: float = 10.0  # between-patient spread of the mean, ms


DEFAULT_CLASS0 = ClassParams(mean_rr=850.0, jitter_sd=60.0, ar_coeff=0.5)
DEFAULT_CLASS1 = ClassParams(mean_rr=820.0, jitter_sd=15.0, ar_coeff=0.9)

_SYNTH_TRIES_PER_SEGMENT = 200


def _synth_segment(rng: np.random.Generator, mean_rr: float, params: ClassParams) -> tuple[float, ...]:
    vals = []
    x = 0.0
    total = 0.0
    while total < SEGMENT_DURATION_MS:
        x = params.ar_coeff * x + rng.normal(0.0, params.jitter_sd)
        rr = max(mean_rr + x, 1.0)
        vals.append(rr)
        total += rr
    return tuple(vals)


def synth_dataset(
    n_patients_per_class: int,
    segments_per_patient: int,
    class0: ClassParams = DEFAULT_CLASS0,
    class1: ClassParams = DEFAULT_CLASS1,
    seed: int = 0,
) -> Dataset:
    """Generate a two-class synthetic dataset of filtered one-minute segments.

    Class 0 mimics normal variability, class 1 reduced variability; every
    emitted segment passes filter_segment.  Deterministic under seed.
    """
    if n_patients_per_class < 1 or segments_per_patient < 1:
        raise ConfigError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    segments: list[RRSegment] = []
    for label, params in ((0, class0), (1, class1)):
        for p in range(n_patients_per_class):
            pid = f"P{label}{p:03d}"
            patient_mean = params.mean_rr + rng.normal(0.0, params.patient_sd)
            for s in range(segments_per_patient):
                for _ in range(_SYNTH_TRIES_PER_SEGMENT):
                    seg = RRSegment(
                        pid, label, f"{pid}-s{s:04d}", _synth_segment(rng, patient_mean, params)
                    )
                    if filter_segment(seg).accepted:
                        break
                else:
                    raise ConfigError(
                        f"class {label} generator parameters cannot produce segments "
                        f"passing the filter (tried {_SYNTH_TRIES_PER_SEGMENT} draws)"
                    )
                segments.append(seg)
    return Dataset(segments)


def stratified_folds(ds: Dataset, k: int, seed: int = 0) -> FoldAssignment:
    """Assign patients to k folds, shuffled within class, dealt round-robin.

    All segments of a patient inherit the patient's fold, so folds never
    split a patient; per-class fold sizes differ by at most one.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    patients = ds.patient_ids()
    if len(patients) < k:
        raise ValidationError(f"{len(patients)} patients < k={k}")
    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    counter = 0
    for label in (0, 1):
        group = sorted(p for p in patients if ds.label_of(p) == label)
        rng.shuffle(group)
        for p in group:
            fold_of[p] = counter % k
            counter += 1
    return FoldAssignment(k, fold_of)


def write_folds(path: str, fa: FoldAssignment) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for patient_id, fold in fa.fold_of_patient.items():
            fh.write(f"{patient_id},{fold}\n")


def read_folds(path: str) -> FoldAssignment:
    fold_of: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError("expected patient_id,fold_index", i)
            try:
                fold_of[parts[0].strip()] = int(parts[1])
            except ValueError as exc:
                raise ParseError(f"bad fold index: {exc}", i) from exc
    k = max(fold_of.values()) + 1 if fold_of else 0
    return FoldAssignment(k, fold_of)


def segments_by_fold(ds: Dataset, fa: FoldAssignment, fold: int) -> tuple[list[RRSegment], list[RRSegment]]:
    """Split a dataset into (train, test) segment lists for one fold."""
    train, test = [], []
    for seg in ds.segments:
        if fa.fold_of_patient[seg.patient_id] == fold:
            test.append(seg)
        else:
            train.append(seg)
    return train, test
