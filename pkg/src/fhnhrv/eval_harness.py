"""Patient-stratified cross-validation, classification metrics, cTnI comparator.

Metrics: sensitivity/specificity at a decision threshold (default 0.5, with
the Youden-optimal point reported alongside), and ROC AUC as the Mann-Whitney
statistic computed from midranks in O(n log n) — exactly equal to the
pairwise definition with ties counted as half.

cross_validate trains on out-of-fold patients' segments and scores in-fold
segments; no segment of a test patient can ever reach the training side.
Metrics are reported both per segment and per patient (mean segment score).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import MetricError, ValidationError
from .fhn_layer import DriveConfig
from .optimizers import TrainConfig
from .rr_data import Dataset, RRSegment, segments_by_fold, stratified_folds

log = logging.getLogger(__name__)


def _check_classes(labels: np.ndarray) -> None:
    if labels.min() == labels.max():
        raise MetricError("metric undefined: only one class present")


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(score_pos > score_neg) + 0.5*P(tie), via midranks.

    Midranks are integers or half-integers, so the rank-sum formula is
    float-exact and matches the brute-force pairwise count bit for bit.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if len(s) != len(y) or len(s) == 0:
        raise MetricError("scores and labels must be equal-length and non-empty")
    _check_classes(y)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def sens_spec(scores: Sequence[float], labels: Sequence[int],
              threshold: float = 0.5) -> tuple[float, float]:
    """(sensitivity, specificity) when predicting positive at score >= threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    _check_classes(y)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    fp = int(np.sum(pred & (y == 0)))
    return tp / (tp + fn), tn / (tn + fp)


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) sweep from (0,0) to (1,1), thresholds descending."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    _check_classes(y)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    points = [(0.0, 0.0, math.inf)]
    for thr in np.unique(s)[::-1]:
        pred = s >= thr
        tpr = float(np.sum(pred & (y == 1))) / n_pos
        fpr = float(np.sum(pred & (y == 0))) / n_neg
        points.append((fpr, tpr, float(thr)))
    return points


def youden_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Threshold maximizing sensitivity + specificity - 1."""
    best_thr, best_j = math.inf, -math.inf
    for fpr, tpr, thr in roc_points(scores, labels):
        j = tpr - fpr
        if j > best_j:
            best_j, best_thr = j, thr
    return best_thr


def write_roc_csv(path: str, points: Sequence[tuple[float, float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr,threshold\n")
        for fpr, tpr, thr in points:
            fh.write(f"{fpr!r},{tpr!r},{thr!r}\n")


# -- cross-validation ----------------------------------------------------------

class FoldMetrics(NamedTuple):
    sensitivity: Optional[float]
    specificity: Optional[float]
    auc: Optional[float]


ScorerFactory = Callable[[list[RRSegment], int], Callable[[RRSegment], float]]


@dataclass
class CVConfig:
    """Everything cross_validate needs to build and train fold models."""

    train: TrainConfig = field(default_factory=TrainConfig)
    n_neurons: int = 8
    hidden_sizes: tuple[int, ...] = (16, 8)
    drive: DriveConfig = field(default_factory=DriveConfig)
    temperature: float = 0.1
    pretune_budget: int = 60
    pretune_subsample: int = 16
    rf_trees: int = 30
    max_train_segments: Optional[int] = None  # per-fold cap, subsampled by seed
    threshold: float = 0.5


@dataclass
class FoldReport:
    n_folds: int
    segment_level: list[FoldMetrics]
    patient_level: list[FoldMetrics]
    threshold: float
    youden: list[float]
    warnings: list[str] = field(default_factory=list)

    def aggregate(self, level: str = "segment") -> dict[str, tuple[float, float]]:
        """Mean and population std per metric over folds where it is defined."""
        rows = self.segment_level if level == "segment" else self.patient_level
        out = {}
        for name in FoldMetrics._fields:
            vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            if vals:
                out[name] = (float(np.mean(vals)), float(np.std(vals)))
            else:
                out[name] = (math.nan, math.nan)
        return out

    def summary_lines(self) -> list[str]:
        lines = [f"folds={self.n_folds} threshold={self.threshold}"]
        for level in ("segment", "patient"):
            agg = self.aggregate(level)
            for name in FoldMetrics._fields:
                mean, std = agg[name]
                lines.append(f"{level}.{name}: {mean:.4f} +- {std:.4f}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return lines

    def to_csv(self) -> str:
        out = ["fold,level,sensitivity,specificity,auc"]

        def fmt(v):
            return "" if v is None else repr(v)

        for level, rows in (("segment", self.segment_level), ("patient", self.patient_level)):
            for i, r in enumerate(rows):
                out.append(f"{i},{level},{fmt(r.sensitivity)},{fmt(r.specificity)},{fmt(r.auc)}")
            agg = self.aggregate(level)
            means = ",".join(repr(agg[n][0]) for n in FoldMetrics._fields)
            stds = ",".join(repr(agg[n][1]) for n in FoldMetrics._fields)
            out.append(f"mean,{level},{means}")
            out.append(f"std,{level},{stds}")
        return "\n".join(out) + "\n"


def _metrics_for(scores: np.ndarray, labels: np.ndarray, threshold: float,
                 fold: int, level: str, warnings: list[str]) -> FoldMetrics:
    if labels.min() == labels.max():
        warnings.append(f"fold {fold} ({level}): single-class test set, metrics excluded")
        return FoldMetrics(None, None, None)
    sens, spec = sens_spec(scores, labels, threshold)
    return FoldMetrics(sens, spec, roc_auc(scores, labels))


def _deep_scorer_factory(kind: str, cfg: CVConfig, feature_cache):
    from .classifier_net import predict
    from .direct_opt import pretune_fhn
    from .optimizers import train

    use_hrv = kind == "deep+traditional"

    def factory(train_segs: list[RRSegment], seed: int):
        ds_like = Dataset(list(train_segs))
        population = pretune_fhn(
            ds_like, cfg.n_neurons, cfg.pretune_budget, cfg.drive,
            subsample_per_class=cfg.pretune_subsample, seed=seed,
        )
        fit_segs = train_segs
        if cfg.max_train_segments and len(train_segs) > cfg.max_train_segments:
            rng = np.random.default_rng(seed)
            idx = sorted(rng.permutation(len(train_segs))[: cfg.max_train_segments])
            fit_segs = [train_segs[i] for i in idx]
        d_in = cfg.n_neurons + (23 if use_hrv else 0)
        layer_sizes = [d_in, *cfg.hidden_sizes, 2]
        fold_cfg = replace(cfg.train, seed=seed)
        model, _ = train(fit_segs, fold_cfg, population, layer_sizes=layer_sizes,
                         drive=cfg.drive, temperature=cfg.temperature, use_hrv=use_hrv)
        if use_hrv:
            return lambda seg: predict(model, seg, hrv=feature_cache[seg.segment_id])
        return lambda seg: predict(model, seg)

    return factory


def _rf_scorer_factory(cfg: CVConfig, feature_cache):
    from .hrv_baseline import rf_predict, rf_train

    def factory(train_segs: list[RRSegment], seed: int):
        X = np.array([feature_cache[s.segment_id] for s in train_segs])
        y = np.array([s.label for s in train_segs])
        forest = rf_train(X, y, n_trees=cfg.rf_trees, seed=seed)
        return lambda seg: rf_predict(forest, feature_cache[seg.segment_id])

    return factory


def cross_validate(
    ds: Dataset,
    model_kind: Union[str, ScorerFactory],
    k: int = 10,
    seed: int = 0,
    config: Optional[CVConfig] = None,
) -> FoldReport:
    """Patient-stratified k-fold evaluation of one model family.

    model_kind: "deep", "deep+traditional", "traditional", or a custom
    factory (train_segments, seed) -> (segment -> score), used by tests to
    inject oracle/null models.
    """
    cfg = config or CVConfig()
    folds = stratified_folds(ds, k, seed)

    needs_features = model_kind in ("traditional", "deep+traditional")
    feature_cache = {}
    if needs_features:
        from .hrv_baseline import compute_features

        for seg in ds.segments:
            feature_cache[seg.segment_id] = compute_features(seg).values

    if callable(model_kind):
        factory = model_kind
    elif model_kind == "traditional":
        factory = _rf_scorer_factory(cfg, feature_cache)
    elif model_kind in ("deep", "deep+traditional"):
        factory = _deep_scorer_factory(model_kind, cfg, feature_cache)
    else:
        raise ValidationError(f"unknown model kind {model_kind!r}")

    segment_rows, patient_rows, youden, warnings = [], [], [], []
    for fold in range(k):
        train_segs, test_segs = segments_by_fold(ds, folds, fold)
        train_patients = {s.patient_id for s in train_segs}
        test_patients = {s.patient_id for s in test_segs}
        assert not (train_patients & test_patients), "patient leaked across folds"
        train_labels = {s.label for s in train_segs}
        if len(train_labels) < 2:
            raise MetricError(f"fold {fold}: training portion has a single class")

        scorer = factory(train_segs, seed * 10007 + fold)
        scores = np.array([scorer(seg) for seg in test_segs])
        labels = np.array([seg.label for seg in test_segs])
        segment_rows.append(_metrics_for(scores, labels, cfg.threshold,
                                         fold, "segment", warnings))
        if len(np.unique(labels)) > 1:
            youden.append(youden_threshold(scores, labels))

        patient_ids = sorted(test_patients)
        p_scores = np.array([scores[[s.patient_id == p for s in test_segs]].mean()
                             for p in patient_ids])
        p_labels = np.array([ds.label_of(p) for p in patient_ids])
        patient_rows.append(_metrics_for(p_scores, p_labels, cfg.threshold,
                                         fold, "patient", warnings))

    for w in warnings:
        log.warning("%s", w)
    return FoldReport(k, segment_rows, patient_rows, cfg.threshold, youden, warnings)


# -- cTnI comparator ------------------------------------------------------------

def ctni_triage(values: Sequence[float], labels: Sequence[int],
                threshold: float = 0.6) -> tuple[float, float, float]:
    """Metrics for biomarker triage: positive when the level >= threshold."""
    v = np.asarray(values, dtype=float)
    if np.any(v < 0):
        raise ValidationError("cTnI levels must be non-negative")
    sens, spec = sens_spec(v, labels, threshold)
    return sens, spec, roc_auc(v, labels)


def read_ctni_file(path: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read `patient_id,label,ctni_value` lines."""
    ids, labels, values = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValidationError(f"line {i}: expected patient_id,label,ctni_value")
            ids.append(parts[0].strip())
            labels.append(int(parts[1]))
            values.append(float(parts[2]))
    return ids, np.array(labels), np.array(values)
