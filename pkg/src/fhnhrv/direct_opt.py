"""DIRECT (DIviding RECTangles) derivative-free global optimization.

The search box is normalized to the unit cube.  Each iteration selects the
potentially-optimal rectangles (the lower-right convex hull of the
(size, value) scatter, with Jones' epsilon-improvement condition), trisects
each along all of its longest dimensions in ascending dimension order, and
evaluates the new centers.  Everything is deterministic: rectangle sizes are
tracked as integer trisection counts per dimension, so size grouping and
longest-dimension detection never depend on float rounding.

Used here for two jobs: pre-tuning oscillator parameters before gradient
training, and searching training hyperparameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FhnHrvError, PretuneError, ValidationError
from .fhn_layer import DriveConfig, FHNParams, fhn_forward

FHN_BOUNDS = ((0.1, 3.0), (0.005, 0.5), (0.1, 3.0), (-1.0, 2.0))  # p1, p2, p3, p4


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds with optional per-dimension log-scale and integer flags."""

    bounds: tuple[tuple[float, float], ...]
    log_scale: Optional[tuple[bool, ...]] = None
    integer: Optional[tuple[bool, ...]] = None

    def __post_init__(self) -> None:
        if len(self.bounds) < 1:
            raise ValidationError("search space needs at least one dimension")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValidationError(f"bad bounds ({lo}, {hi})")
        for flags in (self.log_scale, self.integer):
            if flags is not None and len(flags) != len(self.bounds):
                raise ValidationError("flag length != dimension count")
        if self.log_scale:
            for (lo, _), is_log in zip(self.bounds, self.log_scale):
                if is_log and lo <= 0:
                    raise ValidationError("log-scale dimension needs positive bounds")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        """Map a unit-cube point to the box (log/integer dims handled here)."""
        x = np.empty(self.dim)
        for i, (lo, hi) in enumerate(self.bounds):
            if self.log_scale and self.log_scale[i]:
                x[i] = math.exp(math.log(lo) + u[i] * (math.log(hi) - math.log(lo)))
            else:
                x[i] = lo + u[i] * (hi - lo)
            if self.integer and self.integer[i]:
                x[i] = round(x[i])
        return x


class _Rect:
    __slots__ = ("center", "counts", "value", "order")

    def __init__(self, center: np.ndarray, counts: np.ndarray, value: float, order: int):
        self.center = center
        self.counts = counts  # per-dimension trisection counts; side = 3^-count
        self.value = value
        self.order = order  # creation index, for deterministic tie-breaking

    def measure(self) -> float:
        # half-diagonal; summing sorted terms keeps equal-shape rectangles
        # bit-identical regardless of which dimensions were split
        return 0.5 * math.sqrt(math.fsum(sorted(9.0 ** -k for k in self.counts)))

    def shape_key(self) -> tuple:
        return tuple(sorted(self.counts))

    def sides(self) -> np.ndarray:
        return 3.0 ** -self.counts.astype(float)


@dataclass
class DirectResult:
    best_x: np.ndarray
    best_value: float
    trace: list[tuple[int, np.ndarray, float]]  # (eval index, point, value)
    n_evaluations: int


def _potentially_optimal(rects: list[_Rect], f_min: float, eps: float) -> list[_Rect]:
    """Jones' selection: per-size minima on the lower-right hull of (size, value)."""
    groups: dict[tuple, list[_Rect]] = {}
    for r in rects:
        groups.setdefault(r.shape_key(), []).append(r)

    # one representative (value, measure) per distinct size, ascending in size
    reps = []
    for key, members in groups.items():
        best = min(m.value for m in members)
        reps.append((members[0].measure(), best, key))
    reps.sort(key=lambda t: t[0])

    selected_keys = []
    for j, (dj, fj, key) in enumerate(reps):
        k_lo = 0.0
        for di, fi, _ in reps[:j]:
            if dj > di:
                k_lo = max(k_lo, (fj - fi) / (dj - di))
        k_hi = math.inf
        for di, fi, _ in reps[j + 1:]:
            if di > dj:
                k_hi = min(k_hi, (fi - fj) / (di - dj))
        if k_lo > k_hi:
            continue
        if math.isfinite(k_hi) and fj - k_hi * dj > f_min - eps * abs(f_min):
            continue
        selected_keys.append((key, fj))

    out = []
    for key, fj in selected_keys:
        for r in sorted(groups[key], key=lambda r: r.order):
            if r.value == fj:
                out.append(r)
    return out


def direct_minimize(
    f: Callable[[np.ndarray], float],
    space: SearchSpace,
    budget: int,
    eps: float = 1e-4,
    on_iteration: Optional[Callable[[list], None]] = None,
) -> DirectResult:
    """Minimize f over the box with at most `budget` evaluations.

    Non-finite objective values are treated as +inf.  The evaluation trace
    is the deterministic sequential order; `on_iteration` (if given) receives
    the rectangle list after every completed iteration, for diagnostics.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    dim = space.dim
    trace: list[tuple[int, np.ndarray, float]] = []

    def evaluate(u: np.ndarray) -> float:
        x = space.denormalize(u)
        try:
            val = float(f(x))
        except FhnHrvError:
            val = math.inf
        if not math.isfinite(val):
            val = math.inf
        trace.append((len(trace), x, val))
        return val

    center = np.full(dim, 0.5)
    f_center = evaluate(center)
    rects = [_Rect(center, np.zeros(dim, dtype=int), f_center, 0)]
    best_u, best_f = center.copy(), f_center
    order = 1

    out_of_budget = False
    while len(trace) < budget and not out_of_budget:
        selected = _potentially_optimal(rects, best_f, eps)
        progressed = False
        for rect in selected:
            min_count = rect.counts.min()
            long_dims = [d for d in range(dim) if rect.counts[d] == min_count]
            if len(trace) + 2 * len(long_dims) > budget:
                out_of_budget = True
                break
            progressed = True
            for d in long_dims:  # ascending dimension index
                delta = 3.0 ** -(rect.counts[d] + 1)
                child_counts = rect.counts.copy()
                child_counts[d] += 1
                for direction in (-1.0, 1.0):
                    c = rect.center.copy()
                    c[d] += direction * delta
                    val = evaluate(c)
                    rects.append(_Rect(c, child_counts.copy(), val, order))
                    order += 1
                    if val < best_f:
                        best_f, best_u = val, c
                rect.counts = child_counts  # the parent keeps the middle third
        if on_iteration is not None:
            on_iteration(rects)
        if not progressed:
            break

    return DirectResult(space.denormalize(best_u), best_f, trace, len(trace))


def save_trace(path: str, trace: Sequence[tuple[int, np.ndarray, float]]) -> None:
    """Write the evaluation trace as `eval_index,x...,f` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for idx, x, val in trace:
            coords = ",".join(repr(float(c)) for c in x)
            fh.write(f"{idx},{coords},{val!r}\n")


# -- oscillator pre-tuning ----------------------------------------------------

def _logistic_proxy_loss(rates: np.ndarray, labels: np.ndarray,
                         iters: int = 300, lr: float = 0.5, l2: float = 1e-3) -> float:
    """Cross-entropy of a small logistic readout on standardized firing rates.

    Deterministic full-batch gradient descent from zero weights; good enough
    to rank oscillator parameter candidates by separability.
    """
    mean = rates.mean(axis=0)
    std = rates.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x = np.hstack([(rates - mean) / std, np.ones((len(rates), 1))])
    y = labels.astype(float)
    w = np.zeros(x.shape[1])
    n = len(y)
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(x @ w, -500, 500)))
        grad = x.T @ (p - y) / n + l2 * w
        w -= lr * grad
    p = np.clip(1.0 / (1.0 + np.exp(-np.clip(x @ w, -500, 500))), 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _subsample_segments(ds, per_class: int, seed: int):
    segments = []
    rng = np.random.default_rng(seed)
    for label in (0, 1):
        group = [s for s in ds.segments if s.label == label]
        if not group:
            raise PretuneError("pre-tuning needs segments from both classes")
        idx = rng.permutation(len(group))[:per_class]
        segments.extend(group[i] for i in sorted(idx))
    return segments


def pretune_fhn(
    ds,
    n_neurons: int,
    budget: int,
    drive: DriveConfig = DriveConfig(),
    subsample_per_class: int = 16,
    seed: int = 0,
) -> list[FHNParams]:
    """Search the joint per-neuron (p1..p4) box for maximally separable rates.

    The objective trains a logistic readout on hard-mode firing rates over a
    small class-balanced subsample (oscillators frozen) and returns its
    cross-entropy; divergent candidates score +inf.
    """
    segments = _subsample_segments(ds, subsample_per_class, seed)
    labels = np.array([s.label for s in segments])
    space = SearchSpace(bounds=FHN_BOUNDS * n_neurons)

    def objective(x: np.ndarray) -> float:
        population = [FHNParams(*x[4 * i: 4 * i + 4]) for i in range(n_neurons)]
        rates = np.array([fhn_forward(population, s, drive, mode="hard") for s in segments])
        if not np.all(np.isfinite(rates)):
            return math.inf
        return _logistic_proxy_loss(rates, labels)

    result = direct_minimize(objective, space, budget)
    if not math.isfinite(result.best_value):
        raise PretuneError("every sampled oscillator candidate diverged")
    x = result.best_x
    return [FHNParams(*x[4 * i: 4 * i + 4]) for i in range(n_neurons)]


# -- hyperparameter search ----------------------------------------------------

@dataclass
class TunedConfig:
    config: "TrainConfig"  # noqa: F821 (import cycle avoided)
    layer_sizes: list[int]
    value: float
    point: np.ndarray


def hyperparam_space(
    n_layers: tuple[int, int] = (1, 3),
    neurons: tuple[int, int] = (4, 32),
    minibatch: tuple[int, int] = (8, 64),
    lam: tuple[float, float] = (1e-4, 1.0),
) -> SearchSpace:
    """Standard box over {hidden layer count, width, minibatch size, lambda}."""
    return SearchSpace(
        bounds=(tuple(map(float, n_layers)), tuple(map(float, neurons)),
                tuple(map(float, minibatch)), lam),
        log_scale=(False, False, False, True),
        integer=(True, True, True, False),
    )


def tune_hyperparams(
    ds,
    space: SearchSpace,
    budget: int,
    base_config,
    init_population: Sequence[FHNParams],
    drive: DriveConfig = DriveConfig(),
    objective: str = "neg_j",
    inner_folds: int = 5,
    tune_epochs: int = 10,
) -> TunedConfig:
    """Search {n_layers, neurons/layer, minibatch, lambda} with short trainings.

    Dimension order is fixed: [hidden layer count, neurons per layer,
    minibatch size, lambda].  Each candidate trains on an inner split and is
    scored on its validation part (mean cross-entropy, or 1-AUC).  Failures
    score +inf.
    """
    from .classifier_net import predict
    from .eval_harness import roc_auc
    from .optimizers import train
    from .rr_data import segments_by_fold, stratified_folds

    if objective not in ("neg_j", "auc"):
        raise ValidationError(f"unknown tuning objective {objective!r}")
    folds = stratified_folds(ds, inner_folds, seed=base_config.seed)
    train_segs, val_segs = segments_by_fold(ds, folds, fold=0)
    val_labels = np.array([s.label for s in val_segs])
    n_neurons = len(init_population)

    def score(x: np.ndarray) -> float:
        n_hidden, width, minibatch, lam = int(x[0]), int(x[1]), int(x[2]), float(x[3])
        layer_sizes = [n_neurons] + [width] * n_hidden + [2]
        cfg = replace(base_config, minibatch_size=minibatch, lam=lam,
                      epochs_max=tune_epochs)
        model, _ = train(train_segs, cfg, init_population,
                         layer_sizes=layer_sizes, drive=drive)
        scores = np.array([predict(model, s) for s in val_segs])
        if objective == "auc":
            return 1.0 - roc_auc(scores, val_labels)
        p = np.clip(scores, 1e-12, 1 - 1e-12)
        return float(-np.mean(val_labels * np.log(p) + (1 - val_labels) * np.log(1 - p)))

    result = direct_minimize(score, space, budget)
    x = result.best_x
    best_cfg = replace(base_config, minibatch_size=int(x[2]), lam=float(x[3]))
    layer_sizes = [n_neurons] + [int(x[1])] * int(x[0]) + [2]
    return TunedConfig(best_cfg, layer_sizes, result.best_value, x)
