"""Traditional 23-feature HRV extraction and a 30-tree random forest baseline.

Feature order is fixed and versioned (FEATURE_NAMES); time-domain, geometric,
Poincare, entropy, and nonlinear-dynamics families are all represented.
Histogram-based features use the conventional 7.8125 ms bin width, anchored
at the series minimum so they are invariant to shifting all intervals by a
constant.  ApEn/SampEn run at m=2, r=0.2*SDNN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Sequence, Union

import numpy as np

from .errors import FeatureError, TrainingError
from .rr_data import RRSegment

HIST_BIN_MS = 7.8125
FEATURE_NAMES: tuple[str, ...] = (
    "mean_rr", "median_rr", "sdnn", "rmssd", "sdsd", "pnn20", "pnn50",
    "cv_rr", "tri_index", "tinn", "sd1", "sd2", "sd_ratio", "apen",
    "sampen", "shannon_entropy", "renyi2_entropy", "sfi", "ctm",
    "corr_dim", "dfa_alpha1", "mean_abs_diff", "rr_range",
)


@dataclass(frozen=True)
class HRVFeatures:
    """The 23-feature vector for one segment, indexable by name."""

    values: np.ndarray
    NAMES: ClassVar[tuple[str, ...]] = FEATURE_NAMES

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])


def _as_array(rr) -> np.ndarray:
    x = np.asarray(rr.intervals if isinstance(rr, RRSegment) else rr, dtype=float)
    if x.ndim != 1 or len(x) < 3:
        raise FeatureError("need a 1-D series of at least 3 intervals")
    return x


def sdnn(rr) -> float:
    return float(np.std(_as_array(rr)))


def rmssd(rr) -> float:
    d = np.diff(_as_array(rr))
    return float(np.sqrt(np.mean(d ** 2)))


def pnn(rr, threshold_ms: float) -> float:
    d = np.diff(_as_array(rr))
    return float(np.mean(np.abs(d) > threshold_ms))


def _histogram(x: np.ndarray) -> np.ndarray:
    idx = np.floor((x - x.min()) / HIST_BIN_MS).astype(int)
    return np.bincount(idx)


def triangular_index(rr) -> float:
    x = _as_array(rr)
    counts = _histogram(x)
    return float(len(x) / counts.max())


def tinn(rr) -> float:
    """Baseline width of the least-squares triangular fit to the RR histogram."""
    counts = _histogram(_as_array(rr)).astype(float)
    b = len(counts)
    peak = int(np.argmax(counts))
    y_p = counts[peak]
    grid = np.arange(b)
    best = (math.inf, 0.0)
    for m in range(-1, peak):
        for n in range(peak + 1, b + 1):
            q = np.zeros(b)
            up = (grid >= m) & (grid <= peak)
            q[up] = y_p * (grid[up] - m) / (peak - m)
            down = (grid > peak) & (grid <= n)
            q[down] = y_p * (n - grid[down]) / (n - peak)
            sse = float(np.sum((counts - q) ** 2))
            if sse < best[0]:
                best = (sse, (n - m) * HIST_BIN_MS)
    return best[1]


def poincare_sd(rr) -> tuple[float, float]:
    x = _as_array(rr)
    d = np.diff(x)
    sd1 = float(np.sqrt(np.var(d) / 2.0))
    sd2sq = 2.0 * np.var(x) - np.var(d) / 2.0
    return sd1, float(np.sqrt(max(sd2sq, 0.0)))


def _template_matrix(x: np.ndarray, m: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, m)


def apen(rr, m: int = 2, r: Union[float, None] = None) -> float:
    """Approximate entropy (Pincus): self-matches included, Chebyshev distance."""
    x = _as_array(rr)
    if r is None:
        r = 0.2 * float(np.std(x))

    def phi(mm: int) -> float:
        t = _template_matrix(x, mm)
        d = np.max(np.abs(t[:, None, :] - t[None, :, :]), axis=2)
        c = np.mean(d <= r, axis=1)
        return float(np.mean(np.log(c)))

    return abs(phi(m) - phi(m + 1))


def sampen(rr, m: int = 2, r: Union[float, None] = None) -> float:
    """Sample entropy: -ln(A/B) over pairs i != j; zero counts floored at 0.5."""
    x = _as_array(rr)
    if r is None:
        r = 0.2 * float(np.std(x))

    def pair_count(mm: int) -> float:
        t = _template_matrix(x, mm)[: len(x) - m]  # same template count for both m
        d = np.max(np.abs(t[:, None, :] - t[None, :, :]), axis=2)
        return float((np.sum(d <= r) - len(t)) / 2.0)

    b = pair_count(m)
    a = pair_count(m + 1)
    if a == b:
        return 0.0
    return float(-np.log(max(a, 0.5) / max(b, 0.5)))


def _hist_probs(x: np.ndarray) -> np.ndarray:
    counts = _histogram(x)
    p = counts[counts > 0] / counts.sum()
    return p


def shannon_entropy(rr) -> float:
    p = _hist_probs(_as_array(rr))
    return float(-np.sum(p * np.log2(p)))


def renyi2_entropy(rr) -> float:
    p = _hist_probs(_as_array(rr))
    return float(-np.log2(np.sum(p ** 2)))


def _difference_scatter(x: np.ndarray) -> np.ndarray:
    d = np.diff(x)
    pts = np.column_stack([d[:-1], d[1:]])
    scale = np.abs(pts).max()
    if scale == 0:
        raise FeatureError("flat difference scatter")
    return pts / scale


def spatial_filling_index(rr, grid: int = 10) -> float:
    """Concentration of the normalized successive-difference scatter on a grid.

    Sum of squared cell probabilities over a grid x grid partition of
    [-1, 1]^2; smaller values mean the scatter fills more of the plane.
    """
    pts = _difference_scatter(_as_array(rr))
    ij = np.clip(((pts + 1.0) / 2.0 * grid).astype(int), 0, grid - 1)
    flat = ij[:, 0] * grid + ij[:, 1]
    p = np.bincount(flat, minlength=grid * grid) / len(flat)
    return float(np.sum(p ** 2))


def central_tendency_measure(rr, radius: float = 0.1) -> float:
    """Fraction of normalized second-difference points within `radius` of origin."""
    pts = _difference_scatter(_as_array(rr))
    return float(np.mean(np.sqrt(np.sum(pts ** 2, axis=1)) < radius))


def correlation_dimension(rr) -> float:
    """Grassberger-Procaccia estimate on the 2-D delay embedding (delay 1).

    The correlation sum C(r) is evaluated on log-spaced radii between the
    10th and 60th percentile of nonzero pairwise distances; the dimension is
    the least-squares slope of log C against log r.
    """
    x = _as_array(rr)
    pts = np.column_stack([x[:-1], x[1:]])
    d = np.sqrt(np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2))
    iu = np.triu_indices(len(pts), k=1)
    dist = d[iu]
    nz = dist[dist > 0]
    if len(nz) < 10:
        raise FeatureError("too few distinct points for a dimension estimate")
    radii = np.exp(np.linspace(np.log(np.percentile(nz, 10)),
                               np.log(np.percentile(nz, 60)), 8))
    c = np.array([np.mean(dist < r) for r in radii])
    keep = c > 0
    if keep.sum() < 2:
        raise FeatureError("degenerate correlation sum")
    slope = np.polyfit(np.log(radii[keep]), np.log(c[keep]), 1)[0]
    return float(slope)


def dfa_alpha1(rr, scales: Sequence[int] = tuple(range(4, 12))) -> float:
    """Detrended fluctuation slope over short scales (4-11 beats)."""
    x = _as_array(rr)
    profile = np.cumsum(x - x.mean())
    log_s, log_f = [], []
    for s in scales:
        n_win = len(profile) // s
        if n_win < 1:
            continue
        f2 = []
        for segment in (profile[: n_win * s], profile[-(n_win * s):]):
            windows = segment.reshape(n_win, s)
            t = np.arange(s)
            for wnd in windows:
                coef = np.polyfit(t, wnd, 1)
                f2.append(np.mean((wnd - np.polyval(coef, t)) ** 2))
        log_s.append(math.log(s))
        log_f.append(0.5 * math.log(np.mean(f2)))
    if len(log_s) < 2:
        raise FeatureError("series too short for DFA")
    return float(np.polyfit(log_s, log_f, 1)[0])


def compute_features(rr) -> HRVFeatures:
    """The full 23-feature vector, in FEATURE_NAMES order."""
    x = _as_array(rr)
    d = np.diff(x)
    mean = float(np.mean(x))
    if mean <= 0:
        raise FeatureError("non-positive mean interval")
    sd = float(np.std(x))
    sd1, sd2 = poincare_sd(rr)
    if sd2 == 0:
        raise FeatureError("degenerate Poincare geometry (constant series?)")
    values = np.array([
        mean,
        float(np.median(x)),
        sd,
        rmssd(rr),
        float(np.std(d)),
        pnn(rr, 20.0),
        pnn(rr, 50.0),
        sd / mean,
        triangular_index(rr),
        tinn(rr),
        sd1,
        sd2,
        sd1 / sd2,
        apen(rr),
        sampen(rr),
        shannon_entropy(rr),
        renyi2_entropy(rr),
        spatial_filling_index(rr),
        central_tendency_measure(rr),
        correlation_dimension(rr),
        dfa_alpha1(rr),
        float(np.mean(np.abs(d))),
        float(x.max() - x.min()),
    ])
    if not np.all(np.isfinite(values)):
        bad = [FEATURE_NAMES[i] for i in np.flatnonzero(~np.isfinite(values))]
        raise FeatureError(f"non-finite features: {bad}")
    return HRVFeatures(values)


def write_features_csv(path: str, rows: Sequence[tuple[str, int, np.ndarray]]) -> None:
    """rows: (segment_id, label, feature values) per accepted segment."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("segment_id,label," + ",".join(FEATURE_NAMES) + "\n")
        for segment_id, label, values in rows:
            vals = ",".join(repr(float(v)) for v in values)
            fh.write(f"{segment_id},{label},{vals}\n")


# -- random forest ------------------------------------------------------------

class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "prob1")

    def __init__(self, feature=None, threshold=None, left=None, right=None, prob1=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.prob1 = prob1

    @property
    def is_leaf(self) -> bool:
        return self.prob1 is not None


@dataclass
class RandomForest:
    trees: list[_Node]
    n_features_per_split: int
    seed: int


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray):
    """Best (gini, feature, threshold) over candidate midpoint thresholds."""
    n = len(y)
    total1 = y.sum()
    best = (math.inf, None, None)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        sv = X[order, f]
        sy = y[order]
        cum1 = np.cumsum(sy)
        boundaries = np.flatnonzero(sv[1:] != sv[:-1]) + 1  # split before index k
        if len(boundaries) == 0:
            continue
        n_left = boundaries.astype(float)
        n_right = n - n_left
        left1 = cum1[boundaries - 1]
        right1 = total1 - left1
        gini_left = 1.0 - (left1 / n_left) ** 2 - ((n_left - left1) / n_left) ** 2
        gini_right = 1.0 - (right1 / n_right) ** 2 - ((n_right - right1) / n_right) ** 2
        weighted = (n_left * gini_left + n_right * gini_right) / n
        k = int(np.argmin(weighted))
        if weighted[k] < best[0]:
            b = boundaries[k]
            best = (float(weighted[k]), int(f), float((sv[b - 1] + sv[b]) / 2.0))
    return best


def _grow(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, m_features: int) -> _Node:
    if len(y) < 2 or y.min() == y.max():
        return _Node(prob1=float(y.mean()))
    features = rng.choice(X.shape[1], size=m_features, replace=False)
    _, feature, threshold = _best_split(X, y, features)
    if feature is None:  # all candidate features constant on this node
        return _Node(prob1=float(y.mean()))
    mask = X[:, feature] < threshold
    left = _grow(X[mask], y[mask], rng, m_features)
    right = _grow(X[~mask], y[~mask], rng, m_features)
    return _Node(feature=feature, threshold=threshold, left=left, right=right)


def rf_train(X: np.ndarray, y: np.ndarray, n_trees: int = 30, seed: int = 0,
             n_features_per_split: Union[int, None] = None) -> RandomForest:
    """CART trees on bootstrap resamples, Gini splits over random feature subsets.

    Trees grow until pure or below 2 samples.  Each tree has its own seeded
    stream, so the forest is reproducible and tree order is immaterial.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(X) < 2 or len(np.unique(y)) < 2:
        raise TrainingError("random forest needs >= 2 samples covering both classes")
    m = n_features_per_split or math.ceil(math.sqrt(X.shape[1]))
    m = min(m, X.shape[1])
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, len(X), len(X))
        trees.append(_grow(X[idx], y[idx], rng, m))
    return RandomForest(trees, m, seed)


def _tree_prob(node: _Node, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.threshold else node.right
    return node.prob1


def rf_predict(rf: RandomForest, x: np.ndarray) -> float:
    """Mean class-1 leaf probability over trees (exact, order-insensitive sum)."""
    x = np.asarray(x, dtype=float)
    return math.fsum(_tree_prob(t, x) for t in rf.trees) / len(rf.trees)
