"""Adam and the full training protocol with the oscillator clamping schedule.

Training maximizes the penalized log-likelihood J by running Adam on -J.
The oscillator parameters (and the shared drive amplitude) stay frozen for
the first ceil(clamp_fraction * epochs_max) epochs so they cannot adapt to
the randomly initialized head; afterwards everything trains jointly.
Training stops at epochs_max or once the improvement in epoch-mean J stays
below convergence_tol for convergence_patience consecutive epochs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .classifier_net import (
    HybridModel,
    ParamVector,
    build_param_vector,
    init_weights,
    objective,
)
from .errors import DivergenceError, OptimizerError, TrainingError
from .fhn_layer import DriveConfig, FHNParams
from .rr_data import Dataset, RRSegment

log = logging.getLogger(__name__)

GRAD_NORM_LIMIT = 1e6


@dataclass
class AdamState:
    """First/second moment estimates plus step count and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n: int, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, pv: ParamVector,
              grad: np.ndarray) -> tuple[AdamState, ParamVector]:
    """One bias-corrected Adam update of pv in place; clamped entries never move."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != pv.values.shape:
        raise OptimizerError("gradient shape mismatch")
    if not np.all(np.isfinite(grad)):
        raise OptimizerError("non-finite gradient")
    g = np.where(pv.clamp_mask, 0.0, grad)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    step = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    pv.values = np.where(pv.clamp_mask, pv.values, pv.values - step)
    return state, pv


@dataclass
class TrainConfig:
    epochs_max: int = 200
    clamp_fraction: float = 0.10
    minibatch_size: int = 32
    lam: float = 0.01
    lr: float = 1e-3
    convergence_tol: float = 1e-5
    convergence_patience: int = 10
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.clamp_fraction <= 1.0:
            raise OptimizerError("clamp_fraction must lie in [0, 1]")
        if self.epochs_max < 1:
            raise OptimizerError("epochs_max must be >= 1")


class EpochRecord(NamedTuple):
    epoch: int
    mean_j: float
    grad_norm: float
    clamped: bool


def write_train_log(path: str, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_J,grad_norm,clamped\n")
        for r in records:
            fh.write(f"{r.epoch},{r.mean_j!r},{r.grad_norm!r},{str(r.clamped).lower()}\n")


def _as_samples(data, use_hrv: bool):
    """Expand a Dataset or segment list into (sample, label) training pairs."""
    segments = data.segments if isinstance(data, Dataset) else list(data)
    if not segments:
        raise TrainingError("empty training set")
    if not use_hrv:
        return [(seg, seg.label) for seg in segments], None, None
    from .hrv_baseline import compute_features

    feats = np.array([compute_features(seg).values for seg in segments])
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant feature: leave centered at 0
    standardized = (feats - mean) / std
    samples = [((seg, standardized[i]), seg.label) for i, seg in enumerate(segments)]
    return samples, mean, std


def train(
    data: Union[Dataset, Sequence[RRSegment]],
    cfg: TrainConfig,
    init_population: Sequence[FHNParams],
    layer_sizes: Optional[Sequence[int]] = None,
    drive: DriveConfig = DriveConfig(),
    temperature: float = 0.1,
    use_hrv: bool = False,
) -> tuple[HybridModel, list[EpochRecord]]:
    """Run the full protocol; returns the trained model and per-epoch log.

    init_population comes from oscillator pre-tuning (or explicit values).
    With use_hrv=True every segment's 23 traditional features (standardized
    with training statistics) are appended to the head input.
    """
    samples, hrv_mean, hrv_std = _as_samples(data, use_hrv)
    n_neurons = len(init_population)
    d_in = n_neurons + (len(hrv_mean) if use_hrv else 0)
    if layer_sizes is None:
        layer_sizes = [d_in, 16, 8, 2]
    else:
        layer_sizes = [int(s) for s in layer_sizes]
        if layer_sizes[0] != d_in:
            raise TrainingError(
                f"layer_sizes[0]={layer_sizes[0]} but model input has {d_in} features"
            )

    mlp = init_weights(layer_sizes, sigma=0.1, seed=cfg.seed)
    pv = build_param_vector(init_population, drive.amplitude, mlp)
    osc_mask = pv.oscillator_mask()
    init_osc_values = pv.values[osc_mask].copy()

    adam = AdamState.init(len(pv), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    clamp_epochs = math.ceil(cfg.clamp_fraction * cfg.epochs_max)

    records: list[EpochRecord] = []
    n = len(samples)
    bs = max(1, min(cfg.minibatch_size, n))
    prev_j = None
    streak = 0
    skipped = 0

    for epoch in range(1, cfg.epochs_max + 1):
        clamped = epoch <= clamp_epochs
        pv.clamp_mask = osc_mask.copy() if clamped else np.zeros(len(pv), dtype=bool)

        order = rng.permutation(n)
        j_sum = 0.0
        norm_sum = 0.0
        n_batches = 0
        for start in range(0, n, bs):
            batch = [samples[i] for i in order[start:start + bs]]
            try:
                j, grad = objective(pv, batch, cfg.lam, drive, temperature, threads=cfg.threads)
            except DivergenceError as err:
                ids = [getattr(x[0] if isinstance(x, tuple) else x, "segment_id", "?")
                       for x, _ in batch]
                raise DivergenceError(
                    f"epoch {epoch}, minibatch {start // bs} (segments {ids}): {err}",
                    step=err.step, neuron=err.neuron,
                ) from err
            norm = float(np.linalg.norm(grad))
            if norm > GRAD_NORM_LIMIT:
                skipped += 1
                log.warning("epoch %d: gradient norm %.3g exceeds %g, minibatch skipped",
                            epoch, norm, GRAD_NORM_LIMIT)
                continue
            adam_step(adam, pv, -grad)  # maximize J
            j_sum += j * len(batch)
            norm_sum += norm
            n_batches += 1

        mean_j = j_sum / n if n_batches else float("nan")
        mean_norm = norm_sum / max(n_batches, 1)
        records.append(EpochRecord(epoch, mean_j, mean_norm, clamped))

        if clamped:
            assert np.array_equal(pv.values[osc_mask], init_osc_values)
        if prev_j is not None and mean_j - prev_j < cfg.convergence_tol:
            streak += 1
            if streak >= cfg.convergence_patience:
                break
        else:
            streak = 0
        prev_j = mean_j

    if skipped:
        log.warning("training skipped %d minibatches on gradient guard", skipped)

    model = HybridModel(
        population=pv.to_population(),
        drive=replace(drive, amplitude=pv.amplitude_value()),
        temperature=temperature,
        mlp=pv.to_mlp(),
        hrv_mean=hrv_mean,
        hrv_std=hrv_std,
    )
    return model, records
