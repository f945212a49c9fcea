"""Feed-forward softmax head over oscillator firing rates, and the training objective.

The trainable state of the hybrid model lives in a flat ParamVector:
[per-neuron oscillator params, shared drive amplitude, layer weights, layer
biases], with named slices and a clamping mask.  The objective is the L2
penalized mean log-likelihood

    J(P) = -(lam/n)*||P_nn||^2 + (1/n) * sum_k [ y_k*log O_I + (1-y_k)*log(1-O_I) ]

a quantity to maximize; trainers minimize -J.  The penalty covers network
weights and biases only: the oscillator coefficients are physical parameters
pre-tuned elsewhere, and shrinking them toward zero kills the dynamics.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import diffgraph as dg
from .diffgraph import Tape, Var
from .errors import ValidationError
from .fhn_layer import DriveConfig, FHNParams, fhn_forward, firing_rate, integrate, rr_to_drive
from .rr_data import RRSegment

LOG_FLOOR = 1e-12
FHN_FIELDS = ("p1", "p2", "p3", "p4", "v0", "w0")


@dataclass
class MLPParams:
    """Dense layers: weights[l] has shape (layer_sizes[l+1], layer_sizes[l])."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def validate(self) -> None:
        sizes = self.layer_sizes
        if len(sizes) < 2 or sizes[-1] != 2:
            raise ValidationError("network must end in a 2-neuron softmax layer")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValidationError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValidationError(f"layer {l}: shape mismatch")


@dataclass(frozen=True)
class FeatureVector:
    """Precomputed model input: firing rates plus optional standardized HRV block."""

    rates: np.ndarray
    hrv: Optional[np.ndarray] = None


def init_weights(layer_sizes: Sequence[int], sigma: float = 0.1, seed: int = 0) -> MLPParams:
    """Gaussian N(0, sigma^2) weights to break symmetry; zero biases."""
    sizes = [int(s) for s in layer_sizes]
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, sigma, (sizes[l + 1], sizes[l])) if sigma > 0
               else np.zeros((sizes[l + 1], sizes[l]))
               for l in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1)]
    params = MLPParams(sizes, weights, biases)
    params.validate()
    return params


def forward(params: MLPParams, x: np.ndarray) -> tuple[float, float]:
    """Evaluate the head on a feature vector; returns (O_OK, O_I), summing to 1."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.layer_sizes[0],):
        raise ValidationError(
            f"input length {x.shape} != expected ({params.layer_sizes[0]},)"
        )
    h = x
    for l in range(len(params.weights) - 1):
        h = np.tanh(params.weights[l] @ h + params.biases[l])
    logits = params.weights[-1] @ h + params.biases[-1]
    z = logits - logits.max()  # shift invariance keeps exp in range
    e = np.exp(z)
    probs = e / e.sum()
    return float(probs[0]), float(probs[1])


class ParamVector:
    """Flat, contiguously indexed container of every trainable parameter.

    index_map maps symbol names (fhn0.p1, ..., amplitude, W0, b0, ...) to
    slices that partition the array; clamp_mask marks frozen entries.
    """

    def __init__(self, values: np.ndarray, index_map: dict[str, slice],
                 clamp_mask: np.ndarray, n_neurons: int, layer_sizes: list[int]):
        self.values = values
        self.index_map = index_map
        self.clamp_mask = clamp_mask
        self.n_neurons = n_neurons
        self.layer_sizes = layer_sizes
        self.validate()

    def __len__(self) -> int:
        return len(self.values)

    def validate(self) -> None:
        covered = np.zeros(len(self.values), dtype=int)
        for sl in self.index_map.values():
            covered[sl] += 1
        if not np.all(covered == 1):
            raise ValidationError("index_map slices do not partition the parameter array")
        if self.clamp_mask.shape != self.values.shape:
            raise ValidationError("clamp mask length mismatch")
        expected = [f"fhn{i}.{f}" for i in range(self.n_neurons) for f in FHN_FIELDS]
        expected.append("amplitude")
        for l in range(len(self.layer_sizes) - 1):
            expected += [f"W{l}", f"b{l}"]
        if sorted(expected) != sorted(self.index_map):
            raise ValidationError("index_map symbols do not match the declared structure")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), dict(self.index_map),
                           self.clamp_mask.copy(), self.n_neurons, list(self.layer_sizes))

    def oscillator_mask(self) -> np.ndarray:
        """Boolean mask over FHN parameters plus the shared drive amplitude."""
        mask = np.zeros(len(self.values), dtype=bool)
        for i in range(self.n_neurons):
            for f in FHN_FIELDS:
                mask[self.index_map[f"fhn{i}.{f}"]] = True
        mask[self.index_map["amplitude"]] = True
        return mask

    def nn_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.values), dtype=bool)
        for l in range(len(self.layer_sizes) - 1):
            mask[self.index_map[f"W{l}"]] = True
            mask[self.index_map[f"b{l}"]] = True
        return mask

    def to_population(self) -> list[FHNParams]:
        pop = []
        for i in range(self.n_neurons):
            vals = [float(self.values[self.index_map[f"fhn{i}.{f}"]][0]) for f in FHN_FIELDS]
            pop.append(FHNParams(*vals))
        return pop

    def amplitude_value(self) -> float:
        return float(self.values[self.index_map["amplitude"]][0])

    def to_mlp(self) -> MLPParams:
        sizes = self.layer_sizes
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            w = self.values[self.index_map[f"W{l}"]].reshape(sizes[l + 1], sizes[l]).copy()
            b = self.values[self.index_map[f"b{l}"]].copy()
            weights.append(w)
            biases.append(b)
        return MLPParams(list(sizes), weights, biases)


def build_param_vector(population: Sequence[FHNParams], amplitude: float,
                       mlp: MLPParams) -> ParamVector:
    mlp.validate()
    chunks: list[np.ndarray] = []
    index_map: dict[str, slice] = {}
    pos = 0

    def put(name: str, arr: np.ndarray) -> None:
        nonlocal pos
        chunks.append(arr.ravel())
        index_map[name] = slice(pos, pos + arr.size)
        pos += arr.size

    for i, p in enumerate(population):
        for f in FHN_FIELDS:
            put(f"fhn{i}.{f}", np.array([float(getattr(p, f))]))
    put("amplitude", np.array([float(amplitude)]))
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        put(f"W{l}", w)
        put(f"b{l}", b)
    values = np.concatenate(chunks)
    return ParamVector(values, index_map, np.zeros(len(values), dtype=bool),
                       len(population), list(mlp.layer_sizes))


@dataclass
class HybridModel:
    """Everything needed to score a segment: oscillators, drive, head, HRV stats."""

    population: list[FHNParams]
    drive: DriveConfig
    temperature: float
    mlp: MLPParams
    hrv_mean: Optional[np.ndarray] = None
    hrv_std: Optional[np.ndarray] = None

    @property
    def uses_hrv(self) -> bool:
        return self.hrv_mean is not None

    def standardize_hrv(self, hrv: np.ndarray) -> np.ndarray:
        if not self.uses_hrv:
            raise ValidationError("model was trained without an HRV block")
        return (np.asarray(hrv, dtype=float) - self.hrv_mean) / self.hrv_std


def predict(model: HybridModel, rr: RRSegment, hrv: Optional[np.ndarray] = None) -> float:
    """Score one segment with the hard firing-rate rule; returns O_I in (0, 1)."""
    rates = fhn_forward(model.population, rr, model.drive, mode="hard")
    if model.uses_hrv:
        if hrv is None:
            raise ValidationError("model expects an HRV feature block")
        x = np.concatenate([rates, model.standardize_hrv(hrv)])
    else:
        x = rates
    return forward(model.mlp, x)[1]


# -- objective on the tape ----------------------------------------------------

Sample = Union[RRSegment, tuple, FeatureVector]


def _structured_vars(tape: Tape, pv: ParamVector,
                     leaves: list[Var]) -> tuple[list[FHNParams], Var, list, list]:
    """Group flat leaf Vars into (population, amplitude, weights, biases)."""
    population = []
    for i in range(pv.n_neurons):
        vals = [leaves[pv.index_map[f"fhn{i}.{f}"].start] for f in FHN_FIELDS]
        population.append(FHNParams(*vals))
    amp = leaves[pv.index_map["amplitude"].start]
    sizes = pv.layer_sizes
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        wsl = pv.index_map[f"W{l}"]
        bsl = pv.index_map[f"b{l}"]
        rows = []
        for r in range(sizes[l + 1]):
            base = wsl.start + r * sizes[l]
            rows.append(leaves[base:base + sizes[l]])
        weights.append(rows)
        biases.append(leaves[bsl.start:bsl.stop])
    return population, amp, weights, biases


def _head_logprob(tape: Tape, weights, biases, x: list, y: int) -> Var:
    """tanh hidden layers, stable 2-way softmax, floored log of the target prob."""
    h = x
    n_layers = len(weights)
    for l in range(n_layers):
        out = []
        for r, row in enumerate(weights[l]):
            acc = biases[l][r]
            for w, xi in zip(row, h):
                acc = acc + w * xi
            out.append(acc if l == n_layers - 1 else dg.tanh(acc))
        h = out
    l0, l1 = h
    m = dg.select_ge(l0, l1, l0, l1)
    e0 = dg.exp(l0 - m)
    e1 = dg.exp(l1 - m)
    target = (e1 if y == 1 else e0) / (e0 + e1)
    floored = dg.select_ge(target, LOG_FLOOR, target, LOG_FLOOR)
    return dg.log(floored)


def _sample_logprob(tape: Tape, pv: ParamVector, leaves: list[Var], x: Sample, y: int,
                    drive: DriveConfig, temperature: float) -> Var:
    population, amp, weights, biases = _structured_vars(tape, pv, leaves)
    if isinstance(x, RRSegment):
        inputs = _smooth_rates(tape, population, amp, x, drive, temperature)
    elif isinstance(x, tuple):
        seg, hrv = x
        inputs = _smooth_rates(tape, population, amp, seg, drive, temperature)
        inputs += [tape.const(float(v)) for v in hrv]
    elif isinstance(x, FeatureVector):
        inputs = [tape.const(float(v)) for v in x.rates]
        if x.hrv is not None:
            inputs += [tape.const(float(v)) for v in x.hrv]
    else:
        raise ValidationError(f"unsupported sample type {type(x)!r}")
    if len(inputs) != pv.layer_sizes[0]:
        raise ValidationError(
            f"sample supplies {len(inputs)} inputs, head expects {pv.layer_sizes[0]}"
        )
    return _head_logprob(tape, weights, biases, inputs, y)


def _smooth_rates(tape: Tape, population, amp: Var, seg: RRSegment,
                  drive: DriveConfig, temperature: float) -> list[Var]:
    signal = rr_to_drive(seg, drive.dt_ms, drive.amplitude, drive.pulse_width_ms)
    rates = []
    for params in population:
        traj = integrate(params, signal, drive.time_unit_ms, amplitude=amp)
        rates.append(firing_rate(traj, params.p4, mode="smooth", temperature=temperature))
    return rates


def _sample_grad(pv: ParamVector, x: Sample, y: int, drive: DriveConfig,
                 temperature: float) -> tuple[float, np.ndarray]:
    tape = Tape()
    leaves = [tape.leaf(v) for v in pv.values]
    ll = _sample_logprob(tape, pv, leaves, x, y, drive, temperature)
    grads = dg.backward(tape, ll)
    return ll.value, np.array([grads[v.index] for v in leaves])


_POOL: Optional[ProcessPoolExecutor] = None
_POOL_SIZE = 0


def _get_pool(threads: int) -> ProcessPoolExecutor:
    global _POOL, _POOL_SIZE
    if _POOL is None or _POOL_SIZE != threads:
        if _POOL is not None:
            _POOL.shutdown()
        _POOL = ProcessPoolExecutor(max_workers=threads)
        _POOL_SIZE = threads
    return _POOL


def _pool_task(args) -> tuple[float, np.ndarray]:
    return _sample_grad(*args)


def objective(pv: ParamVector, batch: Sequence[tuple[Sample, int]], lam: float,
              drive: DriveConfig = DriveConfig(), temperature: float = 0.1,
              threads: int = 1) -> tuple[float, np.ndarray]:
    """Penalized mean log-likelihood J and dJ/dP, both via the tape.

    Per-sample log-likelihood tapes are independent (and may be evaluated in
    worker processes); the reduction always sums in batch order, so the
    result is independent of scheduling.
    """
    if not batch:
        raise ValidationError("empty batch")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    n = len(batch)

    if threads > 1:
        tasks = [(pv, x, y, drive, temperature) for x, y in batch]
        results = list(_get_pool(threads).map(_pool_task, tasks, chunksize=max(1, n // threads)))
    else:
        results = [_sample_grad(pv, x, y, drive, temperature) for x, y in batch]

    ll_sum = 0.0
    grad = np.zeros(len(pv.values))
    for ll, g in results:
        ll_sum += ll
        grad += g
    j = ll_sum / n
    grad /= n

    if lam > 0.0:
        tape = Tape()
        leaves = [tape.leaf(v) for v in pv.values]
        nn_idx = np.flatnonzero(pv.nn_mask())
        pen = tape.const(0.0)
        for i in nn_idx:
            pen = pen + leaves[i] * leaves[i]
        pen_grads = dg.backward(tape, pen)
        j -= lam / n * pen.value
        grad -= lam / n * np.array([pen_grads[v.index] for v in leaves])
    return j, grad
