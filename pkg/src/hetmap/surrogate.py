"""Surrogate classifier standing in for the full-size models during accuracy checks.

A 2 -> 64 -> 64 -> 4 ReLU MLP with a softmax head, trained on a 4-class
Gaussian-blob dataset. Rows of each weight matrix are routed to tiers through a
RowAssignment; each tier applies its own weight/input quantization and noise.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ContractError
from .noise import NoiseConfig, QuantSpec, perturb_photonic_inputs, perturb_reram_weights, quantize, spec_for
from .remap import RowAssignment
from .tiers import TierSpec, tiers_by_id
from .workload import OpKind, TierId, TierSupportMatrix, Workload

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data" / "surrogate"
LAYER_NAMES = ("fc1", "fc2", "fc3")


@dataclass(frozen=True)
class SurrogateModel:
    weights: tuple[np.ndarray, ...]  # (out, in) per layer
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise ContractError("weights and biases must be non-empty and of equal length")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ContractError(f"layer {i}: expects {w.shape[1]} inputs, previous layer gives {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractError(f"layer {i}: non-finite parameters")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def rows(self) -> list[int]:
        return [w.shape[0] for w in self.weights]

    def with_weights(self, weights: Sequence[np.ndarray]) -> "SurrogateModel":
        return SurrogateModel(tuple(weights), self.biases)

    def check_workload(self, workload: Workload) -> None:
        shapes = [(layer.rows, layer.cols) for layer in workload]
        if shapes != [w.shape for w in self.weights]:
            raise ContractError(f"workload shapes {shapes} do not match model {[w.shape for w in self.weights]}")

    def save(self, stem: str | Path) -> None:
        """Flat little-endian float32 blob plus a JSON sidecar with the shapes."""
        stem = Path(stem)
        tensors = [t for pair in zip(self.weights, self.biases) for t in pair]
        flat = np.concatenate([t.ravel() for t in tensors]).astype("<f4")
        stem.with_suffix(".bin").write_bytes(flat.tobytes())
        meta = {"dtype": "<f4", "tensors": [
            {"name": f"{LAYER_NAMES[i // 2] if i // 2 < len(LAYER_NAMES) else f'fc{i // 2 + 1}'}."
                     f"{'weight' if i % 2 == 0 else 'bias'}", "shape": list(t.shape)}
            for i, t in enumerate(tensors)]}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")

    @classmethod
    def load(cls, stem: str | Path = DATA_DIR / "checkpoint") -> "SurrogateModel":
        stem = Path(stem)
        try:
            meta = json.loads(stem.with_suffix(".json").read_text())
            flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
        except OSError as exc:
            raise ConfigError(f"cannot read checkpoint {stem}: {exc.strerror}") from None
        shapes = [tuple(t["shape"]) for t in meta["tensors"]]
        if sum(math.prod(s) for s in shapes) != flat.size:
            raise ConfigError(f"checkpoint {stem}: sidecar shapes do not match {flat.size} stored floats")
        tensors, pos = [], 0
        for s in shapes:
            n = math.prod(s)
            tensors.append(flat[pos:pos + n].astype(float).reshape(s))
            pos += n
        return cls(tuple(tensors[0::2]), tuple(tensors[1::2]))


def make_blobs(n: int, rng: np.random.Generator, centers=None, std: float = 1.0):
    """Gaussian blobs, classes balanced round-robin."""
    centers = np.asarray(centers if centers is not None else [[-1.5, -1.5], [1.5, -1.5], [-1.5, 1.5], [1.5, 1.5]])
    y = np.arange(n) % len(centers)
    x = centers[y] + std * rng.standard_normal((n, centers.shape[1]))
    return x, y


def save_dataset(path: str | Path, x: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(x.shape[1])] + ["label"])
        for xi, yi in zip(x, y):
            w.writerow([repr(float(v)) for v in xi] + [int(yi)])


def load_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists() and (DATA_DIR / f"{path}.csv").exists():
        path = DATA_DIR / f"{path}.csv"
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc.strerror}") from None
    data = np.array(rows[1:], dtype=float)
    return data[:, :-1], data[:, -1].astype(np.int64)


def bundled() -> tuple[SurrogateModel, np.ndarray, np.ndarray]:
    """Committed checkpoint and its test split."""
    x, y = load_dataset(DATA_DIR / "test.csv")
    return SurrogateModel.load(), x, y


def _softmax_ce(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, per-sample cross-entropy)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return np.exp(logp), -logp[np.arange(len(y)), y]


def _clean_forward(model: SurrogateModel, x: np.ndarray, weights=None):
    weights = model.weights if weights is None else weights
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(weights) - 1 else z
        acts.append(h)
    return acts, pre


def loss(model: SurrogateModel, x, y, weights=None) -> float:
    acts, _ = _clean_forward(model, np.asarray(x, dtype=float), weights)
    return float(_softmax_ce(acts[-1], np.asarray(y))[1].mean())


def _backward(model: SurrogateModel, x, y):
    """Per-layer output deltas (N, out) and layer inputs (N, in) for mean CE."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    acts, pre = _clean_forward(model, x)
    p, _ = _softmax_ce(acts[-1], y)
    delta = p.copy()
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    deltas = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        deltas[i] = delta
        if i:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0)
    return deltas, acts[:-1]


def gradients(model: SurrogateModel, x, y) -> list[tuple[np.ndarray, np.ndarray]]:
    """(dL/dW, dL/db) per layer for the mean cross-entropy over the batch."""
    deltas, inputs = _backward(model, x, y)
    return [(d.T @ a, d.sum(axis=0)) for d, a in zip(deltas, inputs)]


def fisher_diagonal(model: SurrogateModel, x, y) -> list[np.ndarray]:
    """Empirical Fisher diagonal: mean over samples of the squared per-sample weight gradient."""
    deltas, inputs = _backward(model, x, y)
    n = len(x)
    # per-sample gradient of sample k is outer(n*delta_k, a_k); square and average
    return [n * (np.square(d).T @ np.square(a)) for d, a in zip(deltas, inputs)]


# -- tier-routed evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    acc0: float
    gap: float
    perplexity: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ContractError(f"accuracy {self.accuracy} outside [0, 1]")


def _tier_layer(w: np.ndarray, h: np.ndarray, rows: np.ndarray, tier: TierSpec,
                cfg: NoiseConfig, rng: np.random.Generator, w_scale: float) -> np.ndarray:
    """Pre-activations of ``rows`` of one layer computed on ``tier``."""
    wq = quantize(w[rows], _spec(w_scale, tier.weight_bits))
    xspec = spec_for(h, tier.input_bits)
    hq = quantize(h, xspec) if xspec is not None else h
    if tier.tier_id is TierId.RERAM:
        wq = perturb_reram_weights(wq, cfg, rng, w_max=w_scale)
    elif tier.tier_id is TierId.PHOTONIC:
        hq = perturb_photonic_inputs(hq, cfg.photonic_sigma, rng)
    return hq @ wq.T


def _spec(scale: float, bits: int) -> QuantSpec:
    return QuantSpec(bits, scale)


def forward(model: SurrogateModel, x, y, assignment: RowAssignment, tiers: Sequence[TierSpec],
            noise_cfg: NoiseConfig, rng: np.random.Generator, acc0: float | None = None,
            loss0: float | None = None) -> EvalResult:
    """Evaluate the model with every weight row executed on its assigned tier.

    Weights are quantized per tensor (scale = max|W| of the layer) at the
    tier's weight_bits; each tier quantizes the layer input at its input_bits
    (scale = max|input| over the batch). ReRAM rows get conductance noise,
    photonic rows see relative noise on their copy of the input. ``acc0``
    defaults to the all-SRAM result, computed on the fly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if len(assignment.layers) != model.n_layers:
        raise ContractError(f"assignment covers {len(assignment.layers)} layers, model has {model.n_layers}")
    by_id = tiers_by_id(tiers)
    h = x
    for l, (w, b, cols) in enumerate(zip(model.weights, model.biases, assignment.layers)):
        if cols.shape != (w.shape[0],):
            raise ContractError(f"layer {l}: assignment has {cols.shape[0]} rows, weight has {w.shape[0]}")
        if cols.size and (cols.min() < 0 or cols.max() >= len(assignment.tiers)):
            raise ContractError(f"layer {l}: tier index out of range")
        w_scale = float(np.max(np.abs(w)))
        z = np.zeros((h.shape[0], w.shape[0]))
        for c, tid in enumerate(assignment.tiers):
            rows = np.flatnonzero(cols == c)
            if rows.size == 0:
                continue
            if tid not in by_id:
                raise ContractError(f"no tier spec for {tid.value}")
            if w_scale == 0:
                continue
            z[:, rows] = _tier_layer(w, h, rows, by_id[tid], noise_cfg, rng, w_scale)
        z += b
        h = np.maximum(z, 0.0) if l < model.n_layers - 1 else z
    _, ce = _softmax_ce(h, y)
    mean_ce = float(ce.mean())
    accuracy = float(np.mean(np.argmax(h, axis=1) == y))
    if acc0 is None:
        base = homogeneous_assignment(model, TierId.SRAM, assignment.tiers)
        acc0 = forward(model, x, y, base, tiers, noise_cfg, rng, acc0=0.0).accuracy
    return EvalResult(mean_ce, accuracy, acc0, acc0 - accuracy, math.exp(mean_ce))


def homogeneous_assignment(model: SurrogateModel, tier: TierId, tiers: Sequence[TierId]) -> RowAssignment:
    idx = [TierId(t) for t in tiers].index(TierId(tier))
    return RowAssignment(tuple(np.full(r, idx, dtype=np.int64) for r in model.rows), tuple(tiers))


class AccuracyEvaluator:
    """Acc(allocation) oracle bound to one model, batch and noise seed.

    Every call to ``evaluate`` replays the same noise stream, so results only
    depend on the assignment. ``metric`` is "accuracy" (degradation = accuracy
    drop) or "perplexity" (degradation = rise of exp(mean CE)).
    """

    def __init__(self, model: SurrogateModel, x, y, tiers: Sequence[TierSpec], support: TierSupportMatrix,
                 noise_cfg: NoiseConfig | None = None, seed: int = 0, metric: str = "accuracy"):
        if metric not in ("accuracy", "perplexity"):
            raise ContractError(f"metric must be 'accuracy' or 'perplexity', got {metric!r}")
        self.model = model
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y)
        self.tiers = list(tiers)
        self.support = support
        self.noise_cfg = noise_cfg or NoiseConfig()
        self.seed = seed
        self.metric = metric
        base = homogeneous_assignment(model, TierId.SRAM, support.tiers)
        self.baseline = self._run(base, acc0=0.0)
        self.acc0 = self.baseline.accuracy
        self.calls = 0

    def _run(self, assignment: RowAssignment, acc0: float, seed: int | None = None) -> EvalResult:
        rng = rngmod.stream(self.seed if seed is None else seed, "forward")
        return forward(self.model, self.x, self.y, assignment, self.tiers, self.noise_cfg, rng, acc0=acc0)

    def evaluate(self, assignment: RowAssignment, seed: int | None = None) -> EvalResult:
        for l, cols in enumerate(assignment.layers):
            allowed = [i for i, ok in enumerate(self._mask(l)) if ok]
            if not np.all(np.isin(cols, allowed)):
                raise ContractError(f"layer {l}: assignment uses a tier that does not support the op")
        self.calls += 1
        return self._run(assignment, self.acc0, seed)

    def _mask(self, l: int) -> list[bool]:
        # the surrogate's layers are all plain linear layers
        return [self.support.allows(OpKind.LINEAR, t) for t in self.support.tiers]

    def degradation(self, result: EvalResult) -> float:
        if self.metric == "perplexity":
            return result.perplexity - self.baseline.perplexity
        return result.gap

    def quality(self, result: EvalResult) -> float:
        """Lower-is-better quality used in LEP tables."""
        return result.perplexity if self.metric == "perplexity" else 1.0 - result.accuracy


# -- sensitivity ----------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityProfile:
    s: tuple[np.ndarray, ...]
    num_probes: int
    perturb_std: tuple[float, ...]

    def __post_init__(self):
        s = tuple(np.asarray(v, dtype=float) for v in self.s)
        if not all(np.all(np.isfinite(v)) for v in s):
            raise ContractError("sensitivity profile has non-finite entries")
        object.__setattr__(self, "s", s)


def _per_layer_std(model: SurrogateModel, perturb_std) -> tuple[float, ...]:
    if np.ndim(perturb_std) == 0:
        stds = (float(perturb_std),) * model.n_layers
    else:
        stds = tuple(float(v) for v in perturb_std)
    if len(stds) != model.n_layers or not all(v > 0 for v in stds):
        raise ContractError(f"perturb_std must be positive per layer, got {perturb_std!r}")
    return stds


def sensitivity_draws(model: SurrogateModel, probes: int, perturb_std, rng: np.random.Generator) -> list[np.ndarray]:
    """Gaussian weight perturbations, shape (probes, rows, cols) per layer."""
    if probes < 1:
        raise ContractError(f"probes must be >= 1, got {probes}")
    stds = _per_layer_std(model, perturb_std)
    return [std * rng.standard_normal((probes, *w.shape)) for w, std in zip(model.weights, stds)]


def default_perturb_std(model: SurrogateModel, noisiest: TierSpec) -> tuple[float, ...]:
    """Weight quantization step of the noisiest tier, per layer."""
    return tuple(_spec(float(np.max(np.abs(w))), noisiest.weight_bits).step for w in model.weights)


def row_sensitivity(model: SurrogateModel, x, y, probes: int = 256, perturb_std=0.01,
                    rng: np.random.Generator | None = None, draws: list[np.ndarray] | None = None
                    ) -> SensitivityProfile:
    """Second-order Taylor estimate of the loss change from perturbing each row.

    S[l][r] = mean over probes of g . dW + 0.5 * h . dW^2, with g the mean
    gradient of row r and h the empirical Fisher diagonal standing in for the
    Hessian diagonal.
    """
    if draws is None:
        if rng is None:
            raise ContractError("row_sensitivity needs rng or explicit draws")
        draws = sensitivity_draws(model, probes, perturb_std, rng)
    grads = gradients(model, x, y)
    fisher = fisher_diagonal(model, x, y)
    s = []
    for (g, _), h, dw in zip(grads, fisher, draws):
        first = np.einsum("prc,rc->pr", dw, g)
        second = 0.5 * np.einsum("prc,rc->pr", np.square(dw), h)
        s.append((first + second).mean(axis=0))
    return SensitivityProfile(tuple(s), len(draws[0]), _per_layer_std(model, perturb_std))


def empirical_row_deltas(model: SurrogateModel, x, y, draws: list[np.ndarray]) -> list[np.ndarray]:
    """Measured mean loss change when each row alone receives each probe's draw."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    base = loss(model, x, y)
    out = []
    for l, dw in enumerate(draws):
        acts, _ = _clean_forward(model, x)
        h_in = acts[l]
        z0 = h_in @ model.weights[l].T + model.biases[l]
        deltas = np.zeros(dw.shape[:2])
        for r in range(dw.shape[1]):
            # only column r of this layer's pre-activation changes
            dz = h_in @ dw[:, r, :].T  # (N, probes)
            for p in range(dw.shape[0]):
                z = z0.copy()
                z[:, r] += dz[:, p]
                deltas[p, r] = _loss_from(model, l, z, y) - base
        out.append(deltas.mean(axis=0))
    return out


def _loss_from(model: SurrogateModel, l: int, z: np.ndarray, y) -> float:
    h = np.maximum(z, 0.0) if l < model.n_layers - 1 else z
    for i in range(l + 1, model.n_layers):
        z = h @ model.weights[i].T + model.biases[i]
        h = np.maximum(z, 0.0) if i < model.n_layers - 1 else z
    return float(_softmax_ce(h, y)[1].mean())


def tier_fidelity_order(model: SurrogateModel, x, y, tiers: Sequence[TierSpec], noise_cfg: NoiseConfig,
                        seed: int = 0, seeds: int = 5, energy: dict | None = None) -> list[TierId]:
    """Tiers sorted best to worst by homogeneous accuracy averaged over ``seeds`` noise streams.

    Ties go to the lower ``energy[tier_id]`` (homogeneous energy from the cost
    model), then to the tier's position in ``tiers``.
    """
    if not tiers:
        raise ContractError("tier_fidelity_order needs at least one tier")
    ids = [t.tier_id for t in tiers]
    energy = energy or {}
    scored = []
    for pos, tid in enumerate(ids):
        assignment = homogeneous_assignment(model, tid, ids)
        accs = [forward(model, x, y, assignment, tiers, noise_cfg, rngmod.stream(seed, "fidelity", k),
                        acc0=0.0).accuracy for k in range(seeds)]
        scored.append((-float(np.mean(accs)), energy.get(tid, 0.0), pos, tid))
    return [t[-1] for t in sorted(scored)]
