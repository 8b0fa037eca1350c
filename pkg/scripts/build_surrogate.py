"""Regenerate the bundled surrogate dataset and checkpoint.

Usage: python3 scripts/build_surrogate.py [--check]

Writes src/hetmap/data/surrogate/{train,test}.csv and checkpoint.{bin,json}.
Training is plain full-batch Adam on the mean cross-entropy.
"""

import argparse
from pathlib import Path

import numpy as np

from hetmap import rng as rngmod
from hetmap.surrogate import DATA_DIR, SurrogateModel, gradients, loss, make_blobs, save_dataset

SEED = 2024
CENTERS = [[5.0, 5.0], [7.0, 5.0], [5.0, 7.0], [7.0, 7.0]]  # offset from the origin: input quantization range matters
STD = 0.5
HIDDEN = 64
STEPS = 1500
LR = 0.005
WEIGHT_DECAY = 1e-3


def init_model(rng: np.random.Generator, dims=(2, HIDDEN, HIDDEN, 4)) -> SurrogateModel:
    ws = [rng.standard_normal((o, i)) * np.sqrt(2.0 / i) for i, o in zip(dims, dims[1:])]
    bs = [np.zeros(o) for o in dims[1:]]
    return SurrogateModel(tuple(ws), tuple(bs))


def train(model: SurrogateModel, x, y, steps: int = STEPS, lr: float = LR,
          weight_decay: float = WEIGHT_DECAY) -> SurrogateModel:
    params = [p.copy() for pair in zip(model.weights, model.biases) for p in pair]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, steps + 1):
        cur = SurrogateModel(tuple(params[0::2]), tuple(params[1::2]))
        grads = [g for pair in gradients(cur, x, y) for g in pair]
        for k, g in enumerate(grads):
            if k % 2 == 0:
                g = g + weight_decay * params[k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            params[k] -= lr * (m[k] / (1 - b1 ** t)) / (np.sqrt(v[k] / (1 - b2 ** t)) + eps)
    return SurrogateModel(tuple(params[0::2]), tuple(params[1::2]))


def build(out: Path = DATA_DIR) -> SurrogateModel:
    out.mkdir(parents=True, exist_ok=True)
    x_tr, y_tr = make_blobs(2000, rngmod.stream(SEED, "train"), CENTERS, STD)
    x_te, y_te = make_blobs(500, rngmod.stream(SEED, "test"), CENTERS, STD)
    model = train(init_model(rngmod.stream(SEED, "init")), x_tr, y_tr)
    # round-trip through float32 so the in-memory model equals the stored one
    model.save(out / "checkpoint")
    model = SurrogateModel.load(out / "checkpoint")
    save_dataset(out / "train.csv", x_tr, y_tr)
    save_dataset(out / "test.csv", x_te, y_te)
    acc = np.mean(np.argmax(_logits(model, x_te), axis=1) == y_te)
    print(f"train loss {loss(model, x_tr, y_tr):.4f}  test loss {loss(model, x_te, y_te):.4f}  test acc {acc:.3f}")
    return model


def _logits(model, x):
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if i < model.n_layers - 1:
            h = np.maximum(h, 0)
    return h


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    build(ap.parse_args().out)
