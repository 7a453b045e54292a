"""Feedforward scene classifiers: the comparison models for the controller.

A LeNet maps the whole (28n)^2 scene straight to one of 101 classes (answers
0..99 plus a bucket for >= 100) with no interface and no recurrence.  Sample
efficiency of this route is the baseline the interface is measured against.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .data import LabeledExample, class_of
from .nn import cross_entropy, param_list
from .optim import adam_step, init_adam
from .perception import TrainingDiverged, _epoch_minibatches, _image_batch, lenet_flat_size, lenet_forward, lenet_init

CLASS_COUNT = 101
STANDARD_FC_UNITS = (32, 128, 512)


@dataclass
class BaselineConfig:
    fc_units: int = 128
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.15


def _scene_matrix(examples: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([ex.image for ex in examples])
    labels = np.array([ex.class_index for ex in examples], dtype=np.int64)
    return images, labels


def train_baseline(
    examples: list[LabeledExample], config: BaselineConfig
) -> tuple[dict[str, Tensor], dict[str, float]]:
    """Train to convergence with early stopping on a held-out slice.

    Returns the best-validation parameter snapshot and a report with final
    train and validation accuracy.
    """
    if not examples:
        raise ValueError("empty dataset")
    if config.fc_units not in STANDARD_FC_UNITS:
        warnings.warn(
            f"fc_units={config.fc_units} is outside the standard set {STANDARD_FC_UNITS}",
            stacklevel=2,
        )
    resolutions = {ex.image.shape for ex in examples}
    if len(resolutions) != 1:
        raise ValueError(f"scene images must share one resolution, got {sorted(resolutions)}")
    in_hw = examples[0].image.shape[0]
    images, labels = _scene_matrix(examples)

    rng = np.random.default_rng([config.seed, 0xBA5E])
    order = rng.permutation(len(examples))
    n_val = int(len(examples) * config.val_fraction)
    if n_val == 0:
        # no held-out slice: train on everything, stop when training saturates
        val_idx = train_idx = order
    else:
        val_idx, train_idx = order[:n_val], order[n_val:]
        if len(train_idx) == 0:
            train_idx = val_idx

    params = lenet_init(rng, CLASS_COUNT, fc_units=config.fc_units, in_hw=in_hw)
    plist = param_list(params)
    adam = init_adam(plist, learning_rate=config.learning_rate)

    def accuracy(idx) -> float:
        hits = 0
        for i in range(0, len(idx), 256):
            rows = idx[i : i + 256]
            logits = lenet_forward(params, _image_batch(images[rows]))
            hits += int(np.sum(np.argmax(logits.data, axis=1) == labels[rows]))
        return hits / len(idx)

    best_acc, best_params = -1.0, None
    stale = 0
    for epoch in range(config.epochs):
        for batch_idx in _epoch_minibatches(rng, len(train_idx), config.batch_size):
            rows = train_idx[batch_idx]
            with Tape() as tape:
                logits = lenet_forward(params, _image_batch(images[rows]))
                loss = cross_entropy(logits, labels[rows])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"baseline loss {loss.data} at epoch {epoch}")
            adam_step(plist, tape.gradient(loss, plist), adam)
        val_acc = accuracy(val_idx)
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    params = best_params
    report = {"train_accuracy": accuracy(train_idx), "val_accuracy": best_acc}
    return params, report


def evaluate_baseline(params: dict[str, Tensor], examples: list[LabeledExample]) -> float:
    """Argmax class against each example's class index."""
    if not examples:
        raise ValueError("empty dataset")
    in_hw = examples[0].image.shape[0]
    expected_flat = lenet_flat_size(in_hw)
    if params["fc_w"].data.shape[0] != expected_flat:
        raise ValueError(
            f"parameters expect flatten size {params['fc_w'].data.shape[0]}, "
            f"but {in_hw}x{in_hw} scenes produce {expected_flat}"
        )
    images, labels = _scene_matrix(examples)
    hits = 0
    for i in range(0, len(images), 256):
        logits = lenet_forward(params, _image_batch(images[i : i + 256]))
        hits += int(np.sum(np.argmax(logits.data, axis=1) == labels[i : i + 256]))
    return hits / len(images)


def predict_classes(params: dict[str, Tensor], images: np.ndarray) -> np.ndarray:
    """Pure image-to-class function used by reports and tests."""
    out = []
    for i in range(0, len(images), 256):
        logits = lenet_forward(params, _image_batch(images[i : i + 256]))
        out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
