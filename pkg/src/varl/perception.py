"""The three pretrained perceptual networks and their frozen inference.

Two LeNets (digit classifier over 0-9, op classifier over AMXN) plus a
salience MLP that maps a mean-pooled whole scene and the fovea position to
per-cell character-presence probabilities.  All three are trained here with
cross-entropy/BCE and ADAM, then frozen; the interface only ever runs them
forward.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, conv2d, maxpool2, relu, reshape, softmax
from .data import CELL, GlyphBank, GlyphSet, OP_LETTERS, compose_salience_scene
from .nn import bce_with_logits, cross_entropy, dense, dense_init, glorot, param_list, zeros_param
from .optim import adam_step, init_adam
from .serialize import load_arrays, save_arrays


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending step for diagnostics."""


@dataclass
class PretrainConfig:
    seed: int = 0
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    val_fraction: float = 0.1
    fc_units: int = 128


# ---------------------------------------------------------------------------
# LeNet: conv(6)->relu->pool -> conv(16)->relu->pool -> dense(fc)->relu -> dense


def lenet_flat_size(in_hw: int) -> int:
    h1 = (in_hw - 4) // 2
    h2 = (h1 - 4) // 2
    return 16 * h2 * h2


def lenet_init(
    rng: np.random.Generator, class_count: int, fc_units: int = 128, in_hw: int = CELL
) -> dict[str, Tensor]:
    flat = lenet_flat_size(in_hw)
    return {
        "conv1_k": glorot(rng, (6, 1, 5, 5), 25, 6 * 25),
        "conv1_b": zeros_param((6,)),
        "conv2_k": glorot(rng, (16, 6, 5, 5), 6 * 25, 16 * 25),
        "conv2_b": zeros_param((16,)),
        "fc_w": glorot(rng, (flat, fc_units), flat, fc_units),
        "fc_b": zeros_param((fc_units,)),
        "out_w": glorot(rng, (fc_units, class_count), fc_units, class_count),
        "out_b": zeros_param((class_count,)),
    }


def lenet_forward(params: dict[str, Tensor], images: Tensor) -> Tensor:
    """Batch of (N,1,H,W) images to (N, class_count) logits."""
    x = maxpool2(relu(conv2d(images, params["conv1_k"], params["conv1_b"])))
    x = maxpool2(relu(conv2d(x, params["conv2_k"], params["conv2_b"])))
    n = x.data.shape[0]
    x = reshape(x, (n, x.data.size // n))
    x = relu(dense(x, params["fc_w"], params["fc_b"]))
    return dense(x, params["out_w"], params["out_b"])


def _image_batch(images: np.ndarray) -> Tensor:
    return Tensor(images.astype(np.float64)[:, None, :, :] / 255.0)


def classify(params: dict[str, Tensor], glimpse: np.ndarray) -> tuple[int, np.ndarray]:
    """Frozen single-glimpse inference: (argmax class, probability vector).

    Ties resolve to the lowest class index.
    """
    if glimpse.shape != (CELL, CELL):
        raise ValueError(f"glimpse must be {CELL}x{CELL}, got {glimpse.shape}")
    logits = lenet_forward(params, _image_batch(glimpse[None]))
    probs = softmax(logits).data[0]
    return int(np.argmax(probs)), probs


def _accuracy(params, images, labels, batch=256) -> float:
    hits = 0
    for i in range(0, len(images), batch):
        logits = lenet_forward(params, _image_batch(images[i : i + batch]))
        hits += int(np.sum(np.argmax(logits.data, axis=1) == labels[i : i + batch]))
    return hits / len(images)


def _epoch_minibatches(rng, count, batch_size):
    order = rng.permutation(count)
    for i in range(0, count, batch_size):
        yield order[i : i + batch_size]


def pretrain_classifier(
    glyphs: GlyphSet, class_count: int, config: PretrainConfig
) -> tuple[dict[str, Tensor], float]:
    """Train a LeNet until held-out accuracy plateaus; return frozen params.

    Returns the best-validation snapshot and its accuracy.
    """
    if len(glyphs) == 0:
        raise ValueError("empty glyph set")
    if int(glyphs.labels.max()) >= class_count:
        raise ValueError(f"label {glyphs.labels.max()} outside {class_count} classes")
    rng = np.random.default_rng(config.seed)
    n_val = max(1, int(len(glyphs) * config.val_fraction))
    order = rng.permutation(len(glyphs))
    val_idx, train_idx = order[:n_val], order[n_val:]
    images, labels = glyphs.images[train_idx], glyphs.labels[train_idx]
    val_images, val_labels = glyphs.images[val_idx], glyphs.labels[val_idx]

    params = lenet_init(rng, class_count, fc_units=config.fc_units)
    plist = param_list(params)
    adam = init_adam(plist, learning_rate=config.learning_rate)
    best = (-1.0, None)
    stale = 0
    for epoch in range(config.max_epochs):
        for batch_idx in _epoch_minibatches(rng, len(images), config.batch_size):
            with Tape() as tape:
                logits = lenet_forward(params, _image_batch(images[batch_idx]))
                loss = cross_entropy(logits, labels[batch_idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"classifier loss {loss.data} at epoch {epoch}")
            adam_step(plist, tape.gradient(loss, plist), adam)
        acc = _accuracy(params, val_images, val_labels)
        if acc > best[0]:
            best = (acc, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best[1], best[0]


# ---------------------------------------------------------------------------
# salience detector: 3x100-unit relu MLP over a pooled scene + fovea features

POOL = 4


def pool_scene(scene: np.ndarray) -> np.ndarray:
    """4x4 mean pooling of a (28n, 28n) scene, flattened, scaled to [0,1]."""
    h, w = scene.shape
    x = scene.astype(np.float64) / 255.0
    return x.reshape(h // POOL, POOL, w // POOL, POOL).mean(axis=(1, 3)).reshape(-1)


def salience_features(scene: np.ndarray, fovea_x: int, fovea_y: int, n: int) -> np.ndarray:
    denom = max(n - 1, 1)
    return np.concatenate([pool_scene(scene), [fovea_x / denom, fovea_y / denom]])


def salience_input_dim(n: int) -> int:
    return (CELL * n // POOL) ** 2 + 2


def salience_init(rng: np.random.Generator, n: int) -> dict[str, Tensor]:
    dims = [salience_input_dim(n), 100, 100, 100, n * n]
    params: dict[str, Tensor] = {}
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layer = dense_init(rng, a, b)
        params[f"l{i}_w"] = layer["w"]
        params[f"l{i}_b"] = layer["b"]
    return params


def salience_logits(params: dict[str, Tensor], features: Tensor) -> Tensor:
    x = features
    for i in range(3):
        x = relu(dense(x, params[f"l{i}_w"], params[f"l{i}_b"]))
    return dense(x, params["l3_w"], params["l3_b"])


def detect_salience(
    params: dict[str, Tensor], scene: np.ndarray, fovea_x: int, fovea_y: int, n: int
) -> np.ndarray:
    """Frozen inference: per-cell probabilities as an (n, n) map in (0,1)."""
    feats = Tensor(salience_features(scene, fovea_x, fovea_y, n)[None, :])
    z = salience_logits(params, feats).data[0]
    return (1.0 / (1.0 + np.exp(-z))).reshape(n, n)


def pretrain_salience(
    scenes: list[tuple[np.ndarray, np.ndarray]], config: PretrainConfig, n: int = 2
) -> tuple[dict[str, Tensor], float]:
    """Train the salience MLP on (scene, occupancy-mask) pairs.

    Fovea features are randomized per presentation so the map stays
    fovea-robust.  Returns frozen params and held-out per-cell accuracy.
    """
    if not scenes:
        raise ValueError("no salience scenes")
    occ = np.array([m.sum() for _, m in scenes])
    if not (np.any(occ == 0) and np.any(occ == n * n) and np.any((occ > 0) & (occ < n * n))):
        raise ValueError("salience scenes must include empty, partial, and full grids")
    rng = np.random.default_rng(config.seed)
    feats = []
    targets = []
    for scene, mask in scenes:
        fx, fy = rng.integers(0, n, size=2)
        feats.append(salience_features(scene, int(fx), int(fy), n))
        targets.append(mask.reshape(-1))
    feats = np.stack(feats)
    targets = np.stack(targets)
    n_val = max(1, int(len(scenes) * config.val_fraction))
    order = rng.permutation(len(scenes))
    val_idx, train_idx = order[:n_val], order[n_val:]

    params = salience_init(rng, n)
    plist = param_list(params)
    adam = init_adam(plist, learning_rate=config.learning_rate)

    def cell_accuracy(idx) -> float:
        z = salience_logits(params, Tensor(feats[idx])).data
        return float(np.mean((z > 0.0) == (targets[idx] > 0.5)))

    best = (-1.0, None)
    stale = 0
    for epoch in range(config.max_epochs):
        for batch_idx in _epoch_minibatches(rng, len(train_idx), config.batch_size):
            rows = train_idx[batch_idx]
            with Tape() as tape:
                z = salience_logits(params, Tensor(feats[rows]))
                loss = bce_with_logits(z, targets[rows])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"salience loss {loss.data} at epoch {epoch}")
            adam_step(plist, tape.gradient(loss, plist), adam)
        acc = cell_accuracy(val_idx)
        if acc > best[0]:
            best = (acc, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best[1], best[0]


def make_salience_scenes(
    bank: GlyphBank, split: str, count: int, n: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng([seed, 0x5A11])
    digit_pool = bank.pool("digits", split)
    letter_pool = bank.pool("letters", split)
    return [compose_salience_scene(rng, digit_pool, letter_pool, n) for _ in range(count)]


# ---------------------------------------------------------------------------
# frozen bundles consumed by the interface


class Perception:
    """Frozen digit/op/salience networks behind one inference surface."""

    def __init__(self, digit_params, op_params, salience_params, n: int = 2):
        self.digit_params = digit_params
        self.op_params = op_params
        self.salience_params = salience_params
        self.n = n

    def bind(self, example) -> None:
        """Real networks need no per-episode state; stubs override this."""

    def spawn(self) -> "Perception":
        """Stateless, so concurrent episodes can share one instance."""
        return self

    def classify_digit(self, glimpse: np.ndarray) -> tuple[int, np.ndarray]:
        return classify(self.digit_params, glimpse)

    def classify_op(self, glimpse: np.ndarray) -> tuple[int, np.ndarray]:
        return classify(self.op_params, glimpse)

    def salience_map(self, scene: np.ndarray, fovea_x: int, fovea_y: int) -> np.ndarray:
        return detect_salience(self.salience_params, scene, fovea_x, fovea_y, self.n)

    def classify_digit_batch(self, glimpses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One forward pass over (B, 28, 28) glimpses; same results as looping."""
        logits = lenet_forward(self.digit_params, _image_batch(glimpses))
        probs = softmax(logits).data
        return np.argmax(probs, axis=1), probs

    def classify_op_batch(self, glimpses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logits = lenet_forward(self.op_params, _image_batch(glimpses))
        probs = softmax(logits).data
        return np.argmax(probs, axis=1), probs

    def salience_map_batch(self, scenes, fovea_xs, fovea_ys) -> np.ndarray:
        feats = np.stack(
            [
                salience_features(scene, int(fx), int(fy), self.n)
                for scene, fx, fy in zip(scenes, fovea_xs, fovea_ys)
            ]
        )
        z = salience_logits(self.salience_params, Tensor(feats)).data
        return (1.0 / (1.0 + np.exp(-z))).reshape(-1, self.n, self.n)

    def save(self, path: str | Path) -> None:
        arrays = {}
        for prefix, params in (
            ("digit", self.digit_params),
            ("op", self.op_params),
            ("salience", self.salience_params),
        ):
            arrays.update({f"{prefix}/{k}": v.data for k, v in params.items()})
        arrays["meta/n"] = np.array(float(self.n))
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Perception":
        arrays = load_arrays(path)
        groups: dict[str, dict[str, Tensor]] = {"digit": {}, "op": {}, "salience": {}}
        n = 2
        for name, arr in arrays.items():
            prefix, _, rest = name.partition("/")
            if prefix == "meta":
                n = int(arr)
            else:
                groups[prefix][rest] = Tensor(arr)
        return cls(groups["digit"], groups["op"], groups["salience"], n=n)


class StubPerception:
    """Perfect lookup perception for harness tests and the reduced RL task.

    Classifies a glimpse by byte-identity against the bound example's cell
    contents: digit cells return their digit, anything else returns class 0
    with low confidence; the salience map is the true occupancy.
    """

    def __init__(self, n: int = 2):
        self.n = n
        self._digits: dict[bytes, int] = {}
        self._ops: dict[bytes, int] = {}
        self._occupancy = np.zeros((n, n))

    def spawn(self) -> "StubPerception":
        """Fresh instance per episode; bindings are per-example state."""
        return StubPerception(self.n)

    def bind(self, example) -> None:
        self._digits.clear()
        self._ops.clear()
        self._occupancy = example.occupancy.astype(np.float64)
        for (x, y), (kind, value) in example.placements.items():
            patch = example.image[y * CELL : (y + 1) * CELL, x * CELL : (x + 1) * CELL]
            if kind == "digit":
                self._digits[patch.tobytes()] = value
            else:
                self._ops[patch.tobytes()] = value

    @staticmethod
    def _probs(size: int, hit: int | None) -> np.ndarray:
        if hit is None:
            return np.full(size, 1.0 / size)
        p = np.zeros(size)
        p[hit] = 1.0
        return p

    def classify_digit(self, glimpse: np.ndarray) -> tuple[int, np.ndarray]:
        hit = self._digits.get(glimpse.tobytes())
        return (hit if hit is not None else 0), self._probs(10, hit)

    def classify_op(self, glimpse: np.ndarray) -> tuple[int, np.ndarray]:
        hit = self._ops.get(glimpse.tobytes())
        return (hit if hit is not None else 0), self._probs(len(OP_LETTERS), hit)

    def salience_map(self, scene, fovea_x, fovea_y) -> np.ndarray:
        return self._occupancy.copy()
