"""Glyph ingestion and scene composition for the visual arithmetic tasks.

Scenes are (28n, 28n) grayscale images built from an n-by-n grid of cells;
each cell is blank or holds one 28x28 glyph (a digit, or for the combined
task one operation letter from ``AMXN``).  Glyphs come either from
EMNIST-format IDX files or from the built-in synthetic renderer, which is
the default so the package works without any downloaded data.
"""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.ndimage import affine_transform

from . import serialize

CELL = 28
OP_LETTERS = "AMXN"


class Task(Enum):
    SUM = "sum"
    PROD = "prod"
    MAX = "max"
    MIN = "min"
    COMBINED = "combined"


REDUCTIONS = {
    Task.SUM: sum,
    Task.PROD: lambda ds: int(np.prod(ds)),
    Task.MAX: max,
    Task.MIN: min,
}

# combined-task letters select the same four reductions
LETTER_TASK = {"A": Task.SUM, "M": Task.PROD, "X": Task.MAX, "N": Task.MIN}


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass
class GlyphSet:
    """Immutable stack of 28x28 glyphs with integer class labels.

    Digit labels are 0-9; letter labels index into ``AMXN`` (0-3).
    """

    images: np.ndarray  # (count, 28, 28) uint8
    labels: np.ndarray  # (count,) int64
    kind: str  # "digits" | "letters"
    source: str = "unknown"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.kind not in ("digits", "letters"):
            raise DataError(f"unknown glyph kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices: np.ndarray) -> "GlyphSet":
        return GlyphSet(self.images[indices], self.labels[indices], self.kind, self.source)

    def by_label(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


# ---------------------------------------------------------------------------
# IDX ingestion

IDX_IMAGE_MAGIC = 0x00000803  # 2051
IDX_LABEL_MAGIC = 0x00000801  # 2049


def _read_maybe_gzip(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_idx(images_path: str | Path, labels_path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair (optionally gzipped) into numpy arrays.

    Magic numbers, dimension counts, and payload sizes are all validated;
    each failure mode raises its own error type.
    """
    img_blob = _read_maybe_gzip(images_path)
    if len(img_blob) < 16:
        raise TruncatedPayloadError(f"{images_path}: header shorter than 16 bytes")
    magic, count, rows, cols = struct.unpack(">IIII", img_blob[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(
            f"{images_path}: magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )
    expected = 16 + count * rows * cols
    if len(img_blob) < expected:
        raise TruncatedPayloadError(
            f"{images_path}: {len(img_blob)} bytes, header implies {expected}"
        )
    images = np.frombuffer(img_blob[16:expected], dtype=np.uint8).reshape(count, rows, cols)

    lbl_blob = _read_maybe_gzip(labels_path)
    if len(lbl_blob) < 8:
        raise TruncatedPayloadError(f"{labels_path}: header shorter than 8 bytes")
    magic, lbl_count = struct.unpack(">II", lbl_blob[:8])
    if magic != IDX_LABEL_MAGIC:
        raise BadMagicError(
            f"{labels_path}: magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )
    if len(lbl_blob) < 8 + lbl_count:
        raise TruncatedPayloadError(
            f"{labels_path}: {len(lbl_blob)} bytes, header implies {8 + lbl_count}"
        )
    labels = np.frombuffer(lbl_blob[8 : 8 + lbl_count], dtype=np.uint8).astype(np.int64)
    if lbl_count != count:
        raise CountMismatchError(f"{count} images but {lbl_count} labels")
    return images.copy(), labels


def load_digit_glyphs(images_path, labels_path) -> GlyphSet:
    images, labels = load_idx(images_path, labels_path)
    keep = labels <= 9
    return GlyphSet(images[keep], labels[keep], "digits", source=str(images_path))


def load_letter_glyphs(images_path, labels_path, label_of_a: int = 10) -> GlyphSet:
    """Load letters and keep only AMXN, remapped to 0-3.

    ``label_of_a`` is the dataset's label for capital A (10 in EMNIST
    byclass/bymerge, 1 in the letters split).
    """
    images, labels = load_idx(images_path, labels_path)
    wanted = {label_of_a + ord(ch) - ord("A"): i for i, ch in enumerate(OP_LETTERS)}
    keep = np.isin(labels, list(wanted))
    remapped = np.array([wanted[v] for v in labels[keep]], dtype=np.int64)
    return GlyphSet(images[keep], remapped, "letters", source=str(images_path))


# ---------------------------------------------------------------------------
# synthetic glyphs: 5x7 pixel font, upscaled, randomly warped and noised

_FONT = {
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
}


def _base_bitmap(char: str) -> np.ndarray:
    rows = _FONT[char].split()
    bits = np.array([[int(c) for c in row] for row in rows], dtype=np.float64)
    up = np.kron(bits, np.ones((3, 3)))  # 15x21
    canvas = np.zeros((CELL, CELL))
    canvas[3 : 3 + up.shape[0], 6 : 6 + up.shape[1]] = up
    return canvas


def render_glyph(char: str, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 uint8 glyph: pixel font under a small random affine + noise."""
    base = _base_bitmap(char)
    angle = rng.uniform(-0.22, 0.22)
    scale = rng.uniform(0.85, 1.15)
    shear = rng.uniform(-0.12, 0.12)
    shift = rng.uniform(-2.2, 2.2, size=2)
    cos, sin = np.cos(angle), np.sin(angle)
    lin = np.array([[cos, -sin], [sin + shear, cos]]) / scale
    center = np.array([CELL / 2, CELL / 2])
    offset = center - lin @ (center + shift)
    warped = affine_transform(base, lin, offset=offset, order=1, mode="constant")
    intensity = rng.uniform(0.65, 1.0) * 255.0
    noisy = warped * intensity + rng.normal(0.0, 7.0, size=base.shape)
    return np.clip(noisy, 0, 255).astype(np.uint8)


def synthetic_glyphs(kind: str, count: int, seed: int) -> GlyphSet:
    """Deterministic synthetic glyph set; used whenever EMNIST files are absent."""
    rng = np.random.default_rng([seed, 0x617])
    chars = "0123456789" if kind == "digits" else OP_LETTERS
    labels = rng.integers(0, len(chars), size=count)
    images = np.stack([render_glyph(chars[lbl], rng) for lbl in labels])
    return GlyphSet(images, labels.astype(np.int64), kind, source="synthetic")


@dataclass
class GlyphBank:
    """Train/test glyph pools with disjoint underlying glyph indices."""

    digits_train: GlyphSet
    digits_test: GlyphSet
    letters_train: GlyphSet
    letters_test: GlyphSet
    source: str = "synthetic"

    def pool(self, kind: str, split: str) -> GlyphSet:
        return getattr(self, f"{kind}_{split}")


def synthetic_bank(
    seed: int = 0, digits_per_split: int = 12000, letters_per_split: int = 4000
) -> GlyphBank:
    all_digits = synthetic_glyphs("digits", 2 * digits_per_split, seed)
    all_letters = synthetic_glyphs("letters", 2 * letters_per_split, seed + 1)
    return GlyphBank(
        digits_train=all_digits.subset(np.arange(digits_per_split)),
        digits_test=all_digits.subset(np.arange(digits_per_split, 2 * digits_per_split)),
        letters_train=all_letters.subset(np.arange(letters_per_split)),
        letters_test=all_letters.subset(np.arange(letters_per_split, 2 * letters_per_split)),
        source="synthetic",
    )


def emnist_bank(data_dir: str | Path, prefix: str = "emnist-byclass", label_of_a: int = 10) -> GlyphBank:
    """Build a bank from EMNIST IDX files laid out as distributed.

    Expects ``{prefix}-{train,test}-images-idx3-ubyte[.gz]`` and matching
    label files inside ``data_dir``.
    """
    d = Path(data_dir)

    def pair(split):
        def find(stem):
            for suffix in ("", ".gz"):
                p = d / f"{prefix}-{split}-{stem}{suffix}"
                if p.exists():
                    return p
            raise FileNotFoundError(f"missing {prefix}-{split}-{stem} under {d}")

        return find("images-idx3-ubyte"), find("labels-idx1-ubyte")

    tr_i, tr_l = pair("train")
    te_i, te_l = pair("test")
    return GlyphBank(
        digits_train=load_digit_glyphs(tr_i, tr_l),
        digits_test=load_digit_glyphs(te_i, te_l),
        letters_train=load_letter_glyphs(tr_i, tr_l, label_of_a),
        letters_test=load_letter_glyphs(te_i, te_l, label_of_a),
        source=str(d),
    )


def default_bank(data_dir: str | Path | None, seed: int = 0) -> GlyphBank:
    """EMNIST bank when files are present, synthetic otherwise."""
    if data_dir is not None and Path(data_dir).exists():
        return emnist_bank(data_dir)
    return synthetic_bank(seed)


# ---------------------------------------------------------------------------
# task semantics


def task_answer(task: Task, digits: list[int], op_letter: str | None = None) -> int:
    # 2-3 digits normally; 1 is allowed for the reduced single-digit task
    if len(digits) not in (1, 2, 3):
        raise DataError(f"expected 1-3 digits, got {len(digits)}")
    if task is Task.COMBINED:
        if op_letter not in LETTER_TASK:
            raise DataError(f"combined task needs an op letter from {OP_LETTERS}, got {op_letter!r}")
        effective = LETTER_TASK[op_letter]
    else:
        if op_letter is not None:
            raise DataError(f"{task.value} task does not take an op letter")
        effective = task
    return int(REDUCTIONS[effective](list(digits)))


def class_of(answer: int) -> int:
    """Collapse every answer >= 100 into class 100 (the CNN label space)."""
    if answer < 0:
        raise DataError(f"answers are non-negative, got {answer}")
    return min(answer, 100)


@dataclass
class LabeledExample:
    image: np.ndarray  # (28n, 28n) uint8
    task: Task
    digits: list[int]
    op_letter: str | None
    answer: int
    class_index: int
    occupancy: np.ndarray  # (n, n) bool, indexed [y, x]
    # cell -> ("digit", value) or ("letter", class); used by stub perception and tests
    placements: dict[tuple[int, int], tuple[str, int]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.image.shape[0] // CELL


def compose_scene(
    rng: np.random.Generator,
    digit_pool: GlyphSet,
    letter_pool: GlyphSet | None,
    task: Task,
    n: int,
    digit_counts: tuple[int, ...] = (2, 3),
) -> LabeledExample:
    """Paste glyphs into distinct random cells of a black (28n)^2 canvas."""
    digit_count = int(rng.choice(digit_counts))
    need = digit_count + (1 if task is Task.COMBINED else 0)
    if need > n * n:
        raise DataError(f"{need} glyphs do not fit an {n}x{n} grid")
    if len(digit_pool) == 0 or (task is Task.COMBINED and not letter_pool):
        raise DataError("glyph pool exhausted")

    flat_cells = rng.choice(n * n, size=need, replace=False)
    cells = [(int(c % n), int(c // n)) for c in flat_cells]  # (x, y)

    image = np.zeros((CELL * n, CELL * n), dtype=np.uint8)
    occupancy = np.zeros((n, n), dtype=bool)
    placements: dict[tuple[int, int], tuple[str, int]] = {}

    def paste(cell, glyph):
        x, y = cell
        image[y * CELL : (y + 1) * CELL, x * CELL : (x + 1) * CELL] = glyph
        occupancy[y, x] = True

    digits = []
    for cell in cells[:digit_count]:
        idx = int(rng.integers(len(digit_pool)))
        digits.append(int(digit_pool.labels[idx]))
        paste(cell, digit_pool.images[idx])
        placements[cell] = ("digit", digits[-1])

    op_letter = None
    if task is Task.COMBINED:
        letter_class = int(rng.integers(len(OP_LETTERS)))
        candidates = letter_pool.by_label(letter_class)
        if len(candidates) == 0:
            raise DataError(f"no glyphs for letter {OP_LETTERS[letter_class]}")
        idx = int(candidates[rng.integers(len(candidates))])
        op_letter = OP_LETTERS[letter_class]
        paste(cells[-1], letter_pool.images[idx])
        placements[cells[-1]] = ("letter", letter_class)

    answer = task_answer(task, digits, op_letter)
    return LabeledExample(
        image=image,
        task=task,
        digits=digits,
        op_letter=op_letter,
        answer=answer,
        class_index=class_of(answer),
        occupancy=occupancy,
        placements=placements,
    )


def salience_ground_truth(example: LabeledExample) -> np.ndarray:
    """Cell-resolution target: 1.0 where a glyph sits, 0.0 elsewhere."""
    return example.occupancy.astype(np.float64)


def compose_salience_scene(
    rng: np.random.Generator, digit_pool: GlyphSet, letter_pool: GlyphSet, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Scene of 0..n^2 scattered characters (digits and letters) plus its mask.

    Salience pretraining needs empty, partial, and full grids, which the
    task scenes never produce.
    """
    count = int(rng.integers(0, n * n + 1))
    image = np.zeros((CELL * n, CELL * n), dtype=np.uint8)
    occupancy = np.zeros((n, n), dtype=bool)
    for flat in rng.choice(n * n, size=count, replace=False):
        x, y = int(flat % n), int(flat // n)
        pool = letter_pool if rng.random() < 0.3 else digit_pool
        glyph = pool.images[int(rng.integers(len(pool)))]
        image[y * CELL : (y + 1) * CELL, x * CELL : (x + 1) * CELL] = glyph
        occupancy[y, x] = True
    return image, occupancy.astype(np.float64)


@dataclass
class DatasetSpec:
    task: Task
    n: int = 2
    sample_count: int = 100
    seed: int = 0
    split: str = "train"
    digit_counts: tuple[int, ...] = (2, 3)


def make_dataset(spec: DatasetSpec, bank: GlyphBank) -> list[LabeledExample]:
    """Seeded, reproducible scene list drawing glyphs from one split's pools."""
    if spec.split not in ("train", "test"):
        raise DataError(f"unknown split {spec.split!r}")
    if not isinstance(spec.task, Task):
        raise DataError(f"unknown task {spec.task!r}")
    rng = np.random.default_rng([spec.seed, 0xDA7A, 0 if spec.split == "train" else 1])
    digit_pool = bank.pool("digits", spec.split)
    letter_pool = bank.pool("letters", spec.split)
    return [
        compose_scene(rng, digit_pool, letter_pool, spec.task, spec.n, spec.digit_counts)
        for _ in range(spec.sample_count)
    ]


# ---------------------------------------------------------------------------
# dataset cache: VARL container with u8 payloads + JSON sidecar


def save_dataset(path: str | Path, examples: list[LabeledExample], source: str) -> None:
    path = Path(path)
    count = len(examples)
    if count == 0:
        raise DataError("refusing to save an empty dataset")
    n = examples[0].n
    task = examples[0].task
    digits = np.full((count, 3), -1, dtype=np.int64)
    letters = np.full(count, -1, dtype=np.int64)
    for i, ex in enumerate(examples):
        digits[i, : len(ex.digits)] = ex.digits
        if ex.op_letter is not None:
            letters[i] = OP_LETTERS.index(ex.op_letter)
    serialize.save_arrays(
        path,
        {
            "images": np.stack([ex.image for ex in examples]),
            "digits": digits,
            "op_letters": letters,
            "answers": np.array([ex.answer for ex in examples], dtype=np.int64),
            "occupancy": np.stack([ex.occupancy for ex in examples]).astype(np.uint8),
        },
    )
    sidecar = {"task": task.value, "n": n, "seed": None, "count": count, "source": source}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_dataset(path: str | Path) -> list[LabeledExample]:
    path = Path(path)
    arrays = serialize.load_arrays(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    task = Task(meta["task"])
    out = []
    for i in range(meta["count"]):
        digits = [int(d) for d in arrays["digits"][i] if d >= 0]
        letter_idx = int(arrays["op_letters"][i])
        op_letter = OP_LETTERS[letter_idx] if letter_idx >= 0 else None
        answer = int(arrays["answers"][i])
        occupancy = arrays["occupancy"][i].astype(bool)
        out.append(
            LabeledExample(
                image=arrays["images"][i],
                task=task,
                digits=digits,
                op_letter=op_letter,
                answer=answer,
                class_index=class_of(answer),
                occupancy=occupancy,
            )
        )
    return out
