import gzip
import itertools
import struct

import numpy as np
import pytest

from varl.data import (
    BadMagicError,
    CountMismatchError,
    DataError,
    DatasetSpec,
    Task,
    class_of,
    compose_scene,
    load_dataset,
    load_idx,
    make_dataset,
    render_glyph,
    salience_ground_truth,
    save_dataset,
    synthetic_bank,
    synthetic_glyphs,
    task_answer,
)

BANK = synthetic_bank(seed=0, digits_per_split=300, letters_per_split=120)


def write_idx_pair(tmp_path, count=10, rows=28, cols=28, gz=False, img_magic=2051):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(count, rows, cols)).astype(np.uint8)
    labels = rng.integers(0, 10, size=count).astype(np.uint8)
    img_blob = struct.pack(">IIII", img_magic, count, rows, cols) + pixels.tobytes()
    lbl_blob = struct.pack(">II", 2049, count) + labels.tobytes()
    if gz:
        img_blob, lbl_blob = gzip.compress(img_blob), gzip.compress(lbl_blob)
    ip, lp = tmp_path / "imgs-idx3-ubyte", tmp_path / "lbls-idx1-ubyte"
    ip.write_bytes(img_blob)
    lp.write_bytes(lbl_blob)
    return ip, lp, pixels, labels


def test_load_idx_roundtrip(tmp_path):
    ip, lp, pixels, labels = write_idx_pair(tmp_path)
    images, lbls = load_idx(ip, lp)
    assert np.array_equal(images, pixels)
    assert np.array_equal(lbls, labels)


def test_load_idx_gzip(tmp_path):
    ip, lp, pixels, _ = write_idx_pair(tmp_path, gz=True)
    images, _ = load_idx(ip, lp)
    assert np.array_equal(images, pixels)


def test_load_idx_mnist_scale_byte_count(tmp_path):
    # MNIST-style test file: 10000 images of 784 bytes each
    ip, lp, _, _ = write_idx_pair(tmp_path, count=10000)
    assert ip.stat().st_size == 16 + 10000 * 784
    images, labels = load_idx(ip, lp)
    assert images.shape == (10000, 28, 28)
    assert len(labels) == 10000


def test_load_idx_rejects_label_magic_in_image_slot(tmp_path):
    ip, lp, _, _ = write_idx_pair(tmp_path, img_magic=0x00000801)
    with pytest.raises(BadMagicError):
        load_idx(ip, lp)


def test_load_idx_truncated(tmp_path):
    ip, lp, _, _ = write_idx_pair(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-100])
    with pytest.raises(DataError, match="implies"):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp, _, _ = write_idx_pair(tmp_path)
    blob = lp.read_bytes()
    lp.write_bytes(struct.pack(">II", 2049, 7) + blob[8:])
    with pytest.raises(CountMismatchError):
        load_idx(ip, lp)


@pytest.mark.parametrize(
    "task,digits,letter,expected",
    [
        (Task.SUM, [6, 7], None, 13),
        (Task.PROD, [2, 3, 4], None, 24),
        (Task.COMBINED, [5, 2], "N", 2),
        (Task.MAX, [3, 9], None, 9),
        (Task.MIN, [0, 9], None, 0),
        (Task.COMBINED, [3, 3, 3], "A", 9),
        (Task.COMBINED, [3, 3, 3], "M", 27),
        (Task.COMBINED, [2, 8], "X", 8),
    ],
)
def test_task_answer(task, digits, letter, expected):
    assert task_answer(task, digits, letter) == expected


def test_task_answer_arity_and_letter_errors():
    with pytest.raises(DataError):
        task_answer(Task.SUM, [1, 2, 3, 4])
    with pytest.raises(DataError):
        task_answer(Task.SUM, [1, 2], "A")
    with pytest.raises(DataError):
        task_answer(Task.COMBINED, [1, 2])


def test_class_of():
    assert class_of(99) == 99
    assert class_of(135) == 100
    assert class_of(100) == 100
    assert class_of(0) == 0
    with pytest.raises(DataError):
        class_of(-1)


def test_glyph_rendering_shape_and_determinism():
    a = render_glyph("7", np.random.default_rng(42))
    b = render_glyph("7", np.random.default_rng(42))
    assert a.shape == (28, 28) and a.dtype == np.uint8
    assert np.array_equal(a, b)
    assert a.max() > 100  # glyph actually visible


def test_synthetic_glyphs_cover_all_classes():
    digits = synthetic_glyphs("digits", 500, seed=1)
    letters = synthetic_glyphs("letters", 200, seed=1)
    assert set(digits.labels) == set(range(10))
    assert set(letters.labels) == set(range(4))


def test_compose_scene_cell_counts():
    rng = np.random.default_rng(0)
    ex = compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.SUM, 2, digit_counts=(3,))
    assert ex.occupancy.sum() == 3
    ex = compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.COMBINED, 2,
                       digit_counts=(3,))
    assert ex.occupancy.sum() == 4


def test_compose_scene_insufficient_cells():
    rng = np.random.default_rng(0)
    with pytest.raises(DataError):
        compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.COMBINED, 1,
                      digit_counts=(2,))


def test_blank_cells_identically_zero():
    rng = np.random.default_rng(3)
    for _ in range(20):
        ex = compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.SUM, 2)
        for y in range(2):
            for x in range(2):
                patch = ex.image[y * 28 : (y + 1) * 28, x * 28 : (x + 1) * 28]
                if not ex.occupancy[y, x]:
                    assert not patch.any()
                else:
                    assert patch.any()


def test_sum_answers_within_brute_force_range():
    # independent oracle: enumerate all 2- and 3-digit multisets
    lo = min(min(sum(c) for c in itertools.product(range(10), repeat=k)) for k in (2, 3))
    hi = max(max(sum(c) for c in itertools.product(range(10), repeat=k)) for k in (2, 3))
    assert (lo, hi) == (0, 27)
    examples = make_dataset(DatasetSpec(Task.SUM, sample_count=1000, seed=5), BANK)
    answers = [ex.answer for ex in examples]
    assert min(answers) >= 0 and max(answers) <= 27


def test_answer_ranges_all_tasks_brute_force():
    ranges = {}
    for task, fn in [(Task.SUM, sum), (Task.PROD, lambda c: int(np.prod(c))),
                     (Task.MAX, max), (Task.MIN, min)]:
        vals = [fn(list(c)) for k in (2, 3) for c in itertools.product(range(10), repeat=k)]
        ranges[task] = (min(vals), max(vals))
    assert ranges[Task.SUM] == (0, 27)
    assert ranges[Task.PROD] == (0, 729)
    assert ranges[Task.MAX] == (0, 9)
    assert ranges[Task.MIN] == (0, 9)
    for task, (lo, hi) in ranges.items():
        for ex in make_dataset(DatasetSpec(task, sample_count=300, seed=6), BANK):
            assert lo <= ex.answer <= hi


def test_examples_consistent_class_and_answer():
    for task in Task:
        for ex in make_dataset(DatasetSpec(task, sample_count=100, seed=7), BANK):
            assert ex.answer == task_answer(ex.task, ex.digits, ex.op_letter)
            assert ex.class_index == class_of(ex.answer)
            assert len(ex.digits) in (2, 3)


def test_make_dataset_deterministic_and_sized():
    spec = DatasetSpec(Task.COMBINED, sample_count=128, seed=9)
    a = make_dataset(spec, BANK)
    b = make_dataset(spec, BANK)
    assert len(a) == 128
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))
    assert [x.answer for x in a] == [y.answer for y in a]


def test_train_test_glyph_pools_disjoint():
    bank = synthetic_bank(seed=0, digits_per_split=50, letters_per_split=20)
    train_bytes = {img.tobytes() for img in bank.digits_train.images}
    test_bytes = {img.tobytes() for img in bank.digits_test.images}
    assert not train_bytes & test_bytes


def test_salience_ground_truth():
    rng = np.random.default_rng(11)
    ex = compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.COMBINED, 2,
                       digit_counts=(3,))
    mask = salience_ground_truth(ex)
    assert mask.shape == (2, 2)
    assert mask.sum() == 4.0  # 3 digits + 1 letter
    ex2 = compose_scene(rng, BANK.digits_train, BANK.letters_train, Task.SUM, 3,
                        digit_counts=(2,))
    assert salience_ground_truth(ex2).sum() == 2.0


def test_dataset_cache_roundtrip(tmp_path):
    examples = make_dataset(DatasetSpec(Task.COMBINED, sample_count=20, seed=13), BANK)
    path = tmp_path / "cache.varl"
    save_dataset(path, examples, source="synthetic")
    again = load_dataset(path)
    assert len(again) == 20
    for a, b in zip(examples, again):
        assert np.array_equal(a.image, b.image)
        assert a.answer == b.answer
        assert a.digits == b.digits
        assert a.op_letter == b.op_letter
        assert np.array_equal(a.occupancy, b.occupancy)
    sidecar = (tmp_path / "cache.varl.json").read_text()
    assert '"task": "combined"' in sidecar
