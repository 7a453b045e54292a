import numpy as np
import pytest

from varl.data import CELL, LETTER_TASK, OP_LETTERS, GlyphBank, Task, class_of, task_answer
from varl.data import LabeledExample, synthetic_bank


def build_scene(
    bank: GlyphBank,
    task: Task,
    cell_values: dict,
    n: int = 2,
    rng: np.random.Generator | None = None,
    split: str = "train",
) -> LabeledExample:
    """Compose a scene with exact per-cell contents.

    ``cell_values`` maps (x, y) to ("digit", value) or ("letter", class);
    glyph instances are drawn from the bank's pools for that split.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    image = np.zeros((CELL * n, CELL * n), dtype=np.uint8)
    occupancy = np.zeros((n, n), dtype=bool)
    digits: list[int] = []
    letter_class: int | None = None
    for (x, y) in sorted(cell_values, key=lambda c: (c[1], c[0])):
        kind, value = cell_values[(x, y)]
        pool = bank.pool("digits" if kind == "digit" else "letters", split)
        choices = np.flatnonzero(pool.labels == value)
        glyph = pool.images[int(rng.choice(choices))]
        image[y * CELL : (y + 1) * CELL, x * CELL : (x + 1) * CELL] = glyph
        occupancy[y, x] = True
        if kind == "digit":
            digits.append(value)
        else:
            letter_class = value
    op_letter = OP_LETTERS[letter_class] if letter_class is not None else None
    answer = task_answer(task, digits, op_letter)
    return LabeledExample(
        image=image,
        task=task,
        digits=digits,
        op_letter=op_letter,
        answer=answer,
        class_index=class_of(answer),
        occupancy=occupancy,
        placements=dict(cell_values),
    )


@pytest.fixture(scope="session")
def shared_bank():
    return synthetic_bank(seed=0, digits_per_split=800, letters_per_split=300)


@pytest.fixture(scope="session")
def scene_builder():
    return build_scene
