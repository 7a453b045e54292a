"""Pretrain the three perception networks, then run the scripted oracle.

The digit and op classifiers are small LeNets trained on single glyphs; the
salience net is an MLP over pooled scene blocks.  A reduced glyph bank keeps
the whole script around a minute; `varl pretrain` runs the full-size version
and saves the bundle for reuse.
"""
import time

from varl.data import DatasetSpec, Task, make_dataset, synthetic_bank
from varl.harness import oracle_accuracy
from varl.perception import (
    Perception,
    PretrainConfig,
    make_salience_scenes,
    pretrain_classifier,
    pretrain_salience,
)


def timed(label, fn):
    t0 = time.perf_counter()
    out = fn()
    print(f"{label}: {time.perf_counter() - t0:5.1f}s")
    return out


# 1. Train the three networks ------------------------------------------------
# Each trains until its held-out split stops improving and keeps the best
# snapshot, so the numbers below are already validation accuracies.

bank = synthetic_bank(seed=0, digits_per_split=3000, letters_per_split=1200)
config = PretrainConfig(seed=0)

(digit_params, digit_val) = timed(
    "digit LeNet ", lambda: pretrain_classifier(bank.digits_train, 10, config)
)
(op_params, op_val) = timed(
    "op LeNet    ", lambda: pretrain_classifier(bank.letters_train, 4, config)
)
scenes = make_salience_scenes(bank, "train", count=1500, n=2, seed=0)
(salience_params, salience_val) = timed(
    "salience MLP", lambda: pretrain_salience(scenes, config, n=2)
)
print()
print(f"validation accuracy: digit {digit_val:.4f}, op {op_val:.4f}, "
      f"salience (per cell) {salience_val:.4f}")

# 2. Held-out glyph accuracy -------------------------------------------------
# The test split draws from glyphs the training split never saw.

perception = Perception(digit_params, op_params, salience_params, n=2)

digit_guess, _ = perception.classify_digit_batch(bank.digits_test.images)
op_guess, _ = perception.classify_op_batch(bank.letters_test.images)
print(f"held-out accuracy:   digit {(digit_guess == bank.digits_test.labels).mean():.4f}, "
      f"op {(op_guess == bank.letters_test.labels).mean():.4f}")
print()

# 3. Scripted oracle on unseen scenes ----------------------------------------
# The oracle policy drives the interface with these frozen networks.  Its
# accuracy is the ceiling the learned controller aims for, and a direct
# check that the perception stack is good enough to support exact answers.

for task in (Task.SUM, Task.COMBINED):
    examples = make_dataset(
        DatasetSpec(task=task, sample_count=300, seed=123, split="test"), bank
    )
    acc = oracle_accuracy(examples, perception)
    print(f"oracle accuracy on 300 unseen {task.value} scenes: {acc:.4f}")

# Combined trails Sum because the script must first decide which salient
# cell holds the operator letter, and the classifiers were never trained
# on each other's glyphs; see OraclePolicy._find_letter for the probe.

