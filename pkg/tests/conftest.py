"""Session-scoped reference artifacts shared by trainer, evaluation and
acceptance tests.

The reference configuration: 8 tasks x 32 pairs, gap 0.7, seed 7; pretext
pre-training on the train-split human clips; 300-step adaptation with the
default config. Built once per session because several tests pin ordinals
measured on exactly this run.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hralign.dataset import generate_paired_set, split_pairs
from hralign.encoder import pretext_pretrain
from hralign.rng import RngState
from hralign.trainer import TrainConfig, train_hr_align

REFERENCE_SEED = 7
REFERENCE_TASKS = 8
REFERENCE_PAIRS_PER_TASK = 32
REFERENCE_GAP = 0.7
PRETEXT_EPOCHS = 20
PRETEXT_LR = 3e-6
BASELINE_LR = 3e-4


@pytest.fixture(scope="session")
def reference_pairs():
    return generate_paired_set(
        RngState(REFERENCE_SEED), REFERENCE_TASKS, REFERENCE_PAIRS_PER_TASK, REFERENCE_GAP
    )


@pytest.fixture(scope="session")
def reference_split(reference_pairs):
    return split_pairs(reference_pairs, 0.25)


@pytest.fixture(scope="session")
def reference_backbone(reference_split):
    train, _ = reference_split
    backbone, history = pretext_pretrain(
        RngState(REFERENCE_SEED),
        [p.human for p in train],
        epochs=PRETEXT_EPOCHS,
        lr=PRETEXT_LR,
    )
    backbone.pretext_history = history  # stashed for the pretext tests
    return backbone


@pytest.fixture(scope="session")
def reference_run(reference_split, reference_backbone):
    """(checkpoint, metrics, backbone snapshot taken before training)."""
    train, _ = reference_split
    snapshot = {
        name: t.data.copy() for name, t in reference_backbone.named_parameters().items()
    }
    checkpoint, metrics = train_hr_align(TrainConfig(), train, reference_backbone)
    return checkpoint, metrics, snapshot


@pytest.fixture(scope="session")
def small_pairs():
    """A light dataset for unit tests that just need real clips."""
    return generate_paired_set(RngState(11), 3, 6, 0.5)
