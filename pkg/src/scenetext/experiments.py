"""Desk-scale training experiments shared by ``scripts/`` and the acceptance suite.

Every run is keyed by a seed that fixes both the generated data and the
weight initialisation, so repeated calls reproduce the same numbers.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

from . import synthgen as sg
from . import textcnn as tc
from . import tinynn as nn

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskConfig:
    synthetic_count: int = 6200
    binary_count: int = 2000
    holdout_count: int = 1240
    binary_holdout_count: int = 600
    context_prob: float = 0.3
    stage1_iters: int = 3000
    stage2_iters: int = 7000
    batch_size: int = 16
    learning_rate: float = 0.01


@dataclass
class DeskData:
    synthetic: tc.SampleSet
    binary: tc.SampleSet
    holdout: tc.SampleSet
    binary_holdout: tc.SampleSet


@dataclass
class RunSummary:
    name: str
    seed: int
    label_error: float | None  # held-out 62-class error after stage 1
    binary_error: float | None  # held-out text/non-text error after stage 2
    checkpoints: list = field(default_factory=list)
    seconds: float = 0.0
    model: tc.TextCnnModel | None = None


@lru_cache(maxsize=4)
def desk_data(seed: int, cfg: DeskConfig = DeskConfig()) -> DeskData:
    """Training and held-out sets; held-out data uses disjoint seed offsets."""
    char = sg.SynthConfig(count=cfg.synthetic_count, seed=seed, context_prob=cfg.context_prob)
    return DeskData(
        synthetic=sg.synth_char_set(char),
        binary=sg.binary_set(cfg.binary_count, seed + 2000),
        holdout=sg.synth_char_set(replace(char, count=cfg.holdout_count, seed=seed + 1000)),
        binary_holdout=sg.binary_set(cfg.binary_holdout_count, seed + 3000),
    )


def run_variant(
    name: str,
    seed: int,
    cfg: DeskConfig = DeskConfig(),
    lambda_mask: float = 0.3,
    lambda_label2: float = 0.3,
    stages=(1, 2),
) -> RunSummary:
    """Train one model variant from scratch and score it on the held-out sets."""
    data = desk_data(seed, cfg)
    schedule = tc.StageSchedule(
        stage1_iters=cfg.stage1_iters,
        stage2_iters=cfg.stage2_iters,
        lambda_mask_stage1=lambda_mask,
        lambda_label_stage2=lambda_label2,
    )
    train_cfg = nn.TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, seed=seed)
    model = tc.TextCnnModel.initialize(seed)
    start = time.perf_counter()
    result = tc.train_staged(model, data.synthetic, data.binary, schedule, train_cfg, holdout=data.holdout, stages=stages)
    seconds = time.perf_counter() - start
    label_error = result.checkpoints[-1][1]["label_error"] if 1 in stages else None
    binary_error = tc.evaluate(model, data.binary_holdout, "binary") if 2 in stages else None
    log.info("%s seed %d: label error %s, binary error %s, %.0fs", name, seed, label_error, binary_error, seconds)
    return RunSummary(name, seed, label_error, binary_error, result.checkpoints, seconds, model)


def full_model(seed: int, cfg: DeskConfig = DeskConfig()) -> RunSummary:
    return run_variant("full", seed, cfg)


def binary_only(seed: int, cfg: DeskConfig = DeskConfig()) -> RunSummary:
    """No character or mask supervision: stage 2 with the label weight at zero."""
    return run_variant("binary-only", seed, cfg, lambda_label2=0.0, stages=(2,))


def stage1_only(seed: int, lambda_mask: float, cfg: DeskConfig = DeskConfig()) -> RunSummary:
    return run_variant(f"stage1 mask={lambda_mask:g}", seed, cfg, lambda_mask=lambda_mask, stages=(1,))
