"""Paired toy experiment: does training the decoder parameters help?

One pretrained score network is fine-tuned three ways on the same data and
seed, and each copy is scored on held-out structures:

``full``
    network and post-processing parameters trained through the unroll.
``frozen``
    network trained through the unroll, post-processing parameters fixed.
``bce``
    network fine-tuned with the pair-wise cross-entropy alone; the unrolled
    decoder is only used at prediction time.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

from . import model as model_io
from . import train
from .core import matrix_to_pairs
from .evaluation import evaluate
from .synth import hairpin_dataset

ARMS = ("full", "frozen", "bce")


@dataclass
class ArmResult:
    valid_f1: float
    checkpoint: str
    report: str


@dataclass
class AblationRun:
    seed: int
    config: train.TrainConfig
    n_train: int
    n_valid: int
    arms: dict[str, ArmResult] = field(default_factory=dict)

    def f1(self, arm: str) -> float:
        return self.arms[arm].valid_f1


def default_config(seed: int) -> train.TrainConfig:
    return train.TrainConfig(epochs_pretrain=30, epochs_finetune=5, seed=seed)


def ablation_run(seed: int, n_records: int = 240, valid_fraction: float = 0.3,
                 config: train.TrainConfig | None = None, arms=ARMS) -> AblationRun:
    """Pretrain once, fine-tune each arm from the same weights, score on held-out data."""
    cfg = config or default_config(seed)
    records = hairpin_dataset(n_records, seed=seed)
    tr, va, _ = train.stratified_split(records, (1 - valid_fraction, valid_fraction, 0.0), seed=seed)
    base, _ = train.pretrain(cfg, tr)
    variants = {
        "full": cfg,
        "frozen": dataclasses.replace(cfg, freeze_phi=True),
        "bce": dataclasses.replace(cfg, unroll=False),
    }
    run = AblationRun(seed, cfg, len(tr), len(va))
    for arm in arms:
        m, _ = train.finetune(variants[arm], tr, copy.deepcopy(base))
        preds = [matrix_to_pairs(m.predict(r.seq)) for r in va]
        rep = evaluate(preds, [r.pairs for r in va], [len(r.seq) for r in va],
                       [r.seq.id for r in va], [r.seq.family for r in va])
        run.arms[arm] = ArmResult(rep.means["f1"], model_io.dumps(m), rep.to_text())
    return run
