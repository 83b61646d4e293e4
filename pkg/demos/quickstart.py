"""
Predicting a structure
======================

Train a small model on synthetic hairpins, then fold a sequence it has
never seen, once with the unrolled decoder and once with the convergent
solver.
"""

import numpy as np

from unrollfold import RnaSequence, validate_structure
from unrollfold.core import matrix_to_pairs
from unrollfold.evaluation import prf
from unrollfold.ioformats import to_dot_bracket
from unrollfold.synth import hairpin, hairpin_dataset
from unrollfold.train import TrainConfig, finetune, pretrain

# a toy training set: 120 hairpins and double hairpins with known pairs
records = hairpin_dataset(120, seed=1)
print(len(records), "training structures, e.g.")
print(records[0].seq.bases)
print(to_dot_bracket(records[0]))

# pretraining fits the pair scores alone, fine-tuning goes through the decoder
cfg = TrainConfig(epochs_pretrain=30, epochs_finetune=5, seed=1)
model, _ = pretrain(cfg, records)
model, history = finetune(cfg, records, model)
print("last fine-tune epoch:", history[-1])

# a fresh hairpin the model has not seen
target = hairpin(np.random.default_rng(2024))
seq = RnaSequence(target.seq.bases, "unseen")

for classic in (False, True):
    A = model.predict(seq, classic=classic)
    pairs = matrix_to_pairs(A)
    assert not validate_structure(A, seq)
    label = "convergent solver" if classic else "unrolled decoder "
    print(label, to_dot_bracket(pairs, len(seq.bases)), f"F1 {prf(pairs, target.pairs)[2]:.2f}")
print("truth            ", to_dot_bracket(target))

# a toy model trained for seconds: expect valid but rough structures
