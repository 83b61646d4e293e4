"""
Does learning the decoder help?
===============================

One score network is pretrained, then fine-tuned three ways from the same
weights.  ``full`` learns the decoder step sizes too, ``frozen`` keeps them
at their defaults, ``bce`` never backpropagates through the unroll.

Takes roughly 40 seconds per seed.
"""

import sys

from unrollfold.experiments import ablation_run

seeds = [int(a) for a in sys.argv[1:]] or [0]
for seed in seeds:
    run = ablation_run(seed)
    cells = "  ".join(f"{arm}={run.f1(arm):.3f}" for arm in run.arms)
    print(f"seed {seed}: {run.n_train} train / {run.n_valid} valid  {cells}")

# the learned decoder parameters of the last full arm
import json

phi = json.loads(run.arms["full"].checkpoint)["pp"]
print("learned decoder parameters:", {k: round(v, 4) for k, v in phi.items()})

# summary part of the held-out report (per-record rows omitted)
report = run.arms["full"].report
print(report[report.index("\nmean"):])
