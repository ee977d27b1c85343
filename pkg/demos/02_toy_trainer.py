"""Training tiny DAG-structured MLPs sampled from the cell space.

Samples a few architectures, trains each with SGD + momentum on a
Gaussian-mixture task, and shows how validation NLL degrades as the
inputs are corrupted at increasing severity.

Run: python3 demos/02_toy_trainer.py
"""

import numpy as np

from nes.metrics import nll
from nes.space import CellSpaceSpec, MlpCellSpace
from nes.toy import TrainConfig, make_shifted_splits, make_toy_task, train

spec = CellSpaceSpec(num_intermediate_nodes=2, hidden_width=8, macro_depth=2)
space = MlpCellSpace(spec)
rng = np.random.default_rng(0)

train_ds, val_ds, test_ds = make_toy_task(
    0, n_train=512, n_val=256, n_test=256, num_classes=4, num_features=8)
eval_sets = make_shifted_splits(val_ds, test_ds, seed=0)
config = TrainConfig(epochs=8, batch_size=64, learning_rate=0.05)

learners = []
for k in range(3):
    arch = space.sample(rng)
    learner = train(arch, spec, train_ds, eval_sets, config, seed=k)
    learners.append(learner)
    print(f"learner {k}: {arch.key()}")
    print("  train loss %.3f -> %.3f" %
          (learner.train_losses[0], learner.train_losses[-1]))

print("\nvalidation NLL by corruption severity (per learner):")
print("severity " + "  ".join(f"L{k}" for k in range(len(learners))))
for sev in range(6):
    y = eval_sets[("val", sev)].labels
    row = [nll(l.preds[("val", sev)], y) for l in learners]
    print(f"   {sev}     " + "  ".join(f"{v:.3f}" for v in row))
