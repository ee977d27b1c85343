"""Random search vs regularized evolution on the planted benchmark.

The synthetic model plants architecture families with different quality
and style; ensembles drawing from several families cancel errors.
This demo runs both pool builders at a small budget and compares them
against a deep ensemble of the best single architecture.

Run: python3 demos/03_search_on_planted_benchmark.py
"""

import tempfile

import numpy as np

from nes import metrics
from nes.search import (
    SearchBudget,
    TabularEvaluator,
    deep_ens_best_arch,
    family_share,
    nes_re,
    nes_rs,
)
from nes.synthetic import SyntheticModel, SyntheticSpec, generate_synthetic_benchmark

model = SyntheticModel(SyntheticSpec(gen_seed=0))
evaluator = TabularEvaluator(model=model)
y_test = model.labels("test")

with tempfile.TemporaryDirectory() as tmp:
    store = generate_synthetic_benchmark(tmp + "/store", gen_seed=0)
    deepens = deep_ens_best_arch(store, M=3)
de_rep = metrics.evaluate_ensemble(
    [m.preds[("test", 0)] for m in deepens.pool.values()], y_test)

budget = SearchBudget(K=100, M=3, seed=0)
rs = nes_rs(model.space, evaluator, budget)
re = nes_re(model.space, evaluator, budget)

print(f"{'method':16s} {'test nll':>9s} {'error':>7s} {'ece':>7s} "
      f"{'oracle':>7s} {'avg mem':>8s}")
for name, result in (("deepens-best", deepens), ("nes-rs", rs), ("nes-re", re)):
    members = [result.pool[i].preds[("test", 0)]
               for i in result.selection.member_ids]
    rep = metrics.evaluate_ensemble(members, y_test)
    print(f"{name:16s} {rep.nll:9.4f} {rep.error:7.3f} {rep.ece:7.3f} "
          f"{rep.oracle_nll:7.4f} {rep.avg_bsl_nll:8.4f}")

print("\npool share in the best family (family 0):")
print("  random search:  %.2f" % family_share(rs, model, 0))
print("  evolution:      %.2f" % family_share(re, model, 0))
print("\nselected families, nes-rs:",
      sorted(model.family_of(m.arch) for m in rs.members()))
print("selected families, nes-re:",
      sorted(model.family_of(m.arch) for m in re.members()))
