"""Neural ensemble search: ensembles with varying base-learner architectures.

Pool building by random search or regularized evolution, greedy forward
ensemble selection, uncertainty metrics (NLL / error / ECE / oracle loss
/ predictive disagreement), a desk-scale cell-network trainer, and a
persistent prediction store with a planted synthetic benchmark.
"""

from .metrics import (
    EvalReport,
    PredictionMatrix,
    avg_base_learner_nll,
    classification_error,
    ece,
    ensemble_average,
    evaluate_ensemble,
    nll,
    oracle_nll,
    predictive_disagreement,
    proposition1_check,
)
from .selection import (
    EnsembleSelection,
    bma_reweight,
    exhaustive_select,
    forward_select,
    forward_select_diverse,
    quick_and_greedy,
    stacking_select,
    top_m,
)
from .search import (
    SearchBudget,
    SearchResult,
    StoreSpace,
    TabularEvaluator,
    ToyEvaluator,
    deep_ens_best_arch,
    deep_ens_fixed,
    deep_ens_plus_es,
    deep_ens_rs,
    nes_re,
    nes_rs,
)
from .space import Architecture, CellSpaceSpec, MlpCellSpace, TabularCellSpace
from .store import PredictionStore, StoreKey, export_tabular, import_tabular
from .synthetic import SyntheticModel, SyntheticSpec, generate_synthetic_benchmark
from .toy import (
    AnchoredConfig,
    BaseLearner,
    CellNetwork,
    ToyDataset,
    TrainConfig,
    corrupt,
    make_shifted_splits,
    make_toy_task,
    train,
)

__version__ = "0.1.0"
