"""Pool-building strategies and baselines.

Two pool builders implement the two-step scheme (build a pool of
independently trained networks, then greedily select the ensemble):
random search (``nes_rs``) and regularized evolution (``nes_re``). The
deep-ensemble baselines reuse the same evaluator contract.

An evaluator turns (architecture, seed) into prediction matrices for
every (split, severity) it supports; it is a pure job, so pool building
can dispatch evaluations to a worker pool in synchronous waves (merged
by job index, hence deterministic) or, for evolution, an asynchronous
master-worker mode that is documented as nondeterministic.
"""

from __future__ import annotations

import collections
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .metrics import PredictionMatrix
from .selection import EnsembleSelection, forward_select, individual_nlls
from .space import Architecture
from .store import PredictionStore, StoreKey
from .synthetic import SyntheticModel
from .toy import CellSpaceSpec, ToyDataset, TrainConfig
from .toy import train as toy_train

SHIFT_SEVERITY = 5  # severity used when sampling the shifted validation set


@dataclass(frozen=True)
class SearchBudget:
    K: int              # total networks trained
    M: int              # ensemble size
    P: int = 50         # population size (NES-RE)
    m: int = 10         # parent-candidate count (NES-RE)
    seed: int = 0

    def __post_init__(self):
        if self.K < self.M:
            raise ValueError("K must be >= M")
        if self.P > self.K:
            raise ValueError("P must be <= K")
        if self.m > self.P:
            raise ValueError("m must be <= P")
        if min(self.K, self.M, self.P, self.m) < 1:
            raise ValueError("budget fields must be positive")


@dataclass
class TrainedMember:
    """One pool entry: a trained network and its prediction matrices."""

    member_id: int
    arch: Architecture
    seed: int
    preds: dict  # (split, severity) -> PredictionMatrix


@dataclass
class SearchResult:
    selection: EnsembleSelection
    pool: dict  # member_id -> TrainedMember

    def members(self):
        return [self.pool[i] for i in self.selection.member_ids]

    def member_preds(self, split: str, severity: int):
        return [self.pool[i].preds[(split, severity)]
                for i in self.selection.member_ids]


class EvaluatorError(RuntimeError):
    def __init__(self, arch: Architecture, cause: Exception):
        super().__init__(f"evaluation failed for genome {arch.key()}: {cause}")
        self.arch = arch
        self.cause = cause


class TabularEvaluator:
    """O(1) lookup evaluator over a synthetic model or a materialized store.

    With a model, any genome can be queried; with only a store, queries
    are restricted to stored architectures and seeds cycle modulo the
    stored seed count.
    """

    def __init__(self, model: SyntheticModel | None = None,
                 store: PredictionStore | None = None,
                 splits_severities=None):
        if model is None and store is None:
            raise ValueError("need a model or a store")
        self.model = model
        self.store = store
        if splits_severities is None:
            splits_severities = [(s, v) for s in ("val", "test") for v in range(6)]
        self.splits_severities = list(splits_severities)

    def labels(self, split: str, severity: int = 0) -> np.ndarray:
        if self.model is not None:
            return self.model.labels(split, severity)
        return self.store.labels(split, severity)

    def evaluate(self, arch: Architecture, seed: int) -> dict:
        try:
            if self.model is not None:
                return {key: self.model.predict(arch, seed, *key)
                        for key in self.splits_severities}
            stored_seeds = self.store.seeds_for(arch.key())
            if not stored_seeds:
                raise KeyError(f"architecture {arch.key()} not in store")
            actual = stored_seeds[seed % len(stored_seeds)]
            return {key: self.store.get(StoreKey(arch.key(), actual, *key))
                    for key in self.splits_severities}
        except Exception as exc:  # pool building aborts with the offending genome
            raise EvaluatorError(arch, exc)


class StoreSpace:
    """Architecture space restricted to the genomes held in a store.

    Sampling is uniform over the stored genomes; mutation moves to a
    uniformly chosen stored genome at the smallest positive edit
    distance from the parent, so evolution still takes local steps.
    """

    def __init__(self, store: PredictionStore, inner=None):
        from .space import TabularCellSpace

        self.inner = inner or TabularCellSpace(space_id=store.space_id)
        self.space_id = store.space_id
        self.archs = [Architecture.from_key(k) for k in store.arch_ids()]
        if not self.archs:
            raise ValueError("store holds no architectures")

    def sample(self, rng: np.random.Generator) -> Architecture:
        return self.archs[rng.integers(len(self.archs))]

    def mutate(self, arch: Architecture, rng: np.random.Generator) -> Architecture:
        dists = [self.inner.edit_distance(arch, a) for a in self.archs]
        positive = [d for d in dists if d > 0]
        if not positive:
            return arch
        dmin = min(positive)
        cands = [a for a, d in zip(self.archs, dists) if d == dmin]
        return cands[rng.integers(len(cands))]


class ToyEvaluator:
    """Trains the tiny cell network on a toy task for each evaluation."""

    def __init__(self, spec: CellSpaceSpec, train_ds: ToyDataset,
                 eval_sets: dict, config: TrainConfig,
                 store: PredictionStore | None = None):
        self.spec = spec
        self.train_ds = train_ds
        self.eval_sets = eval_sets
        self.config = config
        self.store = store  # optional cache: crash-resumable pools

    def labels(self, split: str, severity: int = 0) -> np.ndarray:
        return self.eval_sets[(split, severity)].labels

    def _cached(self, arch: Architecture, seed: int):
        if self.store is None:
            return None
        keys = {k: StoreKey(arch.key(), seed, *k) for k in self.eval_sets}
        if all(sk in self.store for sk in keys.values()):
            return {k: self.store.get(sk) for k, sk in keys.items()}
        return None

    def evaluate(self, arch: Architecture, seed: int) -> dict:
        cached = self._cached(arch, seed)
        if cached is not None:
            return cached
        try:
            learner = toy_train(arch, self.spec, self.train_ds, self.eval_sets,
                                self.config, seed)
        except Exception as exc:
            raise EvaluatorError(arch, exc)
        if self.store is not None:
            self.store.put_many(
                (StoreKey(arch.key(), seed, *k), m)
                for k, m in learner.preds.items()
                if StoreKey(arch.key(), seed, *k) not in self.store
            )
        return learner.preds


def _job_seed(budget_seed: int, job_index: int) -> int:
    return int(np.random.SeedSequence([budget_seed, job_index]).generate_state(1)[0])


def _eval_job(args):
    evaluator, arch, seed = args
    return evaluator.evaluate(arch, seed)


def _run_wave(evaluator, jobs, n_workers: int):
    """Evaluate (arch, seed) jobs, merged by job index."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [evaluator.evaluate(arch, seed) for arch, seed in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_eval_job, [(evaluator, a, s) for a, s in jobs]))


def _pool_val_preds(pool: dict, severity: int) -> dict:
    return {i: m.preds[("val", severity)] for i, m in pool.items()}


def nes_rs(space, evaluator, budget: SearchBudget, severity: int = 0,
           n_workers: int = 1) -> SearchResult:
    """Random-search pool building plus greedy selection.

    Samples K architectures uniformly i.i.d. (with replacement), trains
    them, then forward-selects M members on the validation split at the
    requested severity.
    """
    arch_rng = np.random.default_rng([budget.seed, 101])
    jobs = [(space.sample(arch_rng), _job_seed(budget.seed, i))
            for i in range(budget.K)]
    results = _run_wave(evaluator, jobs, n_workers)
    pool = {i: TrainedMember(i, arch, seed, preds)
            for i, ((arch, seed), preds) in enumerate(zip(jobs, results))}
    y_val = evaluator.labels("val", severity)
    selection = forward_select(_pool_val_preds(pool, severity), y_val, budget.M)
    return SearchResult(selection, pool)


def nes_re(space, evaluator, budget: SearchBudget, severity: int = 0,
           severity_mix: str = "clean", n_workers: int = 1,
           async_evolution: bool = False) -> SearchResult:
    """Regularized-evolution pool building plus greedy selection.

    Evolves a FIFO population of size P: each iteration forward-selects m
    parent candidates from the population on the validation split (clean,
    shifted, or sampled uniformly between the two when
    ``severity_mix="alternating"``), samples the parent uniformly among
    them, trains one mutated child, and evicts the oldest member. The
    history of all K trained networks is the pool; the final ensemble is
    forward-selected from it at the requested severity.
    """
    if severity_mix not in ("clean", "shifted", "alternating"):
        raise ValueError(f"unknown severity_mix {severity_mix!r}")
    arch_rng = np.random.default_rng([budget.seed, 101])
    parent_rng = np.random.default_rng([budget.seed, 202])

    init_jobs = [(space.sample(arch_rng), _job_seed(budget.seed, i))
                 for i in range(budget.P)]
    results = _run_wave(evaluator, init_jobs, n_workers)
    pool = {i: TrainedMember(i, arch, seed, preds)
            for i, ((arch, seed), preds) in enumerate(zip(init_jobs, results))}
    population = collections.deque(range(budget.P))

    def iteration_severity() -> int:
        if severity_mix == "clean":
            return 0
        if severity_mix == "shifted":
            return SHIFT_SEVERITY
        return SHIFT_SEVERITY if parent_rng.random() < 0.5 else 0

    def propose_child():
        sev = iteration_severity()
        pop_preds = {i: pool[i].preds[("val", sev)] for i in population}
        y = evaluator.labels("val", sev)
        m_eff = min(budget.m, len(population))
        candidates = forward_select(pop_preds, y, m_eff).member_ids
        parent_id = candidates[parent_rng.integers(len(candidates))]
        return space.mutate(pool[parent_id].arch, parent_rng)

    def integrate(member_id, arch, seed, preds):
        pool[member_id] = TrainedMember(member_id, arch, seed, preds)
        population.append(member_id)
        population.popleft()  # strictly FIFO eviction

    next_id = budget.P
    if async_evolution and n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as workers:
            pending = {}
            while next_id < budget.K or pending:
                while next_id < budget.K and len(pending) < n_workers:
                    child = propose_child()
                    seed = _job_seed(budget.seed, next_id)
                    fut = workers.submit(_eval_job, (evaluator, child, seed))
                    pending[fut] = (next_id, child, seed)
                    next_id += 1
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    member_id, child, seed = pending.pop(fut)
                    integrate(member_id, child, seed, fut.result())
    else:
        while next_id < budget.K:
            child = propose_child()
            seed = _job_seed(budget.seed, next_id)
            preds = evaluator.evaluate(child, seed)
            integrate(next_id, child, seed, preds)
            next_id += 1

    y_val = evaluator.labels("val", severity)
    selection = forward_select(_pool_val_preds(pool, severity), y_val, budget.M)
    return SearchResult(selection, pool)


# deep-ensemble baselines --------------------------------------------------

def deep_ens_fixed(arch: Architecture, evaluator, M: int, seed: int = 0,
                   n_workers: int = 1) -> SearchResult:
    """Deep ensemble: M seeds of one fixed architecture, no selection."""
    if M < 1:
        raise ValueError("M must be >= 1")
    jobs = [(arch, _job_seed(seed, i)) for i in range(M)]
    results = _run_wave(evaluator, jobs, n_workers)
    pool = {i: TrainedMember(i, arch, s, preds)
            for i, ((_, s), preds) in enumerate(zip(jobs, results))}
    return SearchResult(EnsembleSelection(tuple(range(M))), pool)


def deep_ens_rs(space, evaluator, K: int, M: int, seed: int = 0,
                severity: int = 0, n_workers: int = 1) -> SearchResult:
    """Random search for one architecture, then a fresh deep ensemble of it."""
    budget = SearchBudget(K=K, M=1, P=min(50, K), m=1, seed=seed)
    arch_rng = np.random.default_rng([budget.seed, 101])
    jobs = [(space.sample(arch_rng), _job_seed(seed, i)) for i in range(K)]
    results = _run_wave(evaluator, jobs, n_workers)
    pool = {i: TrainedMember(i, arch, s, preds)
            for i, ((arch, s), preds) in enumerate(zip(jobs, results))}
    y_val = evaluator.labels("val", severity)
    nlls = individual_nlls(_pool_val_preds(pool, severity), y_val)
    winner = min(nlls, key=lambda i: (nlls[i], i))
    # re-train M fresh seeds of the winner rather than reusing the pool seed
    return deep_ens_fixed(pool[winner].arch, evaluator, M,
                          seed=seed + 7919, n_workers=n_workers)


def deep_ens_plus_es(arch: Architecture, evaluator, K: int, M: int,
                     seed: int = 0, severity: int = 0,
                     n_workers: int = 1) -> SearchResult:
    """K seeds of one fixed architecture with forward selection over them."""
    if K < M:
        raise ValueError("K must be >= M")
    jobs = [(arch, _job_seed(seed, i)) for i in range(K)]
    results = _run_wave(evaluator, jobs, n_workers)
    pool = {i: TrainedMember(i, arch, s, preds)
            for i, ((_, s), preds) in enumerate(zip(jobs, results))}
    y_val = evaluator.labels("val", severity)
    selection = forward_select(_pool_val_preds(pool, severity), y_val, M)
    return SearchResult(selection, pool)


def deep_ens_best_arch(store: PredictionStore, M: int,
                       severity: int = 0) -> SearchResult:
    """Deep ensemble of the best stored architecture by seed-0 validation NLL."""
    y_val = store.labels("val", severity)
    best_arch, best_nll = None, float("inf")
    for arch_id in store.arch_ids():
        seeds = store.seeds_for(arch_id, "val", severity)
        if not seeds:
            raise ValueError(f"no validation entries for {arch_id}")
        mat = store.get(StoreKey(arch_id, seeds[0], "val", severity))
        val = individual_nlls({0: mat}, y_val)[0]
        if val < best_nll:
            best_arch, best_nll = arch_id, val
    seeds = store.seeds_for(best_arch, "val", severity)
    if len(seeds) < M:
        raise ValueError(f"{best_arch} has {len(seeds)} seeds, need {M}")
    arch = Architecture.from_key(best_arch)
    pool = {}
    for i, s in enumerate(seeds[:M]):
        preds = {}
        for key in store.keys():
            if key.arch_id == best_arch and key.seed == s:
                preds[(key.split, key.severity)] = store.get(key)
        pool[i] = TrainedMember(i, arch, s, preds)
    return SearchResult(EnsembleSelection(tuple(range(M))), pool)


def family_share(result: SearchResult, model: SyntheticModel,
                 family: int) -> float:
    """Fraction of a pool's members whose architecture falls in a family."""
    fams = [model.family_of(m.arch) for m in result.pool.values()]
    return float(np.mean([f == family for f in fams]))
