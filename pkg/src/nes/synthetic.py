"""Synthetic tabular benchmark with planted architecture families.

Predictions for every genome of a small complete-DAG cell space are
defined procedurally: the genome's family (nearest of G planted center
genomes by edit distance) fixes a shared logit offset from the true
logits, an architecture-level perturbation (scale ``sigma_arch``) sits
on top, and each training seed adds a smaller perturbation (scale
``sigma_seed``). Family offsets dominate, so initializations of one
architecture cluster together while cross-family ensembles cancel
errors -- the structure that makes architectural variation pay off.

Dataset shift acts in logit space: severity s adds s/5 times a fixed
shift direction scaled by a per-architecture sensitivity, with disjoint
directions for the validation and test shift families but shared
sensitivities, so selecting on shifted validation transfers to shifted
test.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .metrics import PredictionMatrix
from .space import Architecture, TabularCellSpace
from .store import PredictionStore, StoreKey

SEVERITIES = (0, 1, 2, 3, 4, 5)


def _key_rng(gen_seed: int, *parts) -> np.random.Generator:
    h = hashlib.sha256(("|".join(str(p) for p in parts)).encode()).digest()
    words = [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([gen_seed] + words)


@dataclass(frozen=True)
class SyntheticSpec:
    gen_seed: int = 0
    num_families: int = 5
    n_val: int = 512
    n_test: int = 1024
    num_classes: int = 10
    sigma_arch: float = 0.35      # architecture-level logit perturbation
    sigma_seed: float = 0.08      # seed-level logit perturbation
    dist_penalty: float = 0.45    # perturbation growth per edit step from the family center
    true_scale: float = 1.6       # scale of the true logits
    offset_base: float = 0.9      # magnitude of the best family's offset
    offset_step: float = 0.35     # per-family quality degradation
    shift_scale: float = 2.5      # severity-5 logit shift magnitude
    min_center_distance: int = 3

    def __post_init__(self):
        if self.num_families < 1:
            raise ValueError("need at least one family")
        if not (0 <= self.sigma_seed < self.sigma_arch):
            raise ValueError("require 0 <= sigma_seed < sigma_arch")
        if self.sigma_arch >= self.offset_base:
            raise ValueError("sigma_arch must stay below the family separation")
        if self.num_classes < 2:
            raise ValueError("need C >= 2")


class SyntheticModel:
    """Deterministic logit model over a TabularCellSpace."""

    def __init__(self, spec: SyntheticSpec = SyntheticSpec(),
                 space: TabularCellSpace | None = None):
        self.spec = spec
        self.space = space or TabularCellSpace()
        if spec.num_families > self.space.size():
            raise ValueError("more families than architectures")
        rng = np.random.default_rng([spec.gen_seed, 0xC0FFEE])
        self._splits = {"val": spec.n_val, "test": spec.n_test}
        self._true = {s: spec.true_scale * rng.normal(size=(n, spec.num_classes))
                      for s, n in self._splits.items()}
        self._labels = {}
        for s, z in self._true.items():
            e = np.exp(z - z.max(axis=1, keepdims=True))
            p = e / e.sum(axis=1, keepdims=True)
            self._labels[s] = np.array(
                [rng.choice(spec.num_classes, p=row) for row in p], dtype=np.int64
            )
        self.centers = self._plant_centers(rng)
        # family offset directions; family g sits offset_base*(1+g*step) away
        self._offsets = {}
        for g in range(spec.num_families):
            mag = spec.offset_base * (1.0 + spec.offset_step * g)
            self._offsets[g] = {
                s: mag * self._unit(rng.normal(size=z.shape)) for s, z in self._true.items()
            }
        # disjoint shift directions per split family, shared sensitivities
        self._shift_dir = {s: self._unit(rng.normal(size=z.shape))
                           for s, z in self._true.items()}

    @staticmethod
    def _unit(m: np.ndarray) -> np.ndarray:
        return m / np.sqrt((m ** 2).mean())

    def _plant_centers(self, rng):
        centers = []
        tries = 0
        while len(centers) < self.spec.num_families:
            cand = self.space.sample(rng)
            if all(self.space.edit_distance(cand, c) >= self.spec.min_center_distance
                   for c in centers):
                centers.append(cand)
            tries += 1
            if tries > 10000:
                raise RuntimeError("could not plant well-separated family centers")
        return centers

    # queries -------------------------------------------------------------

    def family_of(self, arch: Architecture) -> int:
        dists = [self.space.edit_distance(arch, c) for c in self.centers]
        return int(np.argmin(dists))  # ties -> lowest family index

    def shift_sensitivity(self, arch: Architecture) -> float:
        rng = _key_rng(self.spec.gen_seed, "sens", arch.key())
        return float(rng.random())

    def labels(self, split: str, severity: int = 0) -> np.ndarray:
        return self._labels[split]

    def logits(self, arch: Architecture, seed: int, split: str,
               severity: int = 0) -> np.ndarray:
        if severity not in SEVERITIES:
            raise ValueError("severity must be in 0..5")
        fam = self.family_of(arch)
        z = self._true[split] + self._offsets[fam][split]
        # quality degrades smoothly away from the family center, so single
        # mutations move quality locally and evolution can hill-climb
        dist = self.space.edit_distance(arch, self.centers[fam])
        scale = self.spec.sigma_arch * (1.0 + self.spec.dist_penalty * dist)
        arch_rng = _key_rng(self.spec.gen_seed, "arch", arch.key(), split)
        z = z + scale * arch_rng.normal(size=z.shape)
        seed_rng = _key_rng(self.spec.gen_seed, "seed", arch.key(), seed, split)
        z = z + self.spec.sigma_seed * seed_rng.normal(size=z.shape)
        if severity > 0:
            gamma = self.shift_sensitivity(arch)
            z = z + (severity / 5.0) * self.spec.shift_scale * gamma * self._shift_dir[split]
        return z

    def predict(self, arch: Architecture, seed: int, split: str,
                severity: int = 0) -> PredictionMatrix:
        z = self.logits(arch, seed, split, severity)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return PredictionMatrix(e / e.sum(axis=1, keepdims=True))

    # materialization -----------------------------------------------------

    def sample_family_members(self, archs_per_family: int,
                              rng: np.random.Generator) -> list:
        """Distinct genomes per family, grown by mutation around each center."""
        chosen = []
        for g, center in enumerate(self.centers):
            members = {center.key(): center}
            frontier = [center]
            tries = 0
            while len(members) < archs_per_family:
                parent = frontier[rng.integers(len(frontier))]
                child = self.space.mutate(parent, rng)
                tries += 1
                if tries > 100000:
                    raise RuntimeError("family sampling stalled")
                if self.family_of(child) != g or child.key() in members:
                    continue
                members[child.key()] = child
                frontier.append(child)
            chosen.extend(members.values())
        return chosen


def generate_synthetic_benchmark(store_path: str, gen_seed: int = 0,
                                 num_families: int = 5,
                                 archs_per_family: int = 8,
                                 seeds_per_arch: int = 3,
                                 n_val: int = 512, n_test: int = 1024,
                                 num_classes: int = 10,
                                 sigma_arch: float = 0.35,
                                 sigma_seed: float = 0.08) -> PredictionStore:
    """Materialize a planted benchmark into a native prediction store."""
    spec = SyntheticSpec(gen_seed=gen_seed, num_families=num_families,
                         n_val=n_val, n_test=n_test, num_classes=num_classes,
                         sigma_arch=sigma_arch, sigma_seed=sigma_seed)
    model = SyntheticModel(spec)
    rng = np.random.default_rng([gen_seed, 0xBEEF])
    archs = model.sample_family_members(archs_per_family, rng)
    store = PredictionStore.create(store_path, model.space.space_id)
    for split in ("val", "test"):
        for sev in SEVERITIES:
            store.set_labels(split, sev, model.labels(split, sev))
    items = []
    for arch in archs:
        for seed in range(seeds_per_arch):
            for split in ("val", "test"):
                for sev in SEVERITIES:
                    items.append((
                        StoreKey(arch.key(), seed, split, sev),
                        model.predict(arch, seed, split, sev),
                    ))
    store.put_many(items)
    return store
