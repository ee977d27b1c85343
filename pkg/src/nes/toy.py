"""Desk-scale realization of the cell search space: tiny DAG-structured
MLPs trained with SGD on synthetic Gaussian-mixture classification tasks.

The network mirrors the cell semantics of the search space: each
intermediate node sums the outputs of its two operation-labeled edges,
the cell output is a learned linear merge of the concatenated
intermediate nodes, and cells are stacked ``macro_depth`` times behind a
learned input projection. Everything is float64 numpy with hand-written
backprop so gradients can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import PredictionMatrix
from .space import Architecture, CellSpaceSpec, MlpCellSpace

VALIDATION_CORRUPTIONS = ("gaussian-noise", "feature-dropout", "smooth-warp")
TEST_CORRUPTIONS = ("multiplicative-noise", "block-permutation", "heavy-tail-noise")

LINEAR_OPS = frozenset({"linear-relu", "linear-tanh", "linear-no-activation"})


@dataclass(frozen=True)
class AnchoredConfig:
    """Quadratic pull toward a fresh initialization sample."""

    strength: float = 0.4

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("anchoring strength must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.05
    momentum: float = 0.9
    l2: float = 1e-4
    anchored: AnchoredConfig | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("bad learning_rate/momentum")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


@dataclass(frozen=True)
class ToyDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str  # train | val | test
    severity: int = 0
    corruption_family: str | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be N x D with N matching labels")
        if (self.severity == 0) != (self.corruption_family is None):
            raise ValueError("severity 0 iff no corruption family")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def num_points(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass
class BaseLearner:
    """One trained network: architecture + seed + its prediction matrices."""

    arch: Architecture
    seed: int
    preds: dict = field(default_factory=dict)  # (split, severity) -> PredictionMatrix
    train_losses: list = field(default_factory=list)

    @property
    def arch_id(self) -> str:
        return self.arch.key()


def make_toy_task(task_seed: int, n_train: int = 2048, n_val: int = 512,
                  n_test: int = 2048, num_classes: int = 10, num_features: int = 16,
                  class_sep: float = 2.0):
    """Gaussian-mixture classification task, deterministic per seed.

    Returns (train, val, test) ToyDatasets. ``class_sep`` scales the
    distance between class means relative to the unit within-class noise;
    large values make the task linearly separable.
    """
    if num_classes < 2 or num_features < 2:
        raise ValueError("need C >= 2 and D >= 2")
    rng = np.random.default_rng(task_seed)
    means = rng.normal(size=(num_classes, num_features))
    means *= class_sep / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n, split):
        y = rng.integers(num_classes, size=n)
        x = means[y] + rng.normal(size=(n, num_features))
        return ToyDataset(x, y, split)

    return draw(n_train, "train"), draw(n_val, "val"), draw(n_test, "test")


def _severity_scale(severity: int) -> float:
    return severity / 5.0


def corrupt(dataset: ToyDataset, family: str, severity: int,
            rng: np.random.Generator) -> ToyDataset:
    """Apply one randomly chosen corruption operator per point.

    The validation and test operator families are disjoint; operator
    magnitude grows monotonically with severity 1..5.
    """
    if dataset.severity != 0:
        raise ValueError("dataset is already corrupted")
    if severity not in range(1, 6):
        raise ValueError("severity must be in 1..5")
    if family == "validation":
        ops = VALIDATION_CORRUPTIONS
    elif family == "test":
        ops = TEST_CORRUPTIONS
    else:
        raise ValueError(f"unknown corruption family {family!r}")

    s = _severity_scale(severity)
    x = dataset.features.copy()
    n, d = x.shape
    which = rng.integers(len(ops), size=n)
    for i in range(n):
        op = ops[which[i]]
        if op == "gaussian-noise":
            x[i] += 1.2 * s * rng.normal(size=d)
        elif op == "feature-dropout":
            mask = rng.random(d) < 0.6 * s
            x[i][mask] = 0.0
        elif op == "smooth-warp":
            x[i] += 1.5 * s * np.sin(x[i])
        elif op == "multiplicative-noise":
            x[i] *= 1.0 + 1.2 * s * rng.normal(size=d)
        elif op == "block-permutation":
            # shuffle within contiguous blocks; more blocks hit at higher severity
            block = max(2, d // 4)
            for start in range(0, d, block):
                if rng.random() < s:
                    stop = min(start + block, d)
                    x[i, start:stop] = x[i, start:stop][rng.permutation(stop - start)]
        elif op == "heavy-tail-noise":
            x[i] += 0.9 * s * rng.standard_t(df=2, size=d)
    return ToyDataset(x, dataset.labels, dataset.split,
                      severity=severity, corruption_family=family)


def make_shifted_splits(val: ToyDataset, test: ToyDataset, seed: int) -> dict:
    """All (split, severity) evaluation datasets for one task.

    Validation shifts use the validation corruption family, test shifts
    the (disjoint) test family, per the shift protocol.
    """
    rng = np.random.default_rng(seed)
    out = {("val", 0): val, ("test", 0): test}
    for sev in range(1, 6):
        out[("val", sev)] = corrupt(val, "validation", sev, rng)
        out[("test", sev)] = corrupt(test, "test", sev, rng)
    return out


class CellNetwork:
    """Stacked-cell MLP defined by an architecture genome.

    Parameters live in a name -> array dict. Weight matrices are drawn
    from N(0, 1/fan_in); biases start at zero (and are therefore exempt
    from anchoring).
    """

    def __init__(self, spec: CellSpaceSpec, arch: Architecture,
                 num_features: int, num_classes: int):
        MlpCellSpace(spec, space_id=arch.space_id).validate(arch)
        self.spec = spec
        self.arch = arch
        self.num_features = num_features
        self.num_classes = num_classes
        self._param_shapes = self._build_shapes()

    def _build_shapes(self):
        h = self.spec.hidden_width
        n = self.spec.num_intermediate_nodes
        shapes = {"in.W": (self.num_features, h), "in.b": (h,)}
        for d in range(self.spec.macro_depth):
            for j, node in enumerate(self.arch.genome):
                for e, (_, op) in enumerate(node):
                    if op in LINEAR_OPS:
                        shapes[f"c{d}.n{j}.e{e}.W"] = (h, h)
                        shapes[f"c{d}.n{j}.e{e}.b"] = (h,)
            shapes[f"c{d}.merge.W"] = (n * h, h)
            shapes[f"c{d}.merge.b"] = (h,)
        shapes["out.W"] = (h, self.num_classes)
        shapes["out.b"] = (self.num_classes,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for name, shape in self._param_shapes.items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[0]
                params[name] = rng.normal(scale=np.sqrt(1.0 / fan_in), size=shape)
        return params

    def init_variances(self) -> dict:
        """Initialization variance per weight matrix (1/fan_in); biases excluded."""
        return {
            name: 1.0 / shape[0]
            for name, shape in self._param_shapes.items()
            if not name.endswith(".b")
        }

    # forward -------------------------------------------------------------

    def _edge_forward(self, params, prefix, op, v):
        if op == "identity":
            return v, None
        if op == "scale-half":
            return 0.5 * v, None
        z = v @ params[f"{prefix}.W"] + params[f"{prefix}.b"]
        if op == "linear-relu":
            return np.maximum(z, 0.0), z
        if op == "linear-tanh":
            return np.tanh(z), z
        if op == "linear-no-activation":
            return z, z
        raise ValueError(f"unknown op {op!r}")

    def forward(self, params: dict, x: np.ndarray, want_cache: bool = False):
        cache = {"node_values": []}
        proj = x @ params["in.W"] + params["in.b"]
        prev_prev, prev = proj, proj
        for d in range(self.spec.macro_depth):
            inputs = [prev_prev, prev]  # cell node values, indices 0 and 1
            nodes = list(inputs)
            edge_pre = {}
            for j, node in enumerate(self.arch.genome):
                acc = 0.0
                for e, (src, op) in enumerate(node):
                    out, z = self._edge_forward(params, f"c{d}.n{j}.e{e}", op, nodes[src])
                    edge_pre[(j, e)] = z
                    acc = acc + out
                nodes.append(acc)
            concat = np.concatenate(nodes[2:], axis=1)
            cell_out = concat @ params[f"c{d}.merge.W"] + params[f"c{d}.merge.b"]
            cache["node_values"].append((nodes, edge_pre, concat))
            prev_prev, prev = prev, cell_out
        logits = prev @ params["out.W"] + params["out.b"]
        if want_cache:
            cache["proj_input"] = x
            cache["final_hidden"] = prev
            return logits, cache
        return logits

    def predict_probs(self, params: dict, x: np.ndarray) -> PredictionMatrix:
        logits = self.forward(params, x)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return PredictionMatrix(e / e.sum(axis=1, keepdims=True))

    # loss and gradient ---------------------------------------------------

    def loss_and_grad(self, params: dict, x: np.ndarray, y: np.ndarray,
                      config: TrainConfig, anchors: dict | None = None,
                      n_total: int | None = None):
        """Mean cross-entropy plus weight decay and optional anchoring.

        The anchored penalty is (lambda / N) * sum_i (theta_i - anchor_i)^2
        / (2 sigma_i^2) over weight matrices only; ``n_total`` is the
        training-set size N (defaults to the batch size).
        """
        n = x.shape[0]
        n_anchor = n_total if n_total is not None else n
        logits, cache = self.forward(params, x, want_cache=True)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        loss = float(-log_probs[np.arange(n), y].mean())

        probs = np.exp(log_probs)
        d_logits = probs.copy()
        d_logits[np.arange(n), y] -= 1.0
        d_logits /= n

        grads = {name: np.zeros_like(p) for name, p in params.items()}
        grads["out.W"] = cache["final_hidden"].T @ d_logits
        grads["out.b"] = d_logits.sum(axis=0)
        d_prev = d_logits @ params["out.W"].T  # grad wrt last cell output
        d_prev_prev = np.zeros_like(d_prev)

        for d in reversed(range(self.spec.macro_depth)):
            nodes, edge_pre, concat = cache["node_values"][d]
            h = self.spec.hidden_width
            grads[f"c{d}.merge.W"] = concat.T @ d_prev
            grads[f"c{d}.merge.b"] = d_prev.sum(axis=0)
            d_concat = d_prev @ params[f"c{d}.merge.W"].T
            d_nodes = [np.zeros_like(nodes[0]) for _ in nodes]
            for j in range(len(self.arch.genome)):
                d_nodes[j + 2] += d_concat[:, j * h:(j + 1) * h]
            # the previous cell's output also feeds the next cell's node 0
            d_nodes[1] += d_prev_prev
            for j in reversed(range(len(self.arch.genome))):
                d_node = d_nodes[j + 2]
                for e, (src, op) in enumerate(self.arch.genome[j]):
                    prefix = f"c{d}.n{j}.e{e}"
                    if op == "identity":
                        d_nodes[src] += d_node
                    elif op == "scale-half":
                        d_nodes[src] += 0.5 * d_node
                    else:
                        z = edge_pre[(j, e)]
                        if op == "linear-relu":
                            dz = d_node * (z > 0)
                        elif op == "linear-tanh":
                            dz = d_node * (1.0 - np.tanh(z) ** 2)
                        else:
                            dz = d_node
                        grads[f"{prefix}.W"] += nodes[src].T @ dz
                        grads[f"{prefix}.b"] += dz.sum(axis=0)
                        d_nodes[src] += dz @ params[f"{prefix}.W"].T
            d_prev = d_nodes[1]
            d_prev_prev = d_nodes[0]

        d_proj = d_prev + d_prev_prev
        grads["in.W"] = cache["proj_input"].T @ d_proj
        grads["in.b"] = d_proj.sum(axis=0)

        if config.l2 > 0:
            for name, p in params.items():
                if not name.endswith(".b"):
                    loss += 0.5 * config.l2 * float((p ** 2).sum())
                    grads[name] += config.l2 * p
        if anchors is not None and config.anchored is not None:
            lam = config.anchored.strength
            variances = self.init_variances()
            for name, var in variances.items():
                gamma = 1.0 / (2.0 * var)
                diff = params[name] - anchors[name]
                loss += (lam / n_anchor) * gamma * float((diff ** 2).sum())
                grads[name] += (lam / n_anchor) * 2.0 * gamma * diff
        return loss, grads

    # flat views for finite-difference checks -----------------------------

    def flatten(self, params: dict) -> np.ndarray:
        return np.concatenate([params[n].ravel() for n in sorted(self._param_shapes)])

    def unflatten(self, vec: np.ndarray) -> dict:
        out, k = {}, 0
        for name in sorted(self._param_shapes):
            shape = self._param_shapes[name]
            size = int(np.prod(shape))
            out[name] = vec[k:k + size].reshape(shape).copy()
            k += size
        return out


def train(arch: Architecture, spec: CellSpaceSpec, train_ds: ToyDataset,
          eval_sets: dict, config: TrainConfig, seed: int) -> BaseLearner:
    """SGD-with-momentum training of one base learner.

    ``eval_sets`` maps (split, severity) to the dataset on which a
    prediction matrix is wanted. Training data must be uncorrupted.
    Anchored mode draws a fresh anchor sample (independent of the
    training initialization) and turns off weight decay.
    """
    if train_ds.split != "train" or train_ds.severity != 0:
        raise ValueError("training requires the uncorrupted train split")
    rng = np.random.default_rng(seed)
    num_classes = int(train_ds.labels.max()) + 1
    for ds in eval_sets.values():
        num_classes = max(num_classes, int(ds.labels.max()) + 1)
    net = CellNetwork(spec, arch, train_ds.num_features, num_classes)
    params = net.init_params(rng)
    anchors = None
    effective = config
    if config.anchored is not None:
        anchors = net.init_params(rng)  # fresh sample, distinct from init
        effective = TrainConfig(config.epochs, config.batch_size,
                                config.learning_rate, config.momentum,
                                l2=0.0, anchored=config.anchored)

    x, y = train_ds.features, train_ds.labels
    n = len(y)
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    losses = []
    for _ in range(effective.epochs):
        order = rng.permutation(n)
        epoch_loss, batches = 0.0, 0
        for start in range(0, n, effective.batch_size):
            idx = order[start:start + effective.batch_size]
            loss, grads = net.loss_and_grad(params, x[idx], y[idx], effective,
                                            anchors=anchors, n_total=n)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged (loss={loss}) with config {config}"
                )
            for name in params:
                velocity[name] = effective.momentum * velocity[name] - \
                    effective.learning_rate * grads[name]
                params[name] += velocity[name]
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / batches)

    preds = {key: net.predict_probs(params, ds.features)
             for key, ds in eval_sets.items()}
    return BaseLearner(arch=arch, seed=seed, preds=preds, train_losses=losses)
