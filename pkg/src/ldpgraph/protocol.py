"""Server-side pipeline: K-step calibration, GNN training, evaluation.

Calibration is the linear mean-with-self aggregator
    h^(k)_v = (h^(k-1)_v + sum_{u in N(v)} h^(k-1)_u) / (|N(v)| + 1),
applied K times to the (perturbed) feature matrix before any model sees it.
Training selects the weights with minimum validation loss, as in the usual
transductive setup.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, NumericError
from .gnn import Adam, GnnModel, TrainConfig, edge_bce, softmax_ce
from .rng import substream

MAX_CALIBRATION_STEPS = 32
LINK_EMBED_DIM = 16


@dataclass(frozen=True)
class CalibrationConfig:
    k: int
    aggregator: str = "mean_self"

    def __post_init__(self):
        if not 0 <= self.k <= MAX_CALIBRATION_STEPS:
            raise InvalidArgumentError(
                f"k={self.k} outside [0, {MAX_CALIBRATION_STEPS}]"
            )
        if self.aggregator != "mean_self":
            raise InvalidArgumentError(f"unknown aggregator {self.aggregator!r}")


def calibrate(features, g, cfg) -> np.ndarray:
    """K-step mean-with-self smoothing of a feature matrix over the graph.

    features may be a raw (n, d) matrix or any object with a .matrix
    attribute; cfg may be a CalibrationConfig or a bare step count.
    """
    if not isinstance(cfg, CalibrationConfig):
        cfg = CalibrationConfig(int(cfg))
    H = np.array(getattr(features, "matrix", features), dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != g.n:
        raise InvalidArgumentError(f"expected ({g.n}, d) features, got {H.shape}")
    if cfg.k == 0:
        return H
    A = g.adjacency()
    denom = (np.asarray(A.sum(axis=1)).ravel() + 1.0)[:, None]
    for _ in range(cfg.k):
        H = (A @ H + H) / denom
    return H


@dataclass
class TrainReport:
    """Training outcome plus the run context the caller fills in."""

    arch: str
    seed: int
    epochs_run: int
    best_val_loss: float
    mechanism: str | None = None
    epsilon: float | None = None
    K: int | None = None
    task: str | None = None
    scope: str | None = None
    accuracy: float | None = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def train_node_classifier(g, embeddings, masks, tcfg: TrainConfig) -> tuple[GnnModel, TrainReport]:
    """Cross-entropy training on the train mask, weights at best val loss.

    Deterministic given tcfg.seed. A non-finite loss aborts with the lr and
    epoch in the message. max_epochs=0 returns the initial weights.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = g.labels
    model = GnnModel.init(tcfg.arch, g.adjacency(), X.shape[1], g.num_classes, tcfg)
    train_ids = masks.train_ids
    val_ids = masks.val_ids
    if train_ids.size == 0 or val_ids.size == 0:
        raise InvalidArgumentError("train and val masks must be non-empty")
    opt = Adam(model.params, tcfg.lr, tcfg.weight_decay)
    rng = substream(tcfg.seed, "train")

    def val_loss() -> float:
        return softmax_ce(model.forward(X), labels, val_ids)[0]

    best = val_loss()
    best_params = model.clone_params()
    for epoch in range(tcfg.max_epochs):
        Z = model.forward(X, training=True, rng=rng)
        loss, dZ = softmax_ce(Z, labels, train_ids)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged (lr={tcfg.lr}, epoch={epoch})")
        opt.step(model.params, model.backward(dZ))
        v = val_loss()
        if v < best:
            best = v
            best_params = model.clone_params()
    model.set_params(best_params)
    model.check_finite()
    report = TrainReport(
        arch=tcfg.arch,
        seed=tcfg.seed,
        epochs_run=tcfg.max_epochs,
        best_val_loss=float(best),
    )
    return model, report


def evaluate_accuracy(model: GnnModel, g, embeddings, node_set) -> float:
    """Fraction of argmax predictions matching labels over node_set.

    Ties go to the lowest class id (argmax convention).
    """
    node_set = np.asarray(node_set)
    if node_set.size == 0:
        raise InvalidArgumentError("node_set must be non-empty")
    Z = model.forward(np.asarray(embeddings, dtype=np.float64))
    pred = np.argmax(Z[node_set], axis=1)
    return float(np.mean(pred == g.labels[node_set]))


def _sample_non_edges(n: int, forbidden: set, count: int, rng: np.random.Generator) -> np.ndarray:
    """count distinct node pairs (u < v) outside the forbidden set."""
    max_pairs = n * (n - 1) // 2
    if max_pairs - len(forbidden) < count:
        raise InvalidArgumentError("not enough non-edges to sample")
    out = []
    seen = set()
    while len(out) < count:
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in forbidden or pair in seen:
            continue
        seen.add(pair)
        out.append(pair)
    return np.array(out, dtype=np.int64)


def link_prediction_detail(g, embeddings, holdout_frac: float, tcfg: TrainConfig,
                           seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Held-out link prediction; returns (test_pairs, per-pair correctness).

    Protocol: remove holdout_frac of edges as test positives and sample an
    equal number of non-edges as test negatives; train the encoder on the
    remaining graph with logistic loss on dot-product scores (remaining
    edges as positives, fresh non-edges as negatives, 20% of pairs held for
    validation-based model selection); classify the test pairs by score
    against the validation-median threshold.
    """
    if not 0.0 < holdout_frac < 0.5:
        raise InvalidArgumentError("holdout_frac must lie in (0, 0.5)")
    E = g.num_edges
    n_hold = round(holdout_frac * E)
    if n_hold < 1 or E - n_hold < 5:
        raise InvalidArgumentError(f"graph too small for holdout ({E} edges)")
    rng = substream(seed, "linkpred")
    perm = rng.permutation(E)
    test_pos = g.edges[perm[:n_hold]]
    train_pos = g.edges[perm[n_hold:]]
    all_edges = {(int(u), int(v)) for u, v in g.edges}

    test_neg = _sample_non_edges(g.n, all_edges, n_hold, rng)
    forbidden = all_edges | {tuple(p) for p in map(tuple, test_neg)}
    train_neg = _sample_non_edges(g.n, forbidden, len(train_pos), rng)

    pairs = np.vstack([train_pos, train_neg])
    targets = np.concatenate([np.ones(len(train_pos)), np.zeros(len(train_neg))])
    order = rng.permutation(len(pairs))
    pairs, targets = pairs[order], targets[order]
    n_val = max(1, round(0.2 * len(pairs)))
    val_pairs, val_targets = pairs[:n_val], targets[:n_val]
    fit_pairs, fit_targets = pairs[n_val:], targets[n_val:]

    rows = np.concatenate([train_pos[:, 0], train_pos[:, 1]])
    cols = np.concatenate([train_pos[:, 1], train_pos[:, 0]])
    adj_train = sp.csr_matrix(
        (np.ones(2 * len(train_pos)), (rows, cols)), shape=(g.n, g.n)
    )

    X = np.asarray(embeddings, dtype=np.float64)
    model = GnnModel.init(tcfg.arch, adj_train, X.shape[1], LINK_EMBED_DIM, tcfg)
    opt = Adam(model.params, tcfg.lr, tcfg.weight_decay)
    train_rng = substream(seed, "linkpred-train")

    def val_loss() -> float:
        return edge_bce(model.forward(X), val_pairs, val_targets)[0]

    best = val_loss()
    best_params = model.clone_params()
    for epoch in range(tcfg.max_epochs):
        Z = model.forward(X, training=True, rng=train_rng)
        loss, dZ, _ = edge_bce(Z, fit_pairs, fit_targets)
        if not np.isfinite(loss):
            raise NumericError(f"training loss diverged (lr={tcfg.lr}, epoch={epoch})")
        opt.step(model.params, model.backward(dZ))
        v = val_loss()
        if v < best:
            best = v
            best_params = model.clone_params()
    model.set_params(best_params)
    model.check_finite()

    Z = model.forward(X)
    center = float(np.median(np.einsum("ij,ij->i", Z[val_pairs[:, 0]], Z[val_pairs[:, 1]])))
    test_pairs = np.vstack([test_pos, test_neg])
    test_targets = np.concatenate([np.ones(len(test_pos)), np.zeros(len(test_neg))])
    scores = np.einsum("ij,ij->i", Z[test_pairs[:, 0]], Z[test_pairs[:, 1]]) - center
    correct = (scores > 0.0) == (test_targets > 0.5)
    return test_pairs, correct


def link_prediction_eval(g, embeddings, holdout_frac: float, tcfg: TrainConfig,
                         seed: int) -> float:
    """Overall held-out accuracy of link_prediction_detail."""
    _, correct = link_prediction_detail(g, embeddings, holdout_frac, tcfg, seed)
    return float(np.mean(correct))


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float, float]:
    """(mean, ci_low, ci_high) via percentile bootstrap over the mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidArgumentError("bootstrap over empty sample")
    mean = float(values.mean())
    if values.size == 1:
        return mean, mean, mean
    rng = substream(seed, "bootstrap")
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    # the percentile interval can exclude the sample mean on tiny samples
    return mean, float(min(lo, mean)), float(max(hi, mean))


@dataclass
class EvalReport:
    """Per-scope accuracies across seeds with bootstrap intervals."""

    accuracy_targeted: float
    accuracy_untargeted: float
    targeted_values: list
    untargeted_values: list
    targeted_ci: tuple
    untargeted_ci: tuple

    @classmethod
    def from_values(cls, targeted, untargeted, n_resamples: int = 1000,
                    seed: int = 0) -> "EvalReport":
        mt, lt, ht = bootstrap_ci(targeted, n_resamples, seed)
        mu, lu, hu = bootstrap_ci(untargeted, n_resamples, seed)
        return cls(mt, mu, list(map(float, targeted)), list(map(float, untargeted)),
                   (lt, ht), (lu, hu))

    def to_json(self) -> dict:
        return dataclasses.asdict(self)
