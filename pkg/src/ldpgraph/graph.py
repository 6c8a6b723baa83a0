"""Graph container, text-file ingestion/export, synthetic generation, splits.

Graphs are undirected and simple: edges are stored once as (u, v) with u < v,
sorted lexicographically. Node ids are dense 0-based integers. Feature
matrices are float64 and, after normalization, bounded by [alpha, beta].
All arrays are frozen after construction so graphs can be shared read-only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    ParseError,
)
from .rng import substream

log = logging.getLogger(__name__)


def _canonical_edges(edges: np.ndarray) -> tuple[np.ndarray, int]:
    """Sort endpoints, drop self-loops and duplicates. Returns (edges, n_loops)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = edges[:, 0] == edges[:, 1]
    n_loops = int(loops.sum())
    edges = edges[~loops]
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    edges = np.unique(np.column_stack([lo, hi]), axis=0)
    return edges, n_loops


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(eq=False)
class Graph:
    """Undirected featured graph with per-node class labels."""

    edges: np.ndarray       # (E, 2) int64, u < v, unique, lexsorted
    features: np.ndarray    # (n, d) float64
    labels: np.ndarray      # (n,) int64 in [0, C)
    alpha: float
    beta: float
    num_classes: int
    _adj: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidArgumentError("features must be a 2-d matrix")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionMismatchError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} feature rows"
            )
        if len(self.edges) and self.edges.max() >= self.n:
            raise InvalidArgumentError("edge endpoint exceeds node count")
        if len(self.edges) and (self.edges[:, 0] == self.edges[:, 1]).any():
            raise InvalidArgumentError("self-loop in canonical edge list")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidArgumentError("labels must lie in [0, num_classes)")
        _freeze(self.edges, self.features, self.labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def avg_degree(self) -> float:
        return 2.0 * self.num_edges / self.n

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency (cached)."""
        if self._adj is None:
            u, v = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * len(self.edges))
            rows = np.concatenate([u, v])
            cols = np.concatenate([v, u])
            self._adj = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        return self._adj

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency().sum(axis=1)).ravel()

    def stats(self) -> "DatasetStats":
        return DatasetStats(
            n=self.n,
            num_edges=self.num_edges,
            d=self.d,
            num_classes=self.num_classes,
            avg_degree=self.avg_degree,
        )

    def replace_features(self, features: np.ndarray, alpha: float, beta: float) -> "Graph":
        return Graph(self.edges, features, self.labels, alpha, beta, self.num_classes)


@dataclass(frozen=True)
class DatasetStats:
    n: int
    num_edges: int
    d: int
    num_classes: int
    avg_degree: float


@dataclass(eq=False)
class SplitMasks:
    """Disjoint train/val/test boolean masks.

    split_nodes produces a full partition; poisoned-graph masks may leave
    fake nodes out of every split.
    """

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        n = len(self.train)
        if len(self.val) != n or len(self.test) != n:
            raise DimensionMismatchError("masks must have equal length")
        total = self.train.astype(int) + self.val.astype(int) + self.test.astype(int)
        if total.max(initial=0) > 1:
            raise InvalidArgumentError("masks must be disjoint")
        _freeze(self.train, self.val, self.test)

    @property
    def train_ids(self) -> np.ndarray:
        return np.flatnonzero(self.train)

    @property
    def val_ids(self) -> np.ndarray:
        return np.flatnonzero(self.val)

    @property
    def test_ids(self) -> np.ndarray:
        return np.flatnonzero(self.test)


# ---------------------------------------------------------------------------
# ingestion


def _parse_edge_file(path) -> tuple[np.ndarray, int]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected two node ids, got {len(parts)} fields")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {text!r}") from None
            if u < 0 or v < 0:
                raise ParseError(path, lineno, "negative node id")
            pairs.append((u, v))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    raw = len(edges)
    edges, n_loops = _canonical_edges(edges)
    if n_loops:
        log.warning("%s: dropped %d self-loop(s)", path, n_loops)
    dupes = raw - n_loops - len(edges)
    if dupes:
        log.warning("%s: merged %d duplicate edge(s)", path, dupes)
    return edges, n_loops


def _parse_feature_file(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(path, lineno, f"expected {width} columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(path, lineno, "non-numeric feature value") from None
    if not rows:
        raise ParseError(path, 0, "empty feature file")
    return np.array(rows, dtype=np.float64)


def _parse_label_file(path) -> np.ndarray:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "node_id,label":
            raise ParseError(path, 1, f'expected header "node_id,label", got {header!r}')
        for lineno, line in enumerate(fh, start=2):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected node_id,label")
            try:
                node, lab = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, lineno, "non-integer node id or label") from None
            if node in entries:
                raise ParseError(path, lineno, f"duplicate node id {node}")
            entries[node] = lab
    n = len(entries)
    if sorted(entries) != list(range(n)):
        raise ParseError(path, 0, "node ids must be contiguous from 0 (gap detected)")
    return np.array([entries[i] for i in range(n)], dtype=np.int64)


def load_graph(edge_file, feature_file, label_file) -> Graph:
    """Read a graph from the documented text formats.

    Self-loops are dropped (with a logged count); duplicate edges are merged.
    Node ids must be dense 0-based; feature and label row counts must agree.
    """
    features = _parse_feature_file(feature_file)
    labels = _parse_label_file(label_file)
    if len(labels) != len(features):
        raise DimensionMismatchError(
            f"{len(features)} feature rows but {len(labels)} label rows"
        )
    edges, _ = _parse_edge_file(edge_file)
    n = len(features)
    if len(edges) and edges.max() >= n:
        raise ParseError(edge_file, 0, f"edge endpoint {edges.max()} >= node count {n}")
    if labels.size and labels.min() < 0:
        raise ParseError(label_file, 0, "negative label")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    alpha = float(features.min()) if features.size else 0.0
    beta = float(features.max()) if features.size else 0.0
    return Graph(edges, features, labels, alpha, beta, num_classes)


def export_graph(g: Graph, edge_file, feature_file, label_file) -> None:
    """Write the graph back out in the ingestion formats (17 significant digits)."""
    with open(edge_file, "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
    with open(feature_file, "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    with open(label_file, "w", encoding="utf-8") as fh:
        fh.write("node_id,label\n")
        for i, lab in enumerate(g.labels):
            fh.write(f"{i},{lab}\n")


# ---------------------------------------------------------------------------
# transforms


def normalize_features(g: Graph, target_low: float = -1.0, target_high: float = 1.0) -> Graph:
    """Affine per-column rescale of features into [target_low, target_high].

    Constant columns map to the interval midpoint. The returned graph records
    (alpha, beta) = (target_low, target_high).
    """
    if target_high <= target_low:
        raise InvalidArgumentError("target_high must exceed target_low")
    X = g.features
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    out = np.empty_like(X)
    constant = span == 0
    mid = 0.5 * (target_low + target_high)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = (X - lo) / span * (target_high - target_low) + target_low
    out[:, ~constant] = scaled[:, ~constant]
    out[:, constant] = mid
    return g.replace_features(out, target_low, target_high)


def generate_featured_sbm(
    n: int,
    num_classes: int,
    d: int,
    p_in: float,
    p_out: float,
    signal: float,
    seed: int,
) -> Graph:
    """Planted-partition graph with class-indicative features.

    Classes are balanced blocks of contiguous node ids. Each class owns a
    round-robin share of the feature dimensions; its mean vector is +-signal
    on that support and 0 elsewhere. Features are the class mean plus unit
    normal noise, then normalized per column to [-1, 1].
    """
    if n < num_classes:
        raise InvalidArgumentError(f"n={n} < num_classes={num_classes}")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise InvalidArgumentError("require 0 <= p_out <= p_in <= 1")
    if signal < 0:
        raise InvalidArgumentError("signal must be >= 0")
    sizes = [n // num_classes + (1 if c < n % num_classes else 0) for c in range(num_classes)]
    labels = np.repeat(np.arange(num_classes), sizes)

    rng_edges = substream(seed, "sbm-edges")
    rows = []
    for i in range(n - 1):
        same = labels[i + 1 :] == labels[i]
        probs = np.where(same, p_in, p_out)
        hits = np.flatnonzero(rng_edges.random(n - i - 1) < probs) + i + 1
        if hits.size:
            rows.append(np.column_stack([np.full(hits.size, i), hits]))
    edges = np.concatenate(rows) if rows else np.empty((0, 2), dtype=np.int64)

    rng_feat = substream(seed, "sbm-features")
    means = np.zeros((num_classes, d))
    for c in range(num_classes):
        support = np.arange(c, d, num_classes)
        signs = rng_feat.choice([-1.0, 1.0], size=support.size)
        means[c, support] = signal * signs
    X = means[labels] + rng_feat.standard_normal((n, d))

    g = Graph(edges, X, labels, float(X.min()), float(X.max()), num_classes)
    return normalize_features(g, -1.0, 1.0)


def split_nodes(g: Graph, ratios=(0.5, 0.25, 0.25), seed: int = 0) -> SplitMasks:
    """Uniform random train/val/test partition with the given proportions."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise InvalidArgumentError("all three split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"ratios must sum to 1, got {sum(ratios)}")
    n = g.n
    perm = substream(seed, "split").permutation(n)
    n_train = round(ratios[0] * n)
    n_val = round(ratios[1] * n)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return SplitMasks(train, val, test)
