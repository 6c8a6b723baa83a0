"""Detection-side analyses run by a suspicious server.

Three independent signals: homophily distributions (do injected nodes shift
the feature-similarity profile?), Girvan-Newman communities (do fakes end up
in tiny fragments?), and k-means distance scoring (are crafted rows feature
outliers?). Precision/recall are computed against known fake ids when the
caller has them; nothing here assumes attack internals beyond that.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.stats import ks_2samp

from .errors import InvalidArgumentError
from .rng import substream

HOMOPHILY_BINS = 40
GN_SIZE_GUARD = 5000
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; rows with a zero vector score 0."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    out = np.zeros(len(a))
    nz = denom > 0
    out[nz] = np.einsum("ij,ij->i", a[nz], b[nz]) / denom[nz]
    return np.clip(out, -1.0, 1.0)


def node_homophily(g, features) -> np.ndarray:
    """Cosine between each node's features and its degree-normalized
    neighborhood aggregate r_v = sum_{j in N(v)} x_j / (sqrt(d_j) sqrt(d_v)).

    Isolated nodes (r_v undefined) and zero feature vectors score 0.
    """
    X = np.asarray(getattr(features, "matrix", features), dtype=np.float64)
    A = g.adjacency()
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    R = inv_sqrt[:, None] * (A @ (inv_sqrt[:, None] * X))
    return _cosine_rows(R, X)


def edge_homophily(g, features) -> np.ndarray:
    """Cosine similarity of the two endpoint feature vectors, per edge."""
    X = np.asarray(getattr(features, "matrix", features), dtype=np.float64)
    if g.num_edges == 0:
        return np.empty(0)
    return _cosine_rows(X[g.edges[:, 0]], X[g.edges[:, 1]])


def score_histogram(scores: np.ndarray, bins: int = HOMOPHILY_BINS) -> np.ndarray:
    """(bins, 3) rows of (bin_low, bin_high, mass) over fixed [-1, 1] bins."""
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(scores, bins=edges)
    mass = counts / max(len(scores), 1)
    return np.column_stack([edges[:-1], edges[1:], mass])


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance."""
    return float(ks_2samp(a, b, method="asymp").statistic)


@dataclass
class HomophilyReport:
    node_scores: np.ndarray
    edge_scores: np.ndarray
    node_hist: np.ndarray
    edge_hist: np.ndarray

    @classmethod
    def compute(cls, g, features) -> "HomophilyReport":
        ns = node_homophily(g, features)
        es = edge_homophily(g, features)
        return cls(ns, es, score_histogram(ns), score_histogram(es))


def write_histogram_csv(path, pre_hist: np.ndarray, post_hist: np.ndarray | None = None) -> None:
    """Histogram CSV with a phase column (pre, and post when given)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,mass,phase\n")
        for lo, hi, mass in pre_hist:
            fh.write(f"{lo:.17g},{hi:.17g},{mass:.17g},pre\n")
        if post_hist is not None:
            for lo, hi, mass in post_hist:
                fh.write(f"{lo:.17g},{hi:.17g},{mass:.17g},post\n")


# ---------------------------------------------------------------------------
# communities


@dataclass
class CommunityResult:
    labels: np.ndarray        # community id per node
    modularity: float         # of the returned partition
    trace: list               # modularity at each recorded component count


def _partition_labels(components, n: int) -> np.ndarray:
    labels = np.empty(n, dtype=np.int64)
    for cid, comp in enumerate(components):
        for node in comp:
            labels[node] = cid
    return labels


def girvan_newman(g, max_communities: int) -> CommunityResult:
    """Betweenness-based divisive clustering with a modularity stop rule.

    Removes the highest-betweenness edge (ties broken by lexicographic edge
    id) until the component count reaches max_communities, recording
    modularity against the original graph whenever the count grows; returns
    the partition with maximum recorded modularity.
    """
    if g.n > GN_SIZE_GUARD:
        raise InvalidArgumentError(f"graph too large for betweenness loop (n={g.n})")
    if max_communities < 1:
        raise InvalidArgumentError("max_communities must be >= 1")
    n = g.n
    original = nx.Graph()
    original.add_nodes_from(range(n))
    original.add_edges_from(map(tuple, g.edges))
    if original.number_of_edges() == 0:
        return CommunityResult(np.arange(n, dtype=np.int64), 0.0, [0.0])

    work = original.copy()
    components = list(nx.connected_components(work))
    best_partition = components
    best_mod = nx.community.modularity(original, components)
    trace = [best_mod]
    count = len(components)
    while work.number_of_edges() > 0 and count < max_communities:
        bc = nx.edge_betweenness_centrality(work)
        edge = min(bc, key=lambda e: (-bc[e], tuple(sorted(e))))
        work.remove_edge(*edge)
        parts = list(nx.connected_components(work))
        if len(parts) > count:
            count = len(parts)
            mod = nx.community.modularity(original, parts)
            trace.append(mod)
            if mod > best_mod:
                best_mod = mod
                best_partition = parts
    return CommunityResult(_partition_labels(best_partition, n), best_mod, trace)


def fake_isolation_fraction(result: CommunityResult, fake_ids, min_size: int = 3) -> float:
    """Fraction of fakes that landed in communities smaller than min_size."""
    fake_ids = np.asarray(fake_ids)
    if fake_ids.size == 0:
        raise InvalidArgumentError("no fake ids given")
    sizes = np.bincount(result.labels)
    return float(np.mean(sizes[result.labels[fake_ids]] < min_size))


# ---------------------------------------------------------------------------
# k-means anomaly scoring


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0:
            centroids[i:] = X[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centroids[i] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((X - centroids[i]) ** 2, axis=1))
    return centroids


def _kmeans_once(X: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    centroids = _kmeans_pp_init(X, k, rng)
    prev_obj = np.inf
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        obj = float(d2[np.arange(len(X)), assign].sum())
        assert obj <= prev_obj + 1e-9 * max(1.0, abs(prev_obj)), "k-means objective increased"
        prev_obj = obj
        new_centroids = centroids.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new_centroids[c] = X[members].mean(axis=0)
            else:
                # repopulate an empty cluster with the worst-fit point
                far = int(d2[np.arange(len(X)), assign].argmax())
                new_centroids[c] = X[far]
        move = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if move < KMEANS_TOL:
            break
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    obj = float(d2[np.arange(len(X)), assign].sum())
    return centroids, obj


@dataclass
class DetectionReport:
    method: str
    flagged: np.ndarray
    scores: np.ndarray
    precision: float | None
    recall: float | None
    params: dict

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["flagged"] = self.flagged.tolist()
        out["scores"] = self.scores.tolist()
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")


def kmeans_anomaly(features, k: int, flag_percentile: float = 99.0, seed: int = 0,
                   true_fakes=None) -> DetectionReport:
    """Distance-to-nearest-centroid anomaly scores with percentile flagging.

    k-means++ init, 10 restarts (best final objective wins), 300 iterations
    max, 1e-6 centroid-movement tolerance. Deterministic given seed.
    """
    X = np.asarray(getattr(features, "matrix", features), dtype=np.float64)
    n = len(X)
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds n={n}")
    if not 0.0 < flag_percentile < 100.0:
        raise InvalidArgumentError("flag_percentile must lie in (0, 100)")

    best_centroids, best_obj = None, np.inf
    for restart in range(KMEANS_RESTARTS):
        centroids, obj = _kmeans_once(X, k, substream(seed, "kmeans", restart))
        if obj < best_obj:
            best_obj = obj
            best_centroids = centroids

    d2 = ((X[:, None, :] - best_centroids[None, :, :]) ** 2).sum(axis=2)
    scores = np.sqrt(d2.min(axis=1))
    threshold = np.percentile(scores, flag_percentile)
    flagged = np.flatnonzero(scores > threshold)

    precision = recall = None
    if true_fakes is not None:
        fakes = set(int(i) for i in np.asarray(true_fakes))
        hit = sum(1 for i in flagged if int(i) in fakes)
        precision = hit / len(flagged) if len(flagged) else 0.0
        recall = hit / len(fakes) if fakes else 0.0
    return DetectionReport(
        method="kmeans",
        flagged=flagged,
        scores=scores,
        precision=precision,
        recall=recall,
        params={"k": k, "flag_percentile": flag_percentile, "seed": seed,
                "objective": best_obj},
    )
