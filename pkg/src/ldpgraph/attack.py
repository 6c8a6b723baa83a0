"""Fake-node poisoning against the private collection pipeline.

The attacker controls fake clients only: genuine users perturb honestly,
fake users skip the mechanism and submit crafted vectors directly, so the
attack operates on the post-perturbation matrix. Crafted vectors imitate
legitimate mechanism outputs (m non-zeros with magnitude exactly B, the
mechanism's output bound). Each target receives exactly one malicious edge
via cyclic matching; fake-fake links are added with the probability q that
keeps the expected average degree unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConstraintError, InvalidArgumentError
from .graph import Graph, SplitMasks
from .mechanisms import MechanismConfig, PmParams, SwParams
from .rng import substream

STRATEGIES = ("random", "diverse", "identical")
BOUND_MODES = ("paper", "algorithm1")


@dataclass(frozen=True)
class AttackConfig:
    """Attack knobs: eta1 = |V_t|/|V|, eta2 = |V_atk|/|V_t|."""

    eta1: float
    eta2: float
    strategy: str = "identical"
    bound_mode: str = "algorithm1"
    sw_plus_one: bool = False
    targets_from_test_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta1 <= 1.0:
            raise InvalidArgumentError("eta1 must lie in (0, 1]")
        if not 0.0 < self.eta2 <= 1.0:
            raise InvalidArgumentError("eta2 must lie in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise InvalidArgumentError(f"unknown strategy {self.strategy!r}")
        if self.bound_mode not in BOUND_MODES:
            raise InvalidArgumentError(f"unknown bound_mode {self.bound_mode!r}")


@dataclass(eq=False)
class AttackPlan:
    """Immutable description of one poisoning instance.

    Fake ids are n .. n+|V_atk|-1. matching_edges pairs (target id, fake id);
    inner_edges pairs fake ids. crafted_features rows live in the perturbed
    feature space.
    """

    targets: np.ndarray
    fakes: np.ndarray
    matching_edges: np.ndarray
    inner_edges: np.ndarray
    q: float
    B: float
    crafted_features: np.ndarray
    fake_labels: np.ndarray
    strategy: str
    seed: int

    def __post_init__(self):
        for name in ("targets", "fakes", "matching_edges", "inner_edges", "fake_labels"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        self.matching_edges = self.matching_edges.reshape(-1, 2)
        self.inner_edges = self.inner_edges.reshape(-1, 2)
        self.crafted_features = np.asarray(self.crafted_features, dtype=np.float64)
        if len(self.targets) and len(self.matching_edges) != len(self.targets):
            raise InvalidArgumentError("need exactly one matching edge per target")
        for a in (self.targets, self.fakes, self.matching_edges,
                  self.inner_edges, self.crafted_features, self.fake_labels):
            a.setflags(write=False)

    @property
    def n_fake(self) -> int:
        return len(self.fakes)

    @classmethod
    def empty(cls) -> "AttackPlan":
        z = np.empty((0,), dtype=np.int64)
        return cls(z, z, np.empty((0, 2), np.int64), np.empty((0, 2), np.int64),
                   0.0, 0.0, np.empty((0, 0)), z, "identical", 0)

    def to_json(self) -> dict:
        return {
            "targets": self.targets.tolist(),
            "fakes": self.fakes.tolist(),
            "matching_edges": self.matching_edges.tolist(),
            "inner_edges": self.inner_edges.tolist(),
            "q": self.q,
            "B": self.B,
            "crafted_features": self.crafted_features.tolist(),
            "fake_labels": self.fake_labels.tolist(),
            "strategy": self.strategy,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AttackPlan":
        return cls(
            np.array(data["targets"], dtype=np.int64),
            np.array(data["fakes"], dtype=np.int64),
            np.array(data["matching_edges"], dtype=np.int64).reshape(-1, 2),
            np.array(data["inner_edges"], dtype=np.int64).reshape(-1, 2),
            float(data["q"]),
            float(data["B"]),
            np.array(data["crafted_features"], dtype=np.float64),
            np.array(data["fake_labels"], dtype=np.int64),
            data["strategy"],
            int(data["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AttackPlan":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def select_targets(g: Graph, eta1: float, rng: np.random.Generator,
                   candidates=None) -> np.ndarray:
    """round(eta1 * n) distinct nodes in sampled order.

    The sampled order is meaningful: it fixes the index j used by the
    cyclic matching. candidates restricts the pool (default: all nodes).
    """
    if not 0.0 < eta1 <= 1.0:
        raise InvalidArgumentError("eta1 must lie in (0, 1]")
    pool = np.arange(g.n) if candidates is None else np.asarray(candidates, dtype=np.int64)
    size = round(eta1 * g.n)
    if size == 0:
        raise InvalidArgumentError(f"eta1={eta1} selects zero targets")
    if size > len(pool):
        raise InvalidArgumentError(f"{size} targets requested from pool of {len(pool)}")
    return pool[rng.permutation(len(pool))[:size]]


def compute_extreme_bound(config: MechanismConfig, bound_mode: str = "algorithm1",
                          sw_plus_one: bool = False) -> float:
    """Largest magnitude a mechanism output can take (the crafting bound B).

    paper mode uses the literal published forms; algorithm1 mode applies the
    d/m sampling scale to PM and SW. sw_plus_one measures the square-wave
    range from the domain edge (b+1) instead of the window width (b).
    """
    if bound_mode not in BOUND_MODES:
        raise InvalidArgumentError(f"unknown bound_mode {bound_mode!r}")
    eb = config.eps_bar
    d, m = config.d, config.m_effective
    if config.kind == "pm":
        s = PmParams.from_eps_bar(eb).s
        return s * (d / m if bound_mode == "algorithm1" else d)
    if config.kind == "mb":
        em1 = math.expm1(eb)
        return (d * (config.beta - config.alpha) / (2.0 * m)
                * (em1 + 2.0) / em1 + config.mid)
    b = SwParams.from_eps_bar(eb).b
    if sw_plus_one:
        b = b + 1.0
    return b * (d / m) if bound_mode == "algorithm1" else b


def craft_fake_features(n_fake: int, d: int, m: int, B: float, strategy: str,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(n_fake, d) crafted matrix plus (n_fake, m) supports.

    Selected entries are B * (-1)^{1(U > 0.5)} with U ~ Uniform(0,1); the
    rest are zero. Strategies: random (i.i.d. supports), diverse (pairwise
    disjoint), identical (one shared support).
    """
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(f"unknown strategy {strategy!r}")
    if m > d:
        raise InvalidArgumentError(f"m={m} exceeds d={d}")
    if strategy == "diverse" and m * n_fake > d:
        raise InvalidArgumentError(
            f"diverse strategy infeasible: m*n_fake = {m * n_fake} > d = {d}"
        )
    supports = np.empty((n_fake, m), dtype=np.int64)
    if strategy == "identical":
        shared = np.sort(rng.choice(d, size=m, replace=False))
        supports[:] = shared
    elif strategy == "diverse":
        perm = rng.permutation(d)
        for i in range(n_fake):
            supports[i] = np.sort(perm[i * m : (i + 1) * m])
    else:
        for i in range(n_fake):
            supports[i] = np.sort(rng.choice(d, size=m, replace=False))
    u = rng.random((n_fake, m))
    values = np.where(u > 0.5, -B, B)
    matrix = np.zeros((n_fake, d))
    rows = np.repeat(np.arange(n_fake), m)
    matrix[rows, supports.ravel()] = values.ravel()
    return matrix, supports


def cyclic_match(targets, n_fake: int) -> np.ndarray:
    """0-based fake index for each target: j-th target (1-based) -> (j mod n_fake)."""
    targets = np.asarray(targets)
    if n_fake < 1:
        raise InvalidArgumentError("need at least one fake node")
    if len(targets) == 0:
        raise InvalidArgumentError("no targets to match")
    j = np.arange(1, len(targets) + 1)
    return j % n_fake


def compute_inner_link_prob(avg_deg: float, n_targets: int, n_fake: int) -> float:
    """Fake-fake link probability preserving the expected average degree.

    q = (avg_deg - 2*n_targets/n_fake) / (n_fake - 1). The preconditions
    guarantee 0 < q <= 1; each violation raises with the failed inequality.
    """
    if avg_deg < 2.0:
        raise ConstraintError("avg_deg >= 2", f"avg_deg={avg_deg}")
    if n_targets < (avg_deg + 1.0) ** 2 / 8.0:
        raise ConstraintError(
            "n_targets >= (avg_deg+1)^2/8",
            f"n_targets={n_targets}, bound={(avg_deg + 1.0) ** 2 / 8.0:.4g}",
        )
    if not 1 < n_fake <= n_targets:
        raise ConstraintError("1 < n_fake <= n_targets",
                              f"n_fake={n_fake}, n_targets={n_targets}")
    if not n_fake > 2.0 * n_targets / avg_deg:
        raise ConstraintError(
            "n_fake > 2*n_targets/avg_deg",
            f"n_fake={n_fake}, threshold={2.0 * n_targets / avg_deg:.4g}",
        )
    q = (avg_deg - 2.0 * n_targets / n_fake) / (n_fake - 1.0)
    assert 0.0 < q <= 1.0, f"preconditions should bound q, got {q}"
    return q


def sample_inner_links(n_fake: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(q) per unordered fake pair; (k, 2) array of 0-based indices."""
    if not 0.0 < q <= 1.0:
        raise InvalidArgumentError("q must lie in (0, 1]")
    iu, ju = np.triu_indices(n_fake, k=1)
    keep = rng.random(len(iu)) < q
    return np.column_stack([iu[keep], ju[keep]]).astype(np.int64)


def plan_attack(g: Graph, mech: MechanismConfig, cfg: AttackConfig,
                masks: SplitMasks | None = None) -> AttackPlan:
    """Full attack construction for one (graph, mechanism, config) triple.

    Raises ConstraintError when the degree-preservation preconditions fail
    for the implied (|V_t|, |V_atk|) sizes.
    """
    n_targets = round(cfg.eta1 * g.n)
    if n_targets == 0:
        raise InvalidArgumentError(f"eta1={cfg.eta1} selects zero targets")
    n_fake = round(cfg.eta2 * n_targets)
    if n_fake < 2:
        raise ConstraintError("1 < n_fake <= n_targets",
                              f"eta2={cfg.eta2} gives n_fake={n_fake}")
    q = compute_inner_link_prob(g.avg_degree, n_targets, n_fake)

    candidates = None
    if cfg.targets_from_test_only:
        if masks is None:
            raise InvalidArgumentError("targets_from_test_only requires masks")
        candidates = masks.test_ids
    targets = select_targets(g, cfg.eta1, substream(cfg.seed, "targets"), candidates)

    B = compute_extreme_bound(mech, cfg.bound_mode, cfg.sw_plus_one)
    crafted, _ = craft_fake_features(
        n_fake, g.d, mech.m_effective, B, cfg.strategy, substream(cfg.seed, "craft")
    )
    fake_labels = substream(cfg.seed, "labels").integers(0, g.num_classes, size=n_fake)
    fakes = np.arange(g.n, g.n + n_fake, dtype=np.int64)
    match_idx = cyclic_match(targets, n_fake)
    matching_edges = np.column_stack([targets, fakes[match_idx]])
    inner_idx = sample_inner_links(n_fake, q, substream(cfg.seed, "inner"))
    inner_edges = fakes[inner_idx] if len(inner_idx) else np.empty((0, 2), np.int64)

    return AttackPlan(targets, fakes, matching_edges, inner_edges, q, B,
                      crafted, fake_labels, cfg.strategy, cfg.seed)


@dataclass(eq=False)
class PoisonedGraph:
    """Graph plus fake nodes, carrying perturbed-space features.

    Not a Graph: rows live in the mechanism's output space, unbounded by
    the original [alpha, beta] domain.
    """

    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    genuine_n: int
    fake_ids: np.ndarray
    _adj: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def avg_degree(self) -> float:
        return 2.0 * self.num_edges / self.n

    def adjacency(self) -> sp.csr_matrix:
        if self._adj is None:
            u, v = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * len(self.edges))
            self._adj = sp.csr_matrix(
                (data, (np.concatenate([u, v]), np.concatenate([v, u]))),
                shape=(self.n, self.n),
            )
        return self._adj

    def extend_masks(self, masks: SplitMasks) -> SplitMasks:
        """Masks over G': fake nodes join the training split."""
        pad = len(self.fake_ids)
        train = np.concatenate([masks.train, np.ones(pad, dtype=bool)])
        val = np.concatenate([masks.val, np.zeros(pad, dtype=bool)])
        test = np.concatenate([masks.test, np.zeros(pad, dtype=bool)])
        return SplitMasks(train, val, test)


def poison_graph(g: Graph, perturbed, plan: AttackPlan) -> PoisonedGraph:
    """Assemble G' from the perturbed matrix and an attack plan.

    perturbed may be a PerturbedFeatures or a raw (n, d) matrix; crafted
    fake rows are appended as-is. An empty plan returns G' = G.
    """
    X = np.asarray(getattr(perturbed, "matrix", perturbed), dtype=np.float64)
    if X.shape[0] != g.n:
        raise InvalidArgumentError(f"perturbed matrix has {X.shape[0]} rows for n={g.n}")
    if plan.n_fake == 0:
        return PoisonedGraph(g.edges.copy(), X.copy(), g.labels.copy(),
                             g.num_classes, g.n, np.empty(0, dtype=np.int64))
    if plan.crafted_features.shape != (plan.n_fake, g.d):
        raise InvalidArgumentError("crafted feature shape does not match plan")
    if not np.array_equal(plan.fakes, np.arange(g.n, g.n + plan.n_fake)):
        raise InvalidArgumentError("fake ids must be contiguous from n (id collision?)")
    if plan.targets.min() < 0 or plan.targets.max() >= g.n:
        raise InvalidArgumentError("target id outside genuine node range")

    features = np.vstack([X, plan.crafted_features])
    labels = np.concatenate([g.labels, plan.fake_labels])
    edges = np.vstack([g.edges, plan.matching_edges, plan.inner_edges])
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    edges = np.unique(np.column_stack([lo, hi]), axis=0)
    return PoisonedGraph(edges, features, labels, g.num_classes, g.n, plan.fakes.copy())
