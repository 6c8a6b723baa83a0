"""Closed-form error evaluators and the Monte Carlo harnesses probing them.

The closed forms (variance bias at a target, expected energy shift) are
implemented verbatim as printed; the MC harnesses test them directionally
(sign, monotonicity, ordering) rather than for equality, since the printed
expressions drop covariance terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig, AttackPlan, plan_attack, poison_graph
from .errors import DomainError, InvalidArgumentError
from .graph import Graph
from .mechanisms import MechanismConfig, perturb_features
from .protocol import calibrate
from .rng import substream


def crafted_variance(B: float, m: int, d: int) -> float:
    """Per-coordinate variance of a crafted row: (+-B on m of d dims) -> B^2 m/d."""
    return B * B * m / d


@dataclass(frozen=True)
class TheoryInputs:
    """Arguments of the printed error formulas.

    n_atk_neighbors defaults to its expectation q * (n_fake - 1).
    """

    sigma2: float = 1.0
    sigma2_atk: float = 1.0
    deg_target: int = 1
    lam: float = 0.5
    q: float = 0.0
    B: float = 0.0
    K: int = 1
    n_fake: int = 0
    n_atk_neighbors: float | None = None

    def __post_init__(self):
        for name in ("sigma2", "sigma2_atk", "q", "B"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if self.lam <= 0:
            raise InvalidArgumentError("lam must be positive")
        if self.K < 0 or self.n_fake < 0:
            raise InvalidArgumentError("K and n_fake must be non-negative")
        if self.lam * self.q >= 1.0:
            raise DomainError(f"lam*q = {self.lam * self.q} must be < 1")
        if self.n_atk_neighbors is None:
            object.__setattr__(
                self, "n_atk_neighbors", self.q * max(self.n_fake - 1, 0)
            )


def variance_bias(inputs: TheoryInputs) -> float:
    """Expected shift of a target's post-aggregation variance.

    (|N|+1)^2 s2 / (|N|+2)^4
      + (s2 + (N_atk+1) s2a) / ((|N|+2)^2 (N_atk+2)^2)
      - s2 / (|N|+1)^2
    with |N| the genuine degree and N_atk the fake-neighbor count.
    """
    if inputs.deg_target < 1:
        raise InvalidArgumentError("deg_target must be >= 1")
    N = float(inputs.deg_target)
    Na = float(inputs.n_atk_neighbors)
    s2, s2a = inputs.sigma2, inputs.sigma2_atk
    return (
        (N + 1.0) ** 2 * s2 / (N + 2.0) ** 4
        + (s2 + (Na + 1.0) * s2a) / ((N + 2.0) ** 2 * (Na + 2.0) ** 2)
        - s2 / (N + 1.0) ** 2
    )


def energy(g, features, embeddings, lam: float) -> float:
    """Global error energy: fit term plus lam-weighted edge smoothness.

    sum_v ||h_v - x_v||^2 + lam * sum_{(u,v) in E} ||h_u - h_v||^2
    """
    if lam <= 0:
        raise InvalidArgumentError("lam must be positive")
    X = np.asarray(features, dtype=np.float64)
    H = np.asarray(embeddings, dtype=np.float64)
    if X.shape != H.shape:
        raise InvalidArgumentError(f"shape mismatch {X.shape} vs {H.shape}")
    fit = float(((H - X) ** 2).sum())
    if g.num_edges == 0:
        return fit
    diff = H[g.edges[:, 0]] - H[g.edges[:, 1]]
    return fit + lam * float((diff**2).sum())


def expected_delta_psi(inputs: TheoryInputs) -> float:
    """Predicted energy shift: (1 + lam q / (1 - lam q)) * n_fake * B^2 * K."""
    lq = inputs.lam * inputs.q
    if lq >= 1.0:
        raise DomainError(f"lam*q = {lq} must be < 1")
    return (1.0 + lq / (1.0 - lq)) * inputs.n_fake * inputs.B**2 * inputs.K


def mc_delta_psi(g: Graph, mech: MechanismConfig, attack_cfg: AttackConfig | None,
                 lam: float, K: int, trials: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the realized energy shift.

    Each trial perturbs afresh, plans an attack, and accumulates the energy
    gap between the poisoned and clean graphs round by round: the crafted
    rows feed every one of the K aggregation rounds, so each round opens its
    own gap and the total grows with K (zero rounds -> exactly 0, mirroring
    the B^2 K scaling of the closed form). Genuine perturbed rows are shared
    between both sides so the gap isolates the attack contribution.
    attack_cfg=None means no attack (every round's gap is exactly 0).
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    deltas = np.empty(trials)
    for t in range(trials):
        trial_rng = substream(seed, "mc-delta-psi", t)
        perturb_seed = int(trial_rng.integers(0, 2**62))
        attack_seed = int(trial_rng.integers(0, 2**62))
        perturbed = perturb_features(g.features, mech, perturb_seed)
        if attack_cfg is None:
            plan = AttackPlan.empty()
        else:
            cfg = AttackConfig(
                eta1=attack_cfg.eta1,
                eta2=attack_cfg.eta2,
                strategy=attack_cfg.strategy,
                bound_mode=attack_cfg.bound_mode,
                sw_plus_one=attack_cfg.sw_plus_one,
                targets_from_test_only=False,
                seed=attack_seed,
            )
            plan = plan_attack(g, mech, cfg)
        pg = poison_graph(g, perturbed, plan)
        clean_h = perturbed.matrix
        pois_h = pg.features
        delta = 0.0
        for _ in range(K):
            clean_h = calibrate(clean_h, g, 1)
            pois_h = calibrate(pois_h, pg, 1)
            delta += energy(pg, pg.features, pois_h, lam) - energy(
                g, perturbed.matrix, clean_h, lam
            )
        deltas[t] = delta
    mean = float(np.mean(deltas))
    se = float(np.std(deltas, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, se


def security_privacy_curve(g: Graph, mech_kind: str, epsilons,
                           attack_cfg: AttackConfig, lam: float, K: int,
                           trials: int, seed: int,
                           alpha: float = -1.0, beta: float = 1.0) -> list[dict]:
    """MC energy shift along an increasing privacy-budget grid."""
    eps = [float(e) for e in epsilons]
    if len(eps) == 0:
        raise InvalidArgumentError("empty epsilon grid")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise InvalidArgumentError("epsilon grid must be strictly increasing")
    rows = []
    for e in eps:
        mech = MechanismConfig(kind=mech_kind, epsilon=e, d=g.d, alpha=alpha, beta=beta)
        mean, se = mc_delta_psi(g, mech, attack_cfg, lam, K, trials, seed)
        rows.append(
            {"epsilon": e, "mean_delta_psi": mean, "stderr": se,
             "trials": trials, "seed": seed}
        )
    return rows


def write_curve_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,mean_delta_psi,stderr,trials,seed\n")
        for r in rows:
            fh.write(
                f"{r['epsilon']:.17g},{r['mean_delta_psi']:.17g},"
                f"{r['stderr']:.17g},{r['trials']},{r['seed']}\n"
            )
