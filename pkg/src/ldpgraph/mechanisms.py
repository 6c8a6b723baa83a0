"""Local randomizers for bounded numeric features.

Three single-value mechanisms (piecewise, multi-bit, square-wave) plus the
dimension-sampling wrapper that spends the budget epsilon on m of d
coordinates and rescales by d/m. Piecewise and square-wave operate on [-1, 1];
values from a general [alpha, beta] domain are mapped through the affine
bijection and back. Multi-bit emits a sign bit per sampled coordinate; the
server-side rectifier turns bits into unbiased value estimates.

Parameter formulas use expm1 where the naive expression cancels for small
privacy budgets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidArgumentError, NumericError
from .rng import substream

KINDS = ("pm", "mb", "sw")


def default_m(epsilon: float, d: int) -> int:
    """Number of sampled dimensions: max{1, min{d, floor(epsilon / 2.5)}}."""
    return max(1, min(d, math.floor(epsilon / 2.5)))


@dataclass(frozen=True)
class MechanismConfig:
    """Frozen description of one perturbation run.

    m=None selects default_m(epsilon, d). sw_raw=True skips the d/m factor
    on square-wave outputs; the square wave is not an unbiased value
    estimator either way.
    """

    kind: str
    epsilon: float
    d: int
    m: int | None = None
    alpha: float = -1.0
    beta: float = 1.0
    sw_raw: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown mechanism kind {self.kind!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidArgumentError("epsilon must be positive and finite")
        if self.d < 1:
            raise InvalidArgumentError("d must be >= 1")
        if self.m is not None and not (1 <= self.m <= self.d):
            raise InvalidArgumentError(f"m={self.m} outside [1, d={self.d}]")
        if not self.beta > self.alpha:
            raise InvalidArgumentError("beta must exceed alpha")

    @property
    def m_effective(self) -> int:
        return self.m if self.m is not None else default_m(self.epsilon, self.d)

    @property
    def eps_bar(self) -> float:
        return self.epsilon / self.m_effective

    @property
    def mid(self) -> float:
        return 0.5 * (self.alpha + self.beta)

    @property
    def half_range(self) -> float:
        return 0.5 * (self.beta - self.alpha)


def _check_unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input value")
    if np.any(np.abs(x) > 1.0):
        raise DomainError("input outside [-1, 1]")
    return x


# ---------------------------------------------------------------------------
# piecewise


@dataclass(frozen=True)
class PmParams:
    """Piecewise mechanism on [-1, 1] -> [-s, s].

    Density is p on [l(x), r(x)] (a band of width s-1 around the scaled
    input) and p / e^eps elsewhere; the two bands carry total mass 1 and the
    output is an unbiased estimate of x.
    """

    eps_bar: float
    s: float
    p: float

    @classmethod
    def from_eps_bar(cls, eps_bar: float) -> "PmParams":
        if eps_bar <= 0:
            raise InvalidArgumentError("eps_bar must be positive")
        t = math.expm1(eps_bar / 2.0)  # e^{eps/2} - 1
        s = 1.0 + 2.0 / t
        p = (t + 1.0) * t / (2.0 * (t + 2.0))
        if not (math.isfinite(s) and math.isfinite(p) and p > 0):
            raise NumericError(f"piecewise parameters overflow at eps_bar={eps_bar}")
        return cls(eps_bar, s, p)

    def l(self, x):
        return (self.s + 1.0) / 2.0 * np.asarray(x) - (self.s - 1.0) / 2.0

    def r(self, x):
        return self.l(x) + self.s - 1.0

    def density(self, x: float, t) -> np.ndarray:
        """Output density at points t for input x."""
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.l(x), self.r(x)
        inside = (t >= lo) & (t <= hi)
        out = np.where(inside, self.p, self.p * math.exp(-self.eps_bar))
        return np.where(np.abs(t) <= self.s, out, 0.0)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One perturbed value per entry of x (two uniforms per sample)."""
        x = _check_unit(x)
        lo, hi = self.l(x), self.r(x)
        high_mass = self.p * (self.s - 1.0)
        take_high = rng.random(x.shape) < high_mass
        u = rng.random(x.shape)
        y_high = lo + (self.s - 1.0) * u
        # low region splits into [-s, l] and [r, s] with total length s+1
        pos = (self.s + 1.0) * u
        left_len = lo + self.s
        y_low = np.where(pos < left_len, -self.s + pos, hi + (pos - left_len))
        return np.where(take_high, y_high, y_low)


def perturb_pm(x, eps_bar: float, rng: np.random.Generator) -> np.ndarray:
    return PmParams.from_eps_bar(eps_bar).sample(x, rng)


# ---------------------------------------------------------------------------
# square wave


@dataclass(frozen=True)
class SwParams:
    """Square-wave mechanism on [-1, 1] -> [-1-b, 1+b].

    Density is p within b of the input and p / e^eps on the rest of the
    range. Mass is 1; the output is deliberately not an unbiased value
    estimate (the mechanism targets distribution, not mean, recovery).
    """

    eps_bar: float
    b: float
    p: float

    @classmethod
    def from_eps_bar(cls, eps_bar: float) -> "SwParams":
        if eps_bar <= 0:
            raise InvalidArgumentError("eps_bar must be positive")
        e = math.exp(eps_bar)
        em1 = math.expm1(eps_bar)
        denom = e * (em1 - eps_bar)
        if denom <= 0 or not math.isfinite(denom):
            raise NumericError(f"square-wave width undefined at eps_bar={eps_bar}")
        b = (eps_bar * e - em1) / denom
        p = e / (2.0 * b * e + 2.0)
        if not (math.isfinite(b) and b > 0 and math.isfinite(p) and p > 0):
            raise NumericError(f"square-wave parameters overflow at eps_bar={eps_bar}")
        return cls(eps_bar, b, p)

    def density(self, x: float, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t - x) <= self.b
        out = np.where(inside, self.p, self.p * math.exp(-self.eps_bar))
        return np.where(np.abs(t) <= 1.0 + self.b, out, 0.0)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = _check_unit(x)
        b = self.b
        in_mass = 2.0 * b * self.p
        take_in = rng.random(x.shape) < in_mass
        u = rng.random(x.shape)
        y_in = x - b + 2.0 * b * u
        # outside region: [-1-b, x-b] and [x+b, 1+b], total length 2
        pos = 2.0 * u
        left_len = x + 1.0
        y_out = np.where(pos < left_len, -1.0 - b + pos, x + b + (pos - left_len))
        return np.where(take_in, y_in, y_out)


def perturb_sw(x, eps_bar: float, rng: np.random.Generator) -> np.ndarray:
    return SwParams.from_eps_bar(eps_bar).sample(x, rng)


# ---------------------------------------------------------------------------
# multi-bit


def mb_prob_plus(x, eps_bar: float, alpha: float, beta: float) -> np.ndarray:
    """Probability the multi-bit encoder emits +1 for input x in [alpha, beta]."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input value")
    if np.any(x < alpha) or np.any(x > beta):
        raise DomainError(f"input outside [{alpha}, {beta}]")
    e = math.exp(eps_bar)
    return 1.0 / (e + 1.0) + (x - alpha) / (beta - alpha) * (e - 1.0) / (e + 1.0)


def perturb_mb(x, eps_bar: float, alpha: float, beta: float,
               rng: np.random.Generator) -> np.ndarray:
    """One +-1 bit per entry of x."""
    prob = mb_prob_plus(x, eps_bar, alpha, beta)
    return np.where(rng.random(np.shape(x)) < prob, 1.0, -1.0)


def rectify_mb(bits, d: int, m: int, alpha: float, beta: float, eps_bar: float) -> np.ndarray:
    """Server-side unbiased value estimate from multi-bit outputs.

    bits holds +-1 on sampled coordinates and 0 elsewhere; zeros rectify to
    the domain midpoint, so the full matrix can be rectified in one shot.
    """
    bits = np.asarray(bits, dtype=np.float64)
    em1 = math.expm1(eps_bar)
    scale = d * (beta - alpha) / (2.0 * m) * (em1 + 2.0) / em1
    return scale * bits + 0.5 * (alpha + beta)


# ---------------------------------------------------------------------------
# full-matrix wrapper


@dataclass(eq=False)
class PerturbedFeatures:
    """Server-side view of one perturbation run.

    matrix holds value estimates in the original feature scale (multi-bit
    entries already rectified, piecewise/square-wave entries rescaled by d/m
    and mapped back from [-1, 1]); entries outside a node's support are
    exactly 0. supports lists the m sampled coordinates per node, or None
    when reloaded from disk.
    """

    matrix: np.ndarray
    supports: np.ndarray | None
    config: MechanismConfig
    seed: int

    def save(self, csv_path) -> None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            for row in self.matrix:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
        meta = {
            "kind": self.config.kind,
            "epsilon": self.config.epsilon,
            "d": self.config.d,
            "m": self.config.m_effective,
            "alpha": self.config.alpha,
            "beta": self.config.beta,
            "sw_raw": self.config.sw_raw,
            "seed": self.seed,
        }
        with open(str(csv_path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, csv_path) -> "PerturbedFeatures":
        matrix = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
        with open(str(csv_path) + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        config = MechanismConfig(
            kind=meta["kind"],
            epsilon=meta["epsilon"],
            d=meta["d"],
            m=meta["m"],
            alpha=meta["alpha"],
            beta=meta["beta"],
            sw_raw=meta.get("sw_raw", False),
        )
        return cls(matrix, None, config, meta["seed"])


def perturb_features(features, config: MechanismConfig, seed: int) -> PerturbedFeatures:
    """Perturb every node's feature row under the sampling wrapper.

    Accepts a feature matrix or anything with a .features attribute. Each
    node v draws from the substream (seed, "perturb", v): first the m
    sampled coordinates, then the mechanism noise. Results therefore do not
    depend on processing order. Entries outside the support are exactly 0;
    the combined estimator is unbiased for domains with midpoint 0 (the
    operating default) or when m = d.
    """
    X = np.asarray(getattr(features, "features", features), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.d:
        raise InvalidArgumentError(f"features must be (n, {config.d})")
    if not np.all(np.isfinite(X)):
        raise DomainError("non-finite feature value")
    if np.any(X < config.alpha) or np.any(X > config.beta):
        raise DomainError(f"feature outside [{config.alpha}, {config.beta}]")

    n, d = X.shape
    m = config.m_effective
    eb = config.eps_bar
    if config.kind == "pm":
        params = PmParams.from_eps_bar(eb)
    elif config.kind == "sw":
        params = SwParams.from_eps_bar(eb)
    else:
        params = None

    out = np.zeros((n, d))
    supports = np.empty((n, m), dtype=np.int64)
    for v in range(n):
        rng = substream(seed, "perturb", v)
        dims = np.sort(rng.choice(d, size=m, replace=False))
        supports[v] = dims
        x = X[v, dims]
        if config.kind == "mb":
            bits = perturb_mb(x, eb, config.alpha, config.beta, rng)
            out[v, dims] = rectify_mb(bits, d, m, config.alpha, config.beta, eb)
        else:
            u = (x - config.mid) / config.half_range
            y = params.sample(u, rng)
            if config.kind == "pm" or not config.sw_raw:
                y = y * (d / m)
            out[v, dims] = config.half_range * y + config.mid
    return PerturbedFeatures(out, supports, config, seed)
