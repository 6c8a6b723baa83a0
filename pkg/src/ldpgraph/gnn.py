"""Two-layer graph neural networks in plain numpy with manual backprop.

Two architectures: GCN (symmetric-normalized propagation with self-loops)
and mean-aggregator SAGE (self embedding concatenated with the neighbor
mean; isolated nodes use a zero mean). Everything runs in double precision
so analytic gradients can be checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import InvalidArgumentError, NumericError, ShapeError
from .rng import substream

ARCHS = ("gcn", "sage")


def gcn_propagation(adj: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric normalization with self-loops: D~^{-1/2} (A + I) D~^{-1/2}."""
    n = adj.shape[0]
    a_tilde = (adj + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    D = sp.diags(inv_sqrt)
    return (D @ a_tilde @ D).tocsr()


def mean_propagation(adj: sp.spmatrix) -> sp.csr_matrix:
    """Row-normalized adjacency D^{-1} A; isolated nodes keep a zero row."""
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    return (sp.diags(inv) @ adj.tocsr()).tocsr()


@dataclass
class TrainConfig:
    arch: str = "gcn"
    hidden: int = 64
    lr: float = 1e-2
    weight_decay: float = 1e-4
    dropout: float = 0.1
    max_epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise InvalidArgumentError(f"unknown arch {self.arch!r}")
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be positive")
        if self.max_epochs < 0:
            raise InvalidArgumentError("max_epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("dropout must lie in [0, 1)")
        if self.hidden < 1:
            raise InvalidArgumentError("hidden must be >= 1")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass(eq=False)
class GnnModel:
    """Weights plus the (graph-dependent) propagation operator."""

    arch: str
    params: dict
    hidden: int
    dropout: float
    prop: sp.csr_matrix
    prop_t: sp.csr_matrix = field(repr=False, default=None)
    _cache: tuple = field(repr=False, default=None)

    @classmethod
    def init(cls, arch: str, adj: sp.spmatrix, in_dim: int, out_dim: int,
             cfg: TrainConfig) -> "GnnModel":
        if arch not in ARCHS:
            raise InvalidArgumentError(f"unknown arch {arch!r}")
        rng = substream(cfg.seed, "init")
        h = cfg.hidden
        if arch == "gcn":
            prop = gcn_propagation(adj)
            prop_t = prop  # symmetric
            w1_in, w2_in = in_dim, h
        else:
            prop = mean_propagation(adj)
            prop_t = prop.T.tocsr()
            w1_in, w2_in = 2 * in_dim, 2 * h
        params = {
            "W1": _glorot(rng, w1_in, h),
            "b1": np.zeros(h),
            "W2": _glorot(rng, w2_in, out_dim),
            "b2": np.zeros(out_dim),
        }
        return cls(arch, params, h, cfg.dropout, prop, prop_t)

    @property
    def out_dim(self) -> int:
        return self.params["W2"].shape[1]

    def forward(self, X: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Logit matrix (n, out_dim); caches intermediates for backward."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.prop.shape[0]:
            raise ShapeError(f"expected ({self.prop.shape[0]}, d) input, got {X.shape}")
        W1, b1 = self.params["W1"], self.params["b1"]
        W2, b2 = self.params["W2"], self.params["b2"]
        if self.arch == "gcn":
            A1 = self.prop @ X
        else:
            A1 = np.hstack([X, self.prop @ X])
        if A1.shape[1] != W1.shape[0]:
            raise ShapeError(f"layer-1 input width {A1.shape[1]} != W1 rows {W1.shape[0]}")
        S1 = A1 @ W1 + b1
        H1 = np.maximum(S1, 0.0)
        mask = None
        if training and self.dropout > 0.0:
            if rng is None:
                raise InvalidArgumentError("training-mode forward needs an rng for dropout")
            keep = 1.0 - self.dropout
            mask = (rng.random(H1.shape) < keep) / keep
            H1 = H1 * mask
        if self.arch == "gcn":
            A2 = self.prop @ H1
        else:
            A2 = np.hstack([H1, self.prop @ H1])
        Z = A2 @ W2 + b2
        self._cache = (A1, S1, mask, A2)
        return Z

    def backward(self, dZ: np.ndarray) -> dict:
        """Parameter gradients for the most recent forward pass."""
        if self._cache is None:
            raise InvalidArgumentError("backward called before forward")
        A1, S1, mask, A2 = self._cache
        W1, W2 = self.params["W1"], self.params["W2"]
        h = self.hidden
        grads = {"W2": A2.T @ dZ, "b2": dZ.sum(axis=0)}
        dA2 = dZ @ W2.T
        if self.arch == "gcn":
            dH1 = self.prop_t @ dA2
        else:
            dH1 = dA2[:, :h] + self.prop_t @ dA2[:, h:]
        if mask is not None:
            dH1 = dH1 * mask
        dS1 = dH1 * (S1 > 0.0)
        grads["W1"] = A1.T @ dS1
        grads["b1"] = dS1.sum(axis=0)
        return grads

    def check_finite(self) -> None:
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite weight in {name}")

    def clone_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict) -> None:
        self.params = {k: v.copy() for k, v in params.items()}


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def gcn_forward(model: GnnModel, X: np.ndarray) -> np.ndarray:
    """Class-probability matrix (rows sum to 1), dropout off."""
    if model.arch != "gcn":
        raise InvalidArgumentError(f"model arch is {model.arch!r}, not gcn")
    return softmax(model.forward(X))


def sage_forward(model: GnnModel, X: np.ndarray) -> np.ndarray:
    if model.arch != "sage":
        raise InvalidArgumentError(f"model arch is {model.arch!r}, not sage")
    return softmax(model.forward(X))


def softmax_ce(Z: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over idx and its gradient w.r.t. the full logits."""
    idx = np.asarray(idx)
    if idx.size == 0:
        raise InvalidArgumentError("loss over empty index set")
    Zi = Z[idx]
    y = labels[idx]
    zmax = Zi.max(axis=1)
    lse = zmax + np.log(np.exp(Zi - zmax[:, None]).sum(axis=1))
    loss = float(np.mean(lse - Zi[np.arange(len(idx)), y]))
    P = softmax(Zi)
    P[np.arange(len(idx)), y] -= 1.0
    dZ = np.zeros_like(Z)
    dZ[idx] = P / len(idx)
    return loss, dZ


def edge_bce(Z: np.ndarray, pairs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Logistic loss on dot-product pair scores; returns (loss, dZ, scores)."""
    if len(pairs) == 0:
        raise InvalidArgumentError("loss over empty pair set")
    u, v = pairs[:, 0], pairs[:, 1]
    s = np.einsum("ij,ij->i", Z[u], Z[v])
    loss = float(np.mean(np.logaddexp(0.0, s) - targets * s))
    ds = (expit(s) - targets) / len(s)
    dZ = np.zeros_like(Z)
    np.add.at(dZ, u, ds[:, None] * Z[v])
    np.add.at(dZ, v, ds[:, None] * Z[u])
    return loss, dZ, s


class Adam:
    """Adam with L2 decay folded into the gradient (decay skips biases)."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in params.items():
            g = grads[k]
            if self.weight_decay and k.startswith("W"):
                g = g + self.weight_decay * p
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
