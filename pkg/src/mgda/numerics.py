"""Small numpy neural-network core: MLPs with exact backprop, Adam,
power-iteration spectral norms and spectral-norm weight projection."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass
class GradientTape:
    dW: list
    db: list

    def arrays(self) -> list:
        return [g for pair in zip(self.dW, self.db) for g in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.arrays()])

    def scaled(self, c: float) -> "GradientTape":
        return GradientTape([c * g for g in self.dW], [c * g for g in self.db])


class Mlp:
    """Fully connected network, ``h_{l+1} = act(h_l @ W_l + b_l)``, identity output."""

    def __init__(self, layer_dims, activation: str = "relu", rng=None, zero: bool = False):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dimensions")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = activation
        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            if zero:
                W = np.zeros((fan_in, fan_out))
            else:
                gain = np.sqrt(2.0) if activation == "relu" else 1.0
                W = rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "Mlp":
        m = Mlp.__new__(Mlp)
        m.layer_dims = list(self.layer_dims)
        m.activation = self.activation
        m.weights = [W.copy() for W in self.weights]
        m.biases = [b.copy() for b in self.biases]
        m._cache = None
        return m

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vector = x.ndim == 1
        h = x[None] if vector else x
        if h.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"input dimension {h.shape[-1]} != {self.layer_dims[0]}")
        hs = [h]
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if layer == self.n_layers - 1 else self._act(z)
            hs.append(h)
        self._cache = (hs, vector)
        return h[0] if vector else h

    __call__ = forward

    def backward(self, upstream) -> GradientTape:
        """Gradients of ``sum(output * upstream)`` for the last forward input."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        hs, vector = self._cache
        g = np.asarray(upstream, dtype=float)
        g = g[None] if vector else g
        if g.shape != hs[-1].shape:
            raise ValueError(f"upstream shape {g.shape} != output shape {hs[-1].shape}")
        dW = [None] * self.n_layers
        db = [None] * self.n_layers
        for layer in reversed(range(self.n_layers)):
            dW[layer] = hs[layer].T @ g
            db[layer] = g.sum(axis=0)
            if layer:
                g = g @ self.weights[layer].T
                h = hs[layer]
                g = g * (h > 0) if self.activation == "relu" else g * (1.0 - h * h)
        return GradientTape(dW, db)

    def lipschitz_bound(self) -> float:
        """Product of layer spectral norms (valid for 1-Lipschitz activations)."""
        return float(np.prod([np.linalg.norm(W, 2) for W in self.weights]))

    def to_dict(self) -> dict:
        return dict(layer_dims=self.layer_dims, activation=self.activation,
                    weights=[W.tolist() for W in self.weights], biases=[b.tolist() for b in self.biases])

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        m = cls(d["layer_dims"], d["activation"], zero=True)
        m.weights = [np.array(W, dtype=float).reshape(a, b)
                     for W, a, b in zip(d["weights"], m.layer_dims[:-1], m.layer_dims[1:])]
        m.biases = [np.array(b, dtype=float) for b in d["biases"]]
        return m


class Adam:
    """Adaptive-moment SGD over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, names=None):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.names = names or [f"param {k}" for k in range(len(self.params))]
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mlp_param_names(m: Mlp) -> list[str]:
    return [f"layer {k} {kind}" for k in range(m.n_layers) for kind in ("weight", "bias")]


def adam_for(m: Mlp, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, extra=()) -> Adam:
    names = mlp_param_names(m) + [f"extra {k}" for k in range(len(extra))]
    return Adam(m.params() + list(extra), lr, betas, eps, names)


def spectral_norm(W, iters: int = 50, seed=0, v0=None, tol: float | None = None,
                  max_iters: int = 5000) -> tuple[float, np.ndarray]:
    """Largest singular value by power iteration; returns (sigma, right vector).

    With ``tol`` the iteration continues past ``iters`` until successive
    estimates agree to that relative tolerance (at most ``max_iters``).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    W = np.asarray(W, dtype=float)
    if not W.any():
        return 0.0, np.zeros(W.shape[1])
    v = np.random.default_rng(seed).standard_normal(W.shape[1]) if v0 is None else np.array(v0, float)
    if not np.linalg.norm(W @ v) > 0:
        v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for k in range(max(iters, max_iters if tol is not None else iters)):
        u = W @ v
        u /= np.linalg.norm(u)
        v = W.T @ u
        prev, sigma = sigma, float(np.linalg.norm(v))
        v /= sigma
        if tol is not None and k + 1 >= iters and sigma - prev <= tol * sigma:
            break
    return float(np.linalg.norm(W @ v)), v


class SpectralProjector:
    """Rescales every weight matrix to spectral norm <= lam, keeping warm-start vectors."""

    def __init__(self, lam: float = 1.0, iters: int = 50, seed: int = 0, tol: float = 1e-9):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.lam, self.iters, self.seed, self.tol = lam, iters, seed, tol
        self._vecs = {}

    def __call__(self, m: Mlp) -> Mlp:
        for k, W in enumerate(m.weights):
            sigma, self._vecs[k] = spectral_norm(W, self.iters, self.seed + k, self._vecs.get(k), self.tol)
            scale = max(sigma / self.lam, 1.0)
            if scale > 1.0:
                W /= scale
        return m


def project_weights(m: Mlp, lam: float = 1.0, iters: int = 50) -> Mlp:
    """``W <- W / max(||W||_2 / lam, 1)`` for every layer, in place; biases untouched."""
    return SpectralProjector(lam, iters)(m)


def save_mlp(m: Mlp, path, **header) -> None:
    Path(path).write_text(json.dumps(dict(header=header, mlp=m.to_dict())))


def load_mlp(path) -> tuple[Mlp, dict]:
    d = json.loads(Path(path).read_text())
    return Mlp.from_dict(d["mlp"]), d["header"]
