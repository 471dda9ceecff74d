"""One-step residual dynamics model trained with per-sample slack weights and
spectral-norm projection, plus the empirical smoothness certificate."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import env
from .data import maze_from_header, _maze_header
from .env import CONTINUOUS, DISCRETE, MazeSpec
from .numerics import Adam, Mlp, SpectralProjector, adam_for

log = logging.getLogger(__name__)

EPS_PERCENTILE = 95.0


class Featurizer:
    """Maps (state, action) to standardized network inputs.

    Continuous: (x, y, vx, vy, fx, fy).  Discrete: one-hot cell and one-hot
    action.  Every column is standardized with training statistics; constant
    columns keep unit scale.
    """

    def __init__(self, spec: MazeSpec, mean=None, std=None):
        self.spec = spec
        if spec.kind == DISCRETE:
            self._cell_id = np.full(spec.grid.shape, -1, dtype=np.int64)
            for n, (i, j) in enumerate(spec.free_cells):
                self._cell_id[j, i] = n
        self.mean = None if mean is None else np.asarray(mean, float)
        self.std = None if std is None else np.asarray(std, float)

    @property
    def dim(self) -> int:
        if self.spec.kind == CONTINUOUS:
            return 6
        return self.spec.n_free + env.N_DISCRETE_ACTIONS

    def raw(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, float))
        if self.spec.kind == CONTINUOUS:
            return np.concatenate([states, np.atleast_2d(np.asarray(actions, float))], axis=1)
        cells = np.rint(states).astype(np.int64)
        out = np.zeros((len(states), self.dim))
        out[np.arange(len(states)), self._cell_id[cells[:, 1], cells[:, 0]]] = 1.0
        out[np.arange(len(states)), self.spec.n_free + np.asarray(actions, np.int64).reshape(-1)] = 1.0
        return out

    def fit(self, states, actions) -> "Featurizer":
        x = self.raw(states, actions)
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std > 1e-8, std, 1.0)
        return self

    def __call__(self, states, actions) -> np.ndarray:
        return (self.raw(states, actions) - self.mean) / self.std


@dataclass
class SlackWeights:
    lambda_n: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return _sigmoid(self.lambda_n)


@dataclass
class LipschitzCertificate:
    epsilon: float
    K_env: float
    Delta: float
    bound_violation_rate: float
    n_probes: int
    layer_norms: list = field(default_factory=list)
    max_violation: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class DynamicsModel:
    def __init__(self, net: Mlp, feat: Featurizer, lam: float | None, train_report: dict | None = None):
        self.net = net
        self.feat = feat
        self.lam = lam
        self.train_report = train_report or {}

    @property
    def spec(self) -> MazeSpec:
        return self.feat.spec

    def predict(self, states, actions) -> np.ndarray:
        """Predicted goal-space displacement; next goal is phi(s) + this."""
        return self.net.forward(self.feat(states, actions))

    def layer_norms(self) -> list[float]:
        return [float(np.linalg.norm(W, 2)) for W in self.net.weights]

    def lipschitz_bound(self) -> float:
        """Global bound on the slope w.r.t. the raw state (continuous models)."""
        n_state = self.spec.state_dim
        return self.net.lipschitz_bound() * float(np.max(1.0 / self.feat.std[:n_state]))

    def save(self, path) -> None:
        header = dict(lam=self.lam, maze=_maze_header(self.spec), feat_mean=self.feat.mean.tolist(),
                      feat_std=self.feat.std.tolist(), train_report=self.train_report)
        Path(path).write_text(json.dumps(dict(header=header, mlp=self.net.to_dict())))

    @classmethod
    def load(cls, path) -> "DynamicsModel":
        d = json.loads(Path(path).read_text())
        h = d["header"]
        feat = Featurizer(maze_from_header(h["maze"]), h["feat_mean"], h["feat_std"])
        return cls(Mlp.from_dict(d["mlp"]), feat, h["lam"], h["train_report"])


def predict_displacement(m: DynamicsModel, s, a) -> np.ndarray:
    s = np.asarray(s)
    out = m.predict(s, np.asarray(a)[None] if s.ndim == 1 else a)
    return out[0] if s.ndim == 1 else out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def slack_loss(net: Mlp, x, target, lam_n, alpha: float):
    """Mean of sigma(l_n)*||target - f(x)||^2 - alpha*sigma(l_n) and its gradients.

    Returns (loss, net tape, d loss / d lam_n).
    """
    B = len(x)
    pred = net.forward(x)
    diff = pred - target
    r2 = np.sum(diff * diff, axis=1)
    sig = _sigmoid(lam_n)
    loss = float(np.mean(sig * r2 - alpha * sig))
    tape = net.backward((2.0 / B) * sig[:, None] * diff)
    dlam = sig * (1.0 - sig) * (r2 - alpha) / B
    return loss, tape, dlam


def mse_loss(net: Mlp, x, target):
    B = len(x)
    diff = net.forward(x) - target
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return loss, net.backward((2.0 / B) * diff)


def fit_dynamics(tuples, spec: MazeSpec, lam: float = 1.0, alpha_slack: float = 0.1,
                 epochs: int = 30, lr: float = 1e-3, seed: int = 0, hidden=(64, 64),
                 batch: int = 256, slack_lr: float = 0.05, constrained: bool = True):
    """Fit f_hat on (s, a, g_next) tuples.

    With ``constrained`` the objective carries per-sample slack weights and
    every optimizer step is followed by the spectral-norm projection; without
    it this is plain mean-squared error.
    """
    states, actions, g_next = (np.asarray(v) for v in tuples)
    n = len(states)
    if n < 2:
        raise ValueError("need at least two training tuples")
    if constrained:
        if lam is None or lam <= 0:
            raise ValueError("lambda must be positive")
        if alpha_slack <= 0:
            raise ValueError("alpha_slack must be > 0: without it every slack weight collapses to zero")
    rng = np.random.default_rng(seed)
    feat = Featurizer(spec).fit(states, actions)
    x = feat(states, actions)
    target = g_next - env.phi(states)
    net = Mlp([feat.dim, *hidden, 2], "relu", rng=rng)
    opt = adam_for(net, lr=lr)
    slack = SlackWeights(np.zeros(n))
    slack_opt = Adam([slack.lambda_n], lr=slack_lr, names=["slack"])
    project = SpectralProjector(lam, seed=seed) if constrained else None
    if project:
        project(net)

    def objective():
        if constrained:
            return slack_loss(net, x, target, slack.lambda_n, alpha_slack)[0]
        return mse_loss(net, x, target)[0]

    history = [objective()]
    last_finite = history[0]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            if constrained:
                loss, tape, dlam = slack_loss(net, x[idx], target[idx], slack.lambda_n[idx], alpha_slack)
                full = np.zeros(n)
                full[idx] = dlam
            else:
                loss, tape = mse_loss(net, x[idx], target[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"dynamics training diverged (last finite loss {last_finite:.6g})")
            last_finite = loss
            opt.step(tape.arrays())
            if constrained:
                slack_opt.step([full])
                project(net)
        history.append(objective())
        log.debug("dynamics epoch %d objective %.6g", epoch, history[-1])

    resid = np.linalg.norm(net.forward(x) - target, axis=1)
    report = dict(
        epsilon=float(np.percentile(resid, EPS_PERCENTILE)),
        loss_history=history,
        layer_norms=[float(np.linalg.norm(W, 2)) for W in net.weights],
        constrained=constrained,
        alpha_slack=alpha_slack if constrained else None,
    )
    model = DynamicsModel(net, feat, lam if constrained else None, report)
    return model, slack


def estimate_local_lipschitz(m: DynamicsModel, probes, radius: float, n_dirs: int = 32,
                             seed: int = 0) -> float:
    """Largest finite-difference slope of f_hat around the probe states.

    Continuous models: slopes along ``n_dirs`` random directions of length
    ``radius`` plus the spectral norm of the central-difference Jacobian.
    Discrete models: slopes towards every other free cell within ``radius``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    states, actions = (np.asarray(v) for v in probes)
    if len(states) == 0:
        return 0.0
    if m.spec.kind == DISCRETE:
        return _discrete_slope(m, states, actions, radius)
    rng = np.random.default_rng(seed)
    P, d = states.shape
    base = m.predict(states, actions)
    dirs = rng.standard_normal((P, n_dirs, d))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    moved = (states[:, None, :] + radius * dirs).reshape(-1, d)
    acts = np.repeat(actions, n_dirs, axis=0)
    out = m.predict(moved, acts).reshape(P, n_dirs, -1)
    slopes = np.linalg.norm(out - base[:, None], axis=2).max(axis=1) / radius
    h = radius / 2
    jac = np.empty((P, base.shape[1], d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        jac[:, :, k] = (m.predict(states + e, actions) - m.predict(states - e, actions)) / (2 * h)
    jnorm = np.linalg.norm(jac, ord=2, axis=(1, 2))
    return float(max(slopes.max(), jnorm.max()))


def _discrete_slope(m, states, actions, radius):
    cells = np.array(m.spec.free_cells, dtype=float)
    best = 0.0
    for s, a in zip(states, actions):
        dist = np.linalg.norm(cells - s, axis=1)
        near = cells[(dist > 0) & (dist <= radius)]
        if not len(near):
            continue
        out = m.predict(near, np.repeat(a, len(near)))
        here = m.predict(s[None], np.array([a]))
        best = max(best, float(np.max(np.linalg.norm(out - here, axis=1) / np.linalg.norm(near - s, axis=1))))
    return best


def verify_theorem1(m: DynamicsModel, held_out, K_env: float | None = None,
                    radius: float | None = None, seed: int = 0) -> LipschitzCertificate:
    """Check ||f - f_hat|| <= eps + (K + Delta) * ||phi(s_n) - g|| on held-out tuples."""
    states, actions, goals = (np.asarray(v) for v in held_out)
    if len(states) == 0:
        raise ValueError("held-out set is empty")
    spec = m.spec
    K = spec.k_env if K_env is None else K_env
    if radius is None:
        radius = 0.1 * spec.cell_size if spec.kind == CONTINUOUS else 1.0
    true_res = env.phi(env.step_batch(spec, states, actions)) - env.phi(states)
    lhs = np.linalg.norm(true_res - m.predict(states, actions), axis=1)
    eps = float(m.train_report["epsilon"])
    delta = estimate_local_lipschitz(m, (states, actions), radius, seed=seed)
    rhs = eps + (K + delta) * np.linalg.norm(env.phi(states) - goals, axis=1)
    viol = lhs > rhs
    return LipschitzCertificate(
        epsilon=eps, K_env=float(K), Delta=delta, bound_violation_rate=float(viol.mean()),
        n_probes=int(len(states)), layer_norms=m.layer_norms(),
        max_violation=float(np.max(lhs - rhs, initial=0.0)),
    )
