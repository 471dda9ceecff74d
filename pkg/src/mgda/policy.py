"""Goal-conditioned weighted supervised learning (GCWSL) over relabeled and
augmented samples."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import env
from .augment import AugmentConfig, AugmentedBatch, Augmenter
from .data import ConfigError, OfflineDataset, maze_from_header, _maze_header, sample_relabeled
from .env import CONTINUOUS, DISCRETE
from .numerics import Mlp, adam_for

log = logging.getLogger(__name__)

GAUSSIAN_VAR = 0.1  # fixed variance of the continuous action likelihood
WEIGHT_KINDS = ("uniform", "discount")


@dataclass
class WeightScheme:
    kind: str = "discount"
    gamma: float = 0.99

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ConfigError(f"weight scheme must be one of {WEIGHT_KINDS}")
        if self.kind == "discount" and not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")


def weight(ws: WeightScheme, t, i):
    """Per-sample weight of a relabeled sample (state at t, goal from i >= t)."""
    t, i = np.asarray(t), np.asarray(i)
    if np.any(i < t):
        raise ValueError("relabel index must satisfy i >= t")
    if ws.kind == "uniform":
        out = np.ones(np.broadcast(t, i).shape)
    else:
        out = ws.gamma ** (i - t).astype(float)
    return float(out) if out.ndim == 0 else out


@dataclass
class TrainConfig:
    steps: int = 20_000
    lr: float = 3e-4
    batch: int = 256
    hidden: tuple = (64, 64)
    activation: str = "relu"
    gamma_geom: float | None = None
    probe_batch: int = 4096

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("steps >= 0, batch >= 1 and lr > 0 required")


class Policy:
    """pi(a | s, g): an MLP on standardized concat(state, goal)."""

    def __init__(self, net: Mlp, spec, mean, std, train_report=None):
        self.net, self.spec = net, spec
        self.mean, self.std = np.asarray(mean, float), np.asarray(std, float)
        self.train_report = train_report or {}

    @property
    def kind(self) -> str:
        return self.spec.kind

    def features(self, states, goals) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(np.asarray(states, float)), np.atleast_2d(np.asarray(goals, float))], axis=1)
        return (x - self.mean) / self.std

    def output(self, states, goals) -> np.ndarray:
        return self.net.forward(self.features(states, goals))

    def act(self, states, goals) -> np.ndarray:
        """Greedy actions for a batch: clamped mean or lowest-index argmax."""
        return head(self.kind, self.output(states, goals))

    def save(self, path) -> None:
        header = dict(kind=self.kind, maze=_maze_header(self.spec), feat_mean=self.mean.tolist(),
                      feat_std=self.std.tolist(), train_report=self.train_report)
        Path(path).write_text(json.dumps(dict(header=header, mlp=self.net.to_dict()), sort_keys=True))

    @classmethod
    def load(cls, path) -> "Policy":
        d = json.loads(Path(path).read_text())
        h = d["header"]
        return cls(Mlp.from_dict(d["mlp"]), maze_from_header(h["maze"]), h["feat_mean"], h["feat_std"],
                   h["train_report"])


def head(kind: str, out) -> np.ndarray:
    if kind == CONTINUOUS:
        return np.clip(out, -1.0, 1.0)
    return np.argmax(out, axis=-1)  # first maximum wins ties


def act(p: Policy, s, g):
    s = np.asarray(s)
    a = p.act(s[None] if s.ndim == 1 else s, np.asarray(g)[None] if s.ndim == 1 else g)
    return a[0] if s.ndim == 1 else a


def gcwsl_loss(p: Policy, states, goals, actions, w):
    """Weighted negative log-likelihood (up to constants) and its gradient tape.

    Continuous: w * ||mu - a||^2 / (2 var).  Discrete: w * cross-entropy.
    """
    w = np.asarray(w, float)
    B = len(w)
    if B == 0:
        raise ValueError("empty batch")
    out = p.output(states, goals)
    if p.kind == CONTINUOUS:
        diff = out - np.asarray(actions, float)
        per = np.sum(diff * diff, axis=1) / (2 * GAUSSIAN_VAR)
        upstream = (w / B)[:, None] * diff / GAUSSIAN_VAR
    else:
        a = np.asarray(actions, np.int64)
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        per = -logp[np.arange(B), a]
        probs = np.exp(logp)
        probs[np.arange(B), a] -= 1.0
        upstream = (w / B)[:, None] * probs
    loss = float(np.mean(w * per))
    if not np.isfinite(loss):
        raise FloatingPointError("policy loss is not finite")
    return loss, p.net.backward(upstream)


def batch_loss(p: Policy, batch: AugmentedBatch, ws: WeightScheme):
    """Loss on an augmented batch; weights use the base (t, i) of each sample."""
    b = batch.base
    return gcwsl_loss(p, b.state, batch.goal, b.action, weight(ws, b.t, b.i))


def init_policy(ds: OfflineDataset, cfg: TrainConfig, rng) -> Policy:
    spec = ds.maze
    f = ds.flat()
    x = np.concatenate([f["states"], f["goals"]], axis=1)
    std = x.std(axis=0)
    out_dim = 2 if spec.kind == CONTINUOUS else env.N_DISCRETE_ACTIONS
    net = Mlp([x.shape[1], *cfg.hidden, out_dim], cfg.activation, rng=rng)
    return Policy(net, spec, x.mean(axis=0), np.where(std > 1e-8, std, 1.0))


def train(ds: OfflineDataset, aug: AugmentConfig, cfg: TrainConfig, ws: WeightScheme, seed: int = 0,
          ci=None, model=None) -> Policy:
    """Sample relabeled batches, augment goals, take an Adam step on the GCWSL loss.

    Sampling and augmentation draw from separate streams, so a strategy with
    ``eps_prob = 0`` reproduces the unaugmented run exactly.
    """
    augmenter = Augmenter(ds, aug, ci, model)  # validates prerequisites before any work
    p = init_policy(ds, cfg, np.random.default_rng([seed, 0]))
    sample_rng = np.random.default_rng([seed, 1])
    aug_rng = np.random.default_rng([seed, 2, aug.seed])
    probe = sample_relabeled(ds, cfg.probe_batch, np.random.default_rng([seed, 3]), cfg.gamma_geom)
    pw = weight(ws, probe.t, probe.i)

    def probe_loss():
        return gcwsl_loss(p, probe.state, probe.goal, probe.action, pw)[0]

    initial = probe_loss()
    opt = adam_for(p.net, lr=cfg.lr)
    n_aug = 0
    for step in range(cfg.steps):
        batch = augmenter(sample_relabeled(ds, cfg.batch, sample_rng, cfg.gamma_geom), aug_rng)
        n_aug += int(batch.augmented.sum())
        _, tape = batch_loss(p, batch, ws)
        opt.step(tape.arrays())
        if step % 5000 == 0:
            log.debug("step %d probe loss %.5f", step, probe_loss())
    p.train_report = dict(
        initial_loss=initial, final_loss=probe_loss(), steps=cfg.steps, strategy=aug.strategy,
        augmented_fraction=n_aug / max(cfg.steps * cfg.batch, 1),
        mgda_yield=augmenter.yield_rate if aug.strategy == "mgda" else None,
        reach_check=aug.reach_check, weight_scheme=asdict(ws), seed=seed,
    )
    return p
