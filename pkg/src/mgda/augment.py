"""Goal data augmentation: swapped (SGDA), temporal (TGDA) and model-based (MGDA),
and an oracle audit of the diversity / optimality / reachability principles.

Every strategy works on a whole relabeled batch at once and only ever
replaces goals; states and actions pass through untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import env
from .data import Batch, ConfigError, OfflineDataset, sample_relabeled
from .env import DISCRETE

STRATEGIES = ("none", "sgda", "tgda", "mgda")
REACH_CHECKS = ("candidate_action", "literal_alg1", "off")
ORIGINAL, SGDA, TGDA, MGDA = range(4)
PROVENANCE = ("original", "sgda", "tgda", "mgda")


@dataclass
class AugmentConfig:
    strategy: str = "none"
    eps_prob: float = 0.5
    delta: float = env.DEFAULT_DELTA
    reach_check: str = "candidate_action"
    retries: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if not 0.0 <= self.eps_prob <= 1.0:
            raise ConfigError("eps_prob must lie in [0, 1]")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.reach_check not in REACH_CHECKS:
            raise ConfigError(f"reach_check must be one of {REACH_CHECKS}")
        if self.retries < 1:
            raise ConfigError("retries must be >= 1")


@dataclass
class AugmentedBatch:
    base: Batch
    goal: np.ndarray
    provenance: np.ndarray
    source_traj: np.ndarray  # trajectory the goal came from
    nearby: np.ndarray  # flat index of the nearby state u, -1 if none
    attempts: int = 0  # candidates examined by MGDA

    def __len__(self):
        return len(self.goal)

    def __getitem__(self, k):
        nb = None
        if self.nearby[k] >= 0:
            nb = int(self.nearby[k])
        return AugmentedSample(self.base[k], self.goal[k], PROVENANCE[self.provenance[k]],
                               int(self.source_traj[k]), nb)

    @property
    def augmented(self) -> np.ndarray:
        return self.provenance != ORIGINAL


@dataclass
class AugmentedSample:
    base: object
    goal: np.ndarray
    provenance: str
    source_traj: int
    nearby_state: int | None = None


class CandidatePool:
    """Two-stage uniform draws inside a cluster: a distinct goal point of the
    cluster, then one of the dataset states sitting on that point."""

    def __init__(self, ds: OfflineDataset, ci):
        f = ds.flat()
        if len(ci.labels) != len(f["goals"]):
            raise ConfigError("cluster index does not match the dataset")
        _, first, pid = np.unique(f["goals"], axis=0, return_index=True, return_inverse=True)
        pid = pid.reshape(-1)
        n_pts = len(first)
        pt_label = ci.labels[first]
        self.pt_order = np.argsort(pt_label, kind="stable")
        self.clu_count = np.bincount(pt_label, minlength=ci.C)
        self.clu_start = np.concatenate([[0], np.cumsum(self.clu_count)[:-1]])
        self.entry_order = np.argsort(pid, kind="stable")
        self.pt_count = np.bincount(pid, minlength=n_pts)
        self.pt_start = np.concatenate([[0], np.cumsum(self.pt_count)[:-1]])
        self.point_of = pid

    def draw(self, clusters, rng) -> np.ndarray:
        clusters = np.asarray(clusters)
        n = len(clusters)
        count = self.clu_count[clusters]
        if np.any(count == 0):
            raise ConfigError("empty cluster")
        p = self.pt_order[self.clu_start[clusters] + np.floor(rng.random(n) * count).astype(np.int64)]
        return self.entry_order[self.pt_start[p] + np.floor(rng.random(n) * self.pt_count[p]).astype(np.int64)]


def later_goal(ds: OfflineDataset, entries, rng) -> np.ndarray:
    """Flat index of a state strictly after each entry in its trajectory
    (the entry itself when it is terminal)."""
    f = ds.flat()
    entries = np.asarray(entries)
    remaining = f["T"][f["traj"][entries]] - f["t"][entries]
    off = 1 + np.floor(rng.random(len(entries)) * remaining).astype(np.int64)
    return np.where(remaining > 0, entries + off, entries)


class Augmenter:
    """Applies one strategy to relabeled batches.

    ``ci`` is required for TGDA and MGDA, ``model`` for MGDA.
    """

    def __init__(self, ds: OfflineDataset, cfg: AugmentConfig, ci=None, model=None):
        self.ds, self.cfg, self.ci, self.model = ds, cfg, ci, model
        s = cfg.strategy
        if s in ("tgda", "mgda") and ci is None:
            raise ConfigError(f"{s} needs a cluster index (run cluster first)")
        if s == "mgda" and model is None and cfg.reach_check != "off":
            raise ConfigError("mgda needs a dynamics model (run fit-dynamics first)")
        self.pool = CandidatePool(ds, ci) if s in ("tgda", "mgda") else None
        self._pred_next = None
        if s == "mgda" and cfg.reach_check == "candidate_action":
            f = ds.flat()
            self._pred_next = f["goals"] + model.predict(f["states"], f["actions"])
        self.attempts = 0
        self.accepted = 0

    def __call__(self, batch: Batch, rng: np.random.Generator) -> AugmentedBatch:
        n = len(batch)
        f = self.ds.flat()
        goal = batch.goal.copy()
        prov = np.zeros(n, dtype=np.int64)
        src = batch.traj.copy()
        nearby = np.full(n, -1, dtype=np.int64)
        out = AugmentedBatch(batch, goal, prov, src, nearby)
        if self.cfg.strategy == "none":
            return out
        chosen = np.flatnonzero(rng.random(n) < self.cfg.eps_prob)
        if not len(chosen):
            return out
        if self.cfg.strategy == "sgda":
            self._sgda(batch, chosen, out, rng)
            return out
        labels = self.ci.labels[f["offsets"][batch.traj[chosen]] + batch.i[chosen]]
        if self.cfg.strategy == "tgda":
            u = self.pool.draw(labels, rng)
            ok = np.ones(len(chosen), bool)
        else:
            u, ok = self._mgda_candidates(batch, chosen, labels, rng)
        rows, u = chosen[ok], u[ok]
        j = later_goal(self.ds, u, rng)
        goal[rows] = f["goals"][j]
        prov[rows] = TGDA if self.cfg.strategy == "tgda" else MGDA
        src[rows] = f["traj"][u]
        nearby[rows] = u
        return out

    def _sgda(self, batch, chosen, out, rng):
        f = self.ds.flat()
        n_traj = len(self.ds)
        if n_traj < 2:
            return
        r = rng.integers(n_traj - 1, size=len(chosen))
        other = r + (r >= batch.traj[chosen])
        t = np.floor(rng.random(len(chosen)) * (f["T"][other] + 1)).astype(np.int64)
        out.goal[chosen] = f["goals"][f["offsets"][other] + t]
        out.provenance[chosen] = SGDA
        out.source_traj[chosen] = other

    def _mgda_candidates(self, batch, chosen, labels, rng):
        """Up to ``retries`` candidates per sample; keep the first that passes the
        one-step reachability test against the sample's goal."""
        f = self.ds.flat()
        cfg = self.cfg
        g = batch.goal[chosen]
        if cfg.reach_check == "literal_alg1":
            disp = self.model.predict(batch.state[chosen], batch.action[chosen])
        u = np.full(len(chosen), -1, dtype=np.int64)
        pending = np.arange(len(chosen))
        for _ in range(cfg.retries):
            if not len(pending):
                break
            cand = self.pool.draw(labels[pending], rng)
            self.attempts += len(pending)
            if cfg.reach_check == "off":
                ok = np.ones(len(pending), bool)
            elif cfg.reach_check == "candidate_action":
                ok = np.linalg.norm(g[pending] - self._pred_next[cand], axis=1) < cfg.delta
            else:
                ok = np.linalg.norm(g[pending] - f["goals"][cand] - disp[pending], axis=1) < cfg.delta
            u[pending[ok]] = cand[ok]
            pending = pending[~ok]
        self.accepted += int(np.sum(u >= 0))
        return u, u >= 0

    @property
    def yield_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else float("nan")


def _single(sample, ds, cfg, rng, ci=None, model=None) -> AugmentedSample:
    b = Batch(np.asarray(sample.state)[None], np.asarray(sample.action)[None], np.asarray(sample.goal, float)[None],
              np.array([sample.traj_index]), np.array([sample.t]), np.array([sample.i]))
    return Augmenter(ds, cfg, ci, model)(b, rng)[0]


def sgda(sample, ds: OfflineDataset, rng, eps_prob: float = 0.5) -> AugmentedSample:
    return _single(sample, ds, AugmentConfig("sgda", eps_prob), rng)


def tgda(sample, ds: OfflineDataset, ci, rng, eps_prob: float = 0.5) -> AugmentedSample:
    return _single(sample, ds, AugmentConfig("tgda", eps_prob), rng, ci)


def mgda(sample, ds: OfflineDataset, ci, model, cfg: AugmentConfig, rng) -> AugmentedSample:
    if cfg.strategy != "mgda":
        cfg = AugmentConfig("mgda", cfg.eps_prob, cfg.delta, cfg.reach_check, cfg.retries, cfg.seed)
    return _single(sample, ds, cfg, rng, ci, model)


# -- principle audit ----------------------------------------------------------

THRESHOLDS = dict(diversity=0.0, optimality=0.9, reachability=0.95)


@dataclass
class PrincipleReport:
    strategy: str
    n_augmented: int
    n_drawn: int
    diversity: float
    optimality: float
    reachability: float
    verdict: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(strategy=self.strategy, n_augmented=self.n_augmented, n_drawn=self.n_drawn,
                    diversity=self.diversity, optimality=self.optimality,
                    reachability=self.reachability, verdict=self.verdict)


def principle_metrics(spec, states, actions, goals, source_traj, dist=None):
    """Diversity, optimality (among reachable goals) and reachability of augmented
    (state, action, goal) triples on a discrete maze."""
    if spec.kind != DISCRETE:
        raise ConfigError("principle audit needs a discrete maze (exact oracles)")
    if dist is None:
        dist = env.distance_matrix(spec)
    if len(goals) == 0:
        return float("nan"), float("nan"), float("nan")
    idx = _cell_ids(spec)
    s_cells = np.rint(states).astype(np.int64)
    g_cells = np.rint(goals).astype(np.int64)
    si = idx[s_cells[:, 1], s_cells[:, 0]]
    gi = idx[g_cells[:, 1], g_cells[:, 0]]
    nxt = env.step_batch(spec, s_cells, actions)
    ni = idx[nxt[:, 1], nxt[:, 0]]
    d = dist[si, gi]
    reach = d >= 0
    optimal = reach & (dist[ni, gi] == np.maximum(d - 1, 0))
    reachability = float(reach.mean())
    optimality = float(optimal[reach].mean()) if reach.any() else float("nan")
    goals_by_state, trajs_by_state = {}, {}
    for s, g, tr in zip(si.tolist(), gi.tolist(), np.asarray(source_traj).tolist()):
        goals_by_state.setdefault(s, set()).add(g)
        trajs_by_state.setdefault(s, set()).add(tr)
    diverse = [len(goals_by_state[s]) >= 2 and len(trajs_by_state[s]) >= 2 for s in goals_by_state]
    return float(np.mean(diverse)), optimality, reachability


def _cell_ids(spec):
    idx = np.full(spec.grid.shape, -1, dtype=np.int64)
    for n, (i, j) in enumerate(spec.free_cells):
        idx[j, i] = n
    return idx


def verdict(diversity, optimality, reachability) -> dict:
    ok = lambda v, cmp: bool(np.isfinite(v) and cmp(v))  # noqa: E731
    return dict(
        diversity=ok(diversity, lambda v: v > THRESHOLDS["diversity"]),
        optimality=ok(optimality, lambda v: v >= THRESHOLDS["optimality"]),
        reachability=ok(reachability, lambda v: v >= THRESHOLDS["reachability"]),
    )


def audit_principles(strategy: str, ds: OfflineDataset, spec, n_draws: int, rng, ci=None, model=None,
                     cfg: AugmentConfig | None = None, batch: int = 4096, max_rounds: int = 200) -> PrincipleReport:
    """Score ``n_draws`` augmented samples (provenance != original) with BFS oracles."""
    if spec.kind != DISCRETE:
        raise ConfigError("principle audit needs a discrete maze (exact oracles)")
    base = cfg or AugmentConfig()
    cfg = AugmentConfig(strategy, base.eps_prob, base.delta, base.reach_check, base.retries, base.seed)
    aug = Augmenter(ds, cfg, ci, model)
    cols = dict(s=[], a=[], g=[], src=[])
    got = drawn = 0
    if strategy != "none":
        for _ in range(max_rounds):
            out = aug(sample_relabeled(ds, batch, rng), rng)
            drawn += len(out)
            m = out.augmented
            cols["s"].append(out.base.state[m])
            cols["a"].append(out.base.action[m])
            cols["g"].append(out.goal[m])
            cols["src"].append(out.source_traj[m])
            got += int(m.sum())
            if got >= n_draws:
                break
    if got:
        s, a, g, src = (np.concatenate(cols[k])[:n_draws] for k in ("s", "a", "g", "src"))
        div, opt, reach = principle_metrics(spec, s, a, g, src)
    else:
        div = opt = reach = float("nan")
    return PrincipleReport(strategy, min(got, n_draws), drawn, div, opt, reach, verdict(div, opt, reach))


def corner_controllers(spec, room_x, span: int = 2) -> list:
    """Down-right sweeps inside one rectangular room: every start in the room's
    top-left ``span x span`` block paired with every end in its bottom-right block.

    ``room_x`` is the inclusive column range of the room; rows are all interior rows.
    """
    from .data import WaypointController

    x0, x1 = room_x
    y0, y1 = 1, spec.grid.shape[0] - 2
    starts = [(x, y) for y in range(y0, y0 + span) for x in range(x0, x0 + span)]
    ends = [(x, y) for y in range(y1 - span + 1, y1 + 1) for x in range(x1 - span + 1, x1 + 1)]
    return [WaypointController(f"r{x0}_{a[0]}{a[1]}_{b[0]}{b[1]}", [a, b]) for a in starts for b in ends]


def two_room_dataset(n_per_controller: int = 10, seed: int = 0):
    """Discrete walled two-room maze with noiseless down-right sweeps in each room."""
    from .data import collect

    spec = env.load_maze("two_room", DISCRETE)
    ctrls = corner_controllers(spec, (1, 2)) + corner_controllers(spec, (4, 5))
    T = 4 * spec.grid.shape[0]
    return collect(spec, ctrls, n_per_controller * len(ctrls), T, seed, noise=0.0)
