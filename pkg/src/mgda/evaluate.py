"""Rollout evaluation with bootstrap intervals, evaluation-pair construction,
exact discounted occupancies and the MGDA goal-distribution check."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import env
from .data import ConfigError, OfflineDataset
from .env import CONTINUOUS, DISCRETE

IN_DISTRIBUTION, STITCHING = "in_distribution", "stitching"
DEFAULT_T_MAX = {"umaze": 100, "medium": 200, "large": 400}


@dataclass
class EvalPair:
    start: np.ndarray
    goal: np.ndarray
    kind: str
    legs: tuple = ()


@dataclass
class EvalReport:
    success_rate: float
    ci_low: float
    ci_high: float
    n_episodes: int
    outcomes: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    kind: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def default_t_max(spec) -> int:
    return DEFAULT_T_MAX.get(spec.name, 100)


def bootstrap_ci(outcomes, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of 0/1 outcomes."""
    x = np.asarray(outcomes, float)
    if len(x) == 0:
        return float("nan"), float("nan")
    rng = np.random.default_rng(seed)
    means = x[rng.integers(len(x), size=(n_boot, len(x)))].mean(axis=1)
    lo, hi = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
    m = x.mean()
    return float(min(lo, m)), float(max(hi, m))


def rollout_success(p, spec, pairs, T_max: int | None = None, delta: float = env.DEFAULT_DELTA,
                    n_boot: int = 1000, seed: int = 0) -> EvalReport:
    """Greedy rollouts of every pair in lockstep; success once ||phi(s) - g|| < delta."""
    if not pairs:
        raise ValueError("no evaluation pairs")
    T_max = default_t_max(spec) if T_max is None else T_max
    s = np.array([pr.start for pr in pairs], dtype=float if spec.kind == CONTINUOUS else np.int64)
    g = np.array([pr.goal for pr in pairs], dtype=float)
    done = env.reached(s, g, delta)
    steps = np.where(done, 0, -1)
    for t in range(1, T_max + 1):
        live = np.flatnonzero(~done)
        if not len(live):
            break
        s[live] = env.step_batch(spec, s[live], p.act(s[live], g[live]))
        hit = live[env.reached(s[live], g[live], delta)]
        done[hit] = True
        steps[hit] = t
    lo, hi = bootstrap_ci(done, n_boot, seed)
    kinds = {pr.kind for pr in pairs}
    return EvalReport(float(done.mean()), lo, hi, len(pairs), done.astype(int).tolist(), steps.tolist(),
                      kinds.pop() if len(kinds) == 1 else "mixed")


# -- evaluation pairs ----------------------------------------------------------

@dataclass
class Leg:
    name: str
    trajs: np.ndarray
    start_cells: set
    end_cells: set
    cells: set


def dataset_legs(ds: OfflineDataset) -> list[Leg]:
    """Group trajectories by controller; a leg's regions are the cells its
    trajectories start in and the cells of their desired goals."""
    spec = ds.maze
    by = {}
    for k, tr in enumerate(ds.trajectories):
        by.setdefault(tr.controller_id, []).append(k)
    legs = []
    for name in sorted(by):
        ks = by[name]
        trs = [ds.trajectories[k] for k in ks]
        legs.append(Leg(
            name, np.array(ks),
            {tuple(spec.cell_of(tr.states[0][:2])) for tr in trs},
            {tuple(spec.cell_of(tr.desired_goal)) for tr in trs},
            set().union(*(map(tuple, spec.cells_of(tr.states[:, :2])) for tr in trs)),
        ))
    return legs


def adjacent(a: Leg, b: Leg) -> bool:
    return bool(a.cells & b.cells)


def covered_by_one_trajectory(ds: OfflineDataset, start, goal, delta: float) -> bool:
    """True if some trajectory passes through the start's cell and later comes
    within delta of the goal."""
    spec = ds.maze
    start_cell = np.asarray(spec.cell_of(np.asarray(start)[:2]))
    f = ds.flat()
    cells = np.asarray(spec.cells_of(f["goals"]))
    at_start = np.all(cells == start_cell, axis=1)
    near_goal = env.reached(f["states"], np.asarray(goal, float)[None], delta)
    for k in np.unique(f["traj"][at_start]):
        sl = slice(f["offsets"][k], f["offsets"][k + 1])
        first = np.flatnonzero(at_start[sl])[0]
        if near_goal[sl][first:].any():
            return True
    return False


def _pair_from(ds, rng, start_leg: Leg, goal_leg: Leg):
    k = int(rng.choice(start_leg.trajs))
    start = ds.trajectories[k].states[0].copy()
    goal = ds.trajectories[int(rng.choice(goal_leg.trajs))].desired_goal.copy()
    return start, goal


def make_stitching_pairs(spec, ds: OfflineDataset, n_pairs: int = 100, delta: float = env.DEFAULT_DELTA,
                         seed: int = 0, budget: int = 50) -> list[EvalPair]:
    """Start at a start region of one leg, goal at an end region of an adjacent
    leg; every pair is certified BFS-reachable and not covered by one trajectory."""
    legs = dataset_legs(ds)
    if len(legs) < 2:
        raise ConfigError("stitching pairs need a multi-leg dataset")
    combos = [(a, b) for a in legs for b in legs if a is not b and adjacent(a, b)]
    if not combos:
        raise ConfigError(f"no adjacent legs among {[l.name for l in legs]}")
    rng = np.random.default_rng(seed)
    cert = {}
    pairs = []
    for _ in range(n_pairs * budget):
        if len(pairs) == n_pairs:
            break
        a, b = combos[int(rng.integers(len(combos)))]
        start, goal = _pair_from(ds, rng, a, b)
        key = (spec.cell_of(start[:2]), tuple(goal))
        if key not in cert:
            reachable, _ = env.bfs_reachable(spec, start[:2], goal)
            cert[key] = reachable and not covered_by_one_trajectory(ds, start, goal, delta)
        if cert[key]:
            pairs.append(EvalPair(start, goal, STITCHING, (a.name, b.name)))
    if len(pairs) < n_pairs:
        raise ConfigError(f"could not certify {n_pairs} stitching pairs for legs {[(a.name, b.name) for a, b in combos]}")
    return pairs


def make_in_distribution_pairs(spec, ds: OfflineDataset, n_pairs: int = 100, seed: int = 0) -> list[EvalPair]:
    """Start state and desired goal of one logged trajectory."""
    rng = np.random.default_rng(seed)
    pairs = []
    for k in rng.integers(len(ds), size=n_pairs):
        tr = ds.trajectories[int(k)]
        pairs.append(EvalPair(tr.states[0].copy(), tr.desired_goal.copy(), IN_DISTRIBUTION, (tr.controller_id,)))
    return pairs


# -- exact occupancies and the MGDA distribution check ------------------------

@dataclass
class OccupancyTable:
    """Normalized discounted occupancies over free cells (indices of ``spec.free_cells``).

    ``sa[s, a]`` conditions on the first action, ``s[x]`` on the start state only.
    """
    gamma: float
    sa: np.ndarray  # (n, 5, n)
    s: np.ndarray  # (n, n)


def next_cell_index(spec) -> np.ndarray:
    """(n_free, 5) index of the cell reached by each action."""
    cells = np.array(spec.free_cells, dtype=np.int64)
    n = len(cells)
    out = np.empty((n, env.N_DISCRETE_ACTIONS), dtype=np.int64)
    for a in range(env.N_DISCRETE_ACTIONS):
        nxt = env.step_batch(spec, cells, np.full(n, a))
        out[:, a] = [spec.cell_index(c) for c in nxt]
    return out


def exact_occupancy(spec, behavior, gamma: float, tol: float = 1e-12) -> OccupancyTable:
    """(1 - gamma) * sum_t gamma^t P(s_t = g | s_0 = s[, a_0 = a]), t from 0,
    summed until gamma^t < tol and renormalized."""
    if spec.kind != DISCRETE:
        raise ConfigError("exact occupancies need a discrete maze")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    probs = np.asarray(behavior, float)
    n = spec.n_free
    if probs.shape != (n, env.N_DISCRETE_ACTIONS):
        raise ValueError(f"behavior must have shape ({n}, {env.N_DISCRETE_ACTIONS})")
    nxt = next_cell_index(spec)
    P = np.zeros((n, n))
    for a in range(env.N_DISCRETE_ACTIONS):
        np.add.at(P, (np.arange(n), nxt[:, a]), probs[:, a])
    acc = np.zeros((n, n))
    Pt = np.eye(n)
    c = 1.0
    while c >= tol:
        acc += c * Pt
        Pt = Pt @ P
        c *= gamma
    occ_s = acc / acc.sum(axis=1, keepdims=True)
    occ_sa = gamma * occ_s[nxt]
    occ_sa[np.arange(n), :, np.arange(n)] += 1.0 - gamma
    occ_sa /= occ_sa.sum(axis=2, keepdims=True)
    return OccupancyTable(gamma, occ_sa, occ_s)


@dataclass
class Theorem2Report:
    gamma: float
    n_samples: int
    n_accepted: int
    queries: list
    max_deviation: float
    mc_error: float
    eps_k: float
    L1: float
    L2: float
    c: float
    bound: float
    ratio: float  # max_deviation / (eps_k * L1), inf when the product is 0
    passed: bool
    filtered: bool
    per_query: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _posteriors(ds: OfflineDataset, names: list):
    """Empirical p(h | s, a) over logged transitions and p(h | x) over all states."""
    spec = ds.maze
    f = ds.flat()
    n, H = spec.n_free, len(names)
    hid = np.array([names.index(tr.controller_id) for tr in ds.trajectories])[f["traj"]]
    cell = np.array([spec.cell_index(c) for c in spec.cells_of(f["goals"])])
    tr = f["transitions"]
    N_sa = np.zeros((H, n, env.N_DISCRETE_ACTIONS))
    np.add.at(N_sa, (hid[tr], cell[tr], f["actions"][tr].astype(np.int64)), 1.0)
    N_x = np.zeros((H, n))
    np.add.at(N_x, (hid, cell), 1.0)
    return N_sa, N_x, hid, cell


def _categorical(rng, probs, rows) -> np.ndarray:
    """One draw per row index from the row distributions ``probs[rows]``."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(rows)) * cdf[rows, -1]
    return np.minimum((cdf[rows] <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def theorem2_check(spec, ds: OfflineDataset, ci, m, behaviors: dict, gamma: float = 0.9,
                   n_samples: int = 100_000, seed: int = 0, delta: float = 1.5, retries: int = 8,
                   queries=None, filtered: bool = True, c: float = 2.0) -> Theorem2Report:
    """Compare the population MGDA goal distribution with the one-step stitching
    distribution built from exact occupancies.

    ``behaviors`` maps controller ids of ``ds`` to their (n_free, 5) action tables.
    Each query is a (cell, action) pair; by default the three most logged ones.
    The Monte-Carlo estimate is conditioned on a candidate being accepted.
    """
    from .augment import CandidatePool

    if spec.kind != DISCRETE:
        raise ConfigError("the occupancy check needs a discrete maze")
    names = sorted(behaviors)
    tables = [exact_occupancy(spec, behaviors[h], gamma) for h in names]
    N_sa, N_x, hid, cell = _posteriors(ds, names)
    if np.any(N_x.sum(axis=0) == 0):
        raise ConfigError("dataset does not visit every free cell; posteriors p(h | x) undefined")
    p_h_x = N_x / N_x.sum(axis=0)  # (H, n)
    occ_s = np.stack([t.s for t in tables])  # (H, n, n)
    goal_given_x = np.einsum("hx,hxg->xg", p_h_x, occ_s)
    if queries is None:
        tot = N_sa.sum(axis=0)
        top = np.argsort(-tot.ravel(), kind="stable")[:3]
        queries = [(spec.free_cells[k // tot.shape[1]], int(k % tot.shape[1])) for k in top]
    f = ds.flat()
    pool = CandidatePool(ds, ci)
    pred_next = f["goals"] + m.predict(f["states"], f["actions"])
    cells_xy = np.array(spec.free_cells, dtype=float)
    dist = env.distance_matrix(spec)
    rng = np.random.default_rng(seed)
    per_query = []
    for q_cell, q_a in queries:
        s = spec.cell_index(q_cell)
        w_h = N_sa[:, s, q_a]
        if w_h.sum() == 0:
            raise ConfigError(f"query {q_cell}, action {q_a} never logged")
        p_h = w_h / w_h.sum()
        occ_q = np.stack([t.sa[s, q_a] for t in tables])  # (H, n)
        p1 = (p_h @ occ_q) @ goal_given_x
        h = _categorical(rng, p_h[None], np.zeros(n_samples, dtype=np.int64))
        w = _categorical(rng, occ_q, h)
        labels = ci.assign(cells_xy[w])
        u = np.full(n_samples, -1, dtype=np.int64)
        pending = np.arange(n_samples)
        for _ in range(retries):
            if not len(pending):
                break
            cand = pool.draw(labels[pending], rng)
            if filtered:
                ok = np.linalg.norm(cells_xy[w[pending]] - pred_next[cand], axis=1) < delta
            else:
                ok = np.ones(len(pending), bool)
            u[pending[ok]] = cand[ok]
            pending = pending[~ok]
        u = u[u >= 0]
        h_tilde = hid[u]
        g = _categorical(rng, occ_s.reshape(-1, spec.n_free), h_tilde * spec.n_free + cell[u])
        p_hat = np.bincount(g, minlength=spec.n_free) / max(len(u), 1)
        se = float(np.max(np.sqrt(p_hat * (1 - p_hat) / max(len(u), 1))))
        L1, L2 = _smoothness(occ_q, ci, f, cell, cells_xy, dist)
        per_query.append(dict(cell=list(q_cell), action=q_a, n_accepted=int(len(u)),
                              max_deviation=float(np.max(np.abs(p_hat - p1))), mc_error=se, L1=L1, L2=L2))
    eps_k = float(np.max(ci.eps_k))
    L1 = max(q["L1"] for q in per_query)
    L2 = max(q["L2"] for q in per_query)
    dev = max(q["max_deviation"] for q in per_query)
    se = max(q["mc_error"] for q in per_query)
    bound = c * eps_k * L1
    return Theorem2Report(
        gamma=gamma, n_samples=n_samples, n_accepted=sum(q["n_accepted"] for q in per_query),
        queries=[[list(qc), qa] for qc, qa in queries], max_deviation=dev, mc_error=se, eps_k=eps_k,
        L1=L1, L2=L2, c=c, bound=bound, ratio=dev / (eps_k * L1) if eps_k * L1 > 0 else float("inf"),
        passed=bool(dev <= bound + 3 * se), filtered=filtered, per_query=per_query,
    )


def _smoothness(occ_q, ci, f, cell, cells_xy, dist):
    """Largest |p(x) - p(y)| / ||x - y|| over distinct cells sharing a cluster,
    split by whether y is reachable from x (L1) or not (L2)."""
    L1 = L2 = 0.0
    for k in range(ci.C):
        members = np.unique(cell[ci.labels == k])
        if len(members) < 2:
            continue
        x, y = np.meshgrid(members, members, indexing="ij")
        off = x != y
        x, y = x[off], y[off]
        gap = np.linalg.norm(cells_xy[x] - cells_xy[y], axis=1)
        slope = np.max(np.abs(occ_q[:, x] - occ_q[:, y]), axis=0) / gap
        reach = dist[x, y] >= 0
        if reach.any():
            L1 = max(L1, float(slope[reach].max()))
        if (~reach).any():
            L2 = max(L2, float(slope[~reach].max()))
    return L1, L2
