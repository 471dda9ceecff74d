"""Config-driven stages shared by the command line and the acceptance suite.

Every function here is pure given its config and seeds; persistence lives in
the CLI.
"""
from __future__ import annotations

import numpy as np

from . import augment, cluster, data, dynmodel, env, evaluate, policy
from .augment import AugmentConfig
from .data import ConfigError

HELD_OUT_SEED_OFFSET = 1_000_000


def maze_spec(cfg) -> env.MazeSpec:
    m = cfg["maze"]
    return env.load_maze(m["name"], m["kind"])


def controllers(cfg, spec):
    m = cfg["maze"]
    return data.leg_controllers(spec, m["legs"], cuts=m["cuts"], reverse_prob=m["reverse_prob"])


def make_dataset(cfg, n_traj=None, seed=None) -> data.OfflineDataset:
    spec = maze_spec(cfg)
    d = cfg["data"]
    return data.collect(spec, controllers(cfg, spec), d["n_traj"] if n_traj is None else n_traj, d["T"],
                        d["seed"] if seed is None else seed, d["noise"])


def held_out_tuples(cfg, ds: data.OfflineDataset):
    """Transitions from fresh trajectories whose seeds never overlap the training set."""
    d = cfg["data"]
    n = max(1, int(round(cfg["dynamics"]["held_out_frac"] * len(ds))))
    fresh = data.collect(ds.maze, controllers(cfg, ds.maze), n, d["T"], ds.seed + HELD_OUT_SEED_OFFSET, d["noise"])
    return data.transition_tuples(fresh)


def fit_model(cfg, ds, constrained=None, seed=None):
    dc = cfg["dynamics"]
    constrained = dc["constrained"] if constrained is None else constrained
    m, _ = dynmodel.fit_dynamics(
        data.transition_tuples(ds), ds.maze, lam=dc["lam"], alpha_slack=dc["alpha_slack"], epochs=dc["epochs"],
        lr=dc["lr"], seed=dc["seed"] if seed is None else seed, hidden=tuple(dc["hidden"]), batch=dc["batch"],
        constrained=constrained)
    return m


def certify(cfg, m, ds, seed=0) -> dynmodel.LipschitzCertificate:
    return dynmodel.verify_theorem1(m, held_out_tuples(cfg, ds), seed=seed)


def fit_clusters(cfg, ds, seed=None) -> cluster.ClusterIndex:
    c = cfg["cluster"]
    C = c["C"] or cluster.default_clusters(ds.maze.name, ds.maze.n_free)
    return cluster.cluster_dataset(ds, C, c["max_iters"], c["seed"] if seed is None else seed)


def augment_config(cfg, strategy=None) -> AugmentConfig:
    a = cfg["augment"]
    return AugmentConfig(strategy or a["strategy"], a["eps_prob"], a["delta"], a["reach_check"], a["retries"], a["seed"])


def weight_scheme(cfg) -> policy.WeightScheme:
    return policy.WeightScheme(cfg["weights"]["kind"], cfg["weights"]["gamma"])


def train_config(cfg) -> policy.TrainConfig:
    t = cfg["train"]
    return policy.TrainConfig(steps=t["steps"], lr=t["lr"], batch=t["batch"], hidden=tuple(t["hidden"]),
                              gamma_geom=t["gamma_geom"])


def train_policy(cfg, ds, strategy=None, ci=None, model=None, seed=None) -> policy.Policy:
    return policy.train(ds, augment_config(cfg, strategy), train_config(cfg), weight_scheme(cfg),
                        cfg["train"]["seed"] if seed is None else seed, ci, model)


def stitching_pairs(cfg, ds, seed=None):
    e = cfg["eval"]
    return evaluate.make_stitching_pairs(ds.maze, ds, e["n_pairs"], e["delta"], e["seed"] if seed is None else seed)


def in_distribution_pairs(cfg, ds, seed=None):
    e = cfg["eval"]
    return evaluate.make_in_distribution_pairs(ds.maze, ds, e["n_pairs"], e["seed"] if seed is None else seed)


def evaluate_policy(cfg, p, spec, pairs) -> evaluate.EvalReport:
    e = cfg["eval"]
    return evaluate.rollout_success(p, spec, pairs, e["T_max"], e["delta"], e["n_boot"], e["seed"])


def wall_stress_tuples(spec, n: int, tunnel_prob: float = 0.2, seed: int = 0):
    """Uniform-random transitions on a discrete maze in which a push into a
    one-cell-thick wall lands in the free cell behind it with ``tunnel_prob``.

    Returns (states, actions, next goals, tunnel mask).
    """
    if spec.kind != env.DISCRETE:
        raise ConfigError("wall-stress tuples need a discrete maze")
    rng = np.random.default_rng(seed)
    cells = np.array(spec.free_cells, dtype=np.int64)
    s = cells[rng.integers(len(cells), size=n)]
    a = rng.integers(env.N_DISCRETE_ACTIONS, size=n)
    nxt = env.step_batch(spec, s, a).copy()
    move = env.MOVES[a]
    wall, behind = s + move, s + 2 * move
    rows, cols = spec.grid.shape
    inside = (behind[:, 0] >= 0) & (behind[:, 0] < cols) & (behind[:, 1] >= 0) & (behind[:, 1] < rows)
    behind_c = np.where(inside[:, None], behind, s)
    through = (a != env.STAY) & spec.grid[wall[:, 1], wall[:, 0]] & ~spec.grid[behind_c[:, 1], behind_c[:, 0]] & inside
    tunnel = through & (rng.random(n) < tunnel_prob)
    nxt[tunnel] = behind[tunnel]
    return s, a, nxt.astype(float), tunnel


# -- principle audit -------------------------------------------------------------

def audit_setup(cfg):
    """Walled two-room dataset, its dynamics model and a clustering in which the
    wall cuts through clusters."""
    a = cfg["audit"]
    ds = augment.two_room_dataset(a["n_per_controller"], seed=cfg["data"]["seed"])
    m, _ = dynmodel.fit_dynamics(data.transition_tuples(ds), ds.maze, epochs=a["dyn_epochs"], seed=0)
    ci = cluster.cluster_dataset(ds, a["C"], seed=a["cluster_seed"])
    return ds, m, ci


def straddling_clusters(ds, ci) -> int:
    """Clusters whose member cells fall into more than one connected component."""
    spec = ds.maze
    comp = _components(spec)
    cells = spec.cells_of(ds.flat()["goals"])
    ids = np.array([comp[tuple(c)] for c in cells])
    return sum(len(np.unique(ids[ci.labels == k])) > 1 for k in range(ci.C))


def _components(spec) -> dict:
    comp, n = {}, 0
    for c in spec.free_cells:
        if c in comp:
            continue
        for other in env._bfs(spec, c):
            comp[other] = n
        n += 1
    return comp


def run_audit(cfg, strategies=("sgda", "tgda", "mgda"), setup=None) -> list[augment.PrincipleReport]:
    a = cfg["audit"]
    ds, m, ci = setup or audit_setup(cfg)
    base = AugmentConfig("none", a["eps_prob"], a["delta"], cfg["augment"]["reach_check"], cfg["augment"]["retries"])
    return [augment.audit_principles(s, ds, ds.maze, a["n_draws"], np.random.default_rng(a["seed"]), ci=ci, model=m,
                                     cfg=base) for s in strategies]


# -- occupancy check -------------------------------------------------------------

def tabular_behaviors(spec) -> dict:
    """Two biased random walks: one drifting down-right, one up-left."""
    n = spec.n_free
    return {
        "h0": np.tile([0.1, 0.35, 0.1, 0.35, 0.1], (n, 1)),
        "h1": np.tile([0.35, 0.1, 0.35, 0.1, 0.1], (n, 1)),
    }


def occupancy_setup(cfg, maze="open5", C=None):
    t = cfg["theorems"]
    spec = env.load_maze(maze, env.DISCRETE)
    beh = tabular_behaviors(spec)
    ctrls = [data.TabularController(h, p) for h, p in sorted(beh.items())]
    ds = data.collect(spec, ctrls, t["n_traj"], t["T"], t["seed"])
    m, _ = dynmodel.fit_dynamics(data.transition_tuples(ds), spec, epochs=t["dyn_epochs"], seed=t["seed"])
    ci = cluster.cluster_dataset(ds, C or t["C"], seed=t["seed"])
    return spec, ds, m, ci, beh


def singleton_clusters(ds) -> cluster.ClusterIndex:
    pts = ds.flat()["goals"]
    return cluster.kmeans_fit(pts, len(np.unique(pts, axis=0)), seed=0)


def run_distribution_check(cfg, setup=None, ci=None, filtered=True, queries=None) -> evaluate.Theorem2Report:
    t = cfg["theorems"]
    spec, ds, m, ci0, beh = setup or occupancy_setup(cfg)
    return evaluate.theorem2_check(spec, ds, ci or ci0, m, beh, t["gamma"], t["n_samples"], t["seed"],
                                   delta=t["delta"], filtered=filtered, queries=queries)


# -- size sweep ------------------------------------------------------------------

def sweep(cfg, log=None) -> dict:
    """Stitching success for every (dataset size multiple, strategy), averaged over seeds."""
    s = cfg["sweep"]
    base_n = cfg["data"]["n_traj"]
    out = {}
    for size in s["sizes"]:
        rates = {k: [] for k in s["strategies"]}
        for seed in s["seeds"]:
            ds = make_dataset(cfg, n_traj=size * base_n, seed=cfg["data"]["seed"] + 1000 * seed)
            pairs = stitching_pairs(cfg, ds, seed=seed)
            need = set(s["strategies"]) & {"tgda", "mgda"}
            ci = fit_clusters(cfg, ds) if need else None
            m = fit_model(cfg, ds) if "mgda" in need else None
            for strat in s["strategies"]:
                p = train_policy(cfg, ds, strat, ci, m, seed=seed)
                rates[strat].append(evaluate_policy(cfg, p, ds.maze, pairs).success_rate)
                if log:
                    log(f"size {size}x seed {seed} {strat}: {rates[strat][-1]:.3f}")
        out[size] = {k: float(np.mean(v)) for k, v in rates.items()}
    return out


def check_prerequisites(strategy, ci, model):
    if strategy in ("tgda", "mgda") and ci is None:
        raise ConfigError("no cluster index: run cluster first")
    if strategy == "mgda" and model is None:
        raise ConfigError("no dynamics model: run fit-dynamics first")
