"""Scripted offline data collection, hindsight relabeling and dataset files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env
from .env import CONTINUOUS, DISCRETE, STAY, MazeSpec

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


# -- controllers -------------------------------------------------------------

@dataclass
class WaypointController:
    """Proportional-derivative tracking of a list of cell-centre waypoints.

    The first waypoint is the start cell.  Continuous rollouts hold position
    at the last waypoint once it is reached; discrete rollouts stop there.
    With ``reverse_prob`` a rollout runs the waypoint list backwards.
    """

    name: str
    waypoints: list
    kp: float = 4.0
    kd: float = 3.0
    switch_radius: float = 0.35
    start_jitter: float = 0.25
    reverse_prob: float = 0.0

    def validate(self, spec: MazeSpec) -> None:
        for c in self.waypoints:
            if not spec.is_free(*c):
                raise ConfigError(f"controller {self.name!r}: waypoint {tuple(c)} is inside a wall")
        if len(self.waypoints) < 2:
            raise ConfigError(f"controller {self.name!r}: needs at least two waypoints")

    def rollout(self, spec: MazeSpec, T: int, noise: float, rng: np.random.Generator):
        """Returns (states, actions, desired goal)."""
        wps = list(self.waypoints)
        if self.reverse_prob > 0 and rng.random() < self.reverse_prob:
            wps = wps[::-1]
        if spec.kind == DISCRETE:
            states, actions = self._rollout_discrete(spec, wps, T, noise, rng)
        else:
            states, actions = self._rollout_continuous(spec, wps, T, noise, rng)
        return states, actions, spec.cell_center(wps[-1])

    def _rollout_continuous(self, spec, wps, T, noise, rng):
        cs = spec.cell_size
        centers = [spec.cell_center(c) for c in wps]
        s = np.zeros(4)
        s[:2] = centers[0] + rng.uniform(-self.start_jitter, self.start_jitter, 2) * cs
        states, actions = [s], []
        k = 1
        for _ in range(T):
            p, v = s[:2], s[2:]
            while k < len(centers) - 1 and np.linalg.norm(centers[k] - p) < self.switch_radius * cs:
                k += 1
            a = self.kp * (centers[k] - p) - self.kd * v
            a = np.clip(np.clip(a, -1, 1) + noise * rng.standard_normal(2), -1, 1)
            s = env.step_batch(spec, s[None], a[None])[0]
            states.append(s)
            actions.append(a)
        return np.array(states), np.array(actions)

    def _rollout_discrete(self, spec, wps, T, noise, rng):
        s = np.array(wps[0], dtype=np.int64)
        states, actions = [s], []
        k = 1
        for _ in range(T):
            while k < len(wps) - 1 and tuple(s) == tuple(wps[k]):
                k += 1
            d = np.asarray(wps[k]) - s
            if not d.any():
                break
            if noise > 0 and rng.random() < noise:
                a = int(rng.integers(env.N_DISCRETE_ACTIONS))
            else:
                axis = int(rng.integers(2)) if d[0] and d[1] else (0 if d[0] else 1)
                if axis == 0:
                    a = env.RIGHT if d[0] > 0 else env.LEFT
                else:
                    a = env.DOWN if d[1] > 0 else env.UP
            s = env.step_batch(spec, s[None], np.array([a]))[0]
            states.append(s)
            actions.append(a)
        return np.array(states), np.array(actions, dtype=np.int64)


@dataclass
class TabularController:
    """A stochastic tabular policy over free cells (discrete mazes only)."""

    name: str
    probs: np.ndarray  # (n_free, 5)
    start_cells: list | None = None

    def validate(self, spec: MazeSpec) -> None:
        if spec.kind != DISCRETE:
            raise ConfigError("tabular controllers need a discrete maze")
        p = np.asarray(self.probs)
        if p.shape != (spec.n_free, env.N_DISCRETE_ACTIONS) or not np.allclose(p.sum(1), 1):
            raise ConfigError(f"controller {self.name!r}: probs must be row-stochastic (n_free, 5)")

    def rollout(self, spec, T, noise, rng):
        cells = self.start_cells or spec.free_cells
        s = np.array(cells[int(rng.integers(len(cells)))], dtype=np.int64)
        states, actions = [s], []
        for _ in range(T):
            a = int(rng.choice(env.N_DISCRETE_ACTIONS, p=self.probs[spec.cell_index(s)]))
            s = env.step_batch(spec, s[None], np.array([a]))[0]
            states.append(s)
            actions.append(a)
        free = spec.free_cells
        goal = spec.cell_center(free[int(rng.integers(len(free)))])
        return np.array(states), np.array(actions, dtype=np.int64), goal


def leg_controllers(spec: MazeSpec, n_legs: int = 2, path=None, cuts=None, **kwargs) -> list[WaypointController]:
    """Split a long corridor path into legs that overlap in exactly one cell.

    ``cuts`` lists the interior path indices where legs meet; by default the
    path is split evenly.
    """
    path = list(path or env.diameter_path(spec))
    if n_legs < 1 or len(path) < n_legs + 1:
        raise ConfigError(f"cannot split a {len(path)}-cell path into {n_legs} legs")
    if cuts is None:
        cuts = [round(k * (len(path) - 1) / n_legs) for k in range(1, n_legs)]
    cuts = [0, *cuts, len(path) - 1]
    if len(cuts) != n_legs + 1 or any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ConfigError(f"cuts must be {n_legs - 1} increasing interior indices of the {len(path)}-cell path")
    return [
        WaypointController(f"leg{k}", path[cuts[k]: cuts[k + 1] + 1], **kwargs)
        for k in range(n_legs)
    ]


# -- dataset types -----------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    desired_goal: np.ndarray
    controller_id: str

    @property
    def T(self) -> int:
        return len(self.actions)

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and self.controller_id == other.controller_id
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.desired_goal, other.desired_goal)
        )


@dataclass
class Batch:
    """A batch of relabeled (state, action, goal) samples as parallel arrays."""

    state: np.ndarray
    action: np.ndarray
    goal: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    i: np.ndarray

    def __len__(self):
        return len(self.traj)

    def __getitem__(self, k):
        return RelabeledSample(self.state[k], self.action[k], self.goal[k],
                               int(self.traj[k]), int(self.t[k]), int(self.i[k]))


@dataclass
class RelabeledSample:
    state: np.ndarray
    action: np.ndarray
    goal: np.ndarray
    traj_index: int
    t: int
    i: int


@dataclass(eq=False)
class OfflineDataset:
    trajectories: list
    maze: MazeSpec
    seed: int = 0
    _flat: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.trajectories:
            raise ConfigError("dataset must contain at least one trajectory")

    def __eq__(self, other):
        return (
            isinstance(other, OfflineDataset)
            and self.seed == other.seed
            and self.maze.name == other.maze.name
            and self.maze.kind == other.maze.kind
            and np.array_equal(self.maze.grid, other.maze.grid)
            and self.trajectories == other.trajectories
        )

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_transitions(self) -> int:
        return sum(tr.T for tr in self.trajectories)

    def flat(self) -> dict:
        """Concatenated per-state arrays; built once and cached."""
        if self._flat is None:
            lengths = np.array([tr.T for tr in self.trajectories], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(lengths + 1)])
            states = np.concatenate([tr.states for tr in self.trajectories]).astype(float)
            null = np.zeros((1, 2)) if self.maze.kind == CONTINUOUS else np.array([STAY])
            actions = np.concatenate([np.concatenate([tr.actions, null]) for tr in self.trajectories])
            traj_of = np.repeat(np.arange(len(lengths)), lengths + 1)
            t_of = np.arange(len(states)) - offsets[traj_of]
            self._flat = dict(
                states=states,
                goals=env.phi(states).copy(),
                actions=actions,
                traj=traj_of,
                t=t_of,
                T=lengths,
                offsets=offsets,
                terminal=t_of == lengths[traj_of],
                transitions=np.flatnonzero(t_of < lengths[traj_of]),
            )
        return self._flat

    def validate(self) -> None:
        for k, tr in enumerate(self.trajectories):
            validate_trajectory(self.maze, tr, k)


def validate_trajectory(spec: MazeSpec, tr: Trajectory, k: int, check_dynamics: bool = True) -> None:
    if len(tr.states) != tr.T + 1:
        raise DatasetFormatError(f"trajectory {k}: {len(tr.states)} states for {tr.T} actions")
    for t, s in enumerate(tr.states):
        try:
            env.check_state(spec, s)
        except env.MazeError as exc:
            raise DatasetFormatError(f"trajectory {k}, t={t}: {exc}") from None
    if check_dynamics and tr.T:
        nxt = env.step_batch(spec, tr.states[:-1], tr.actions)
        if not np.allclose(nxt, tr.states[1:], rtol=0, atol=1e-9):
            t = int(np.flatnonzero(~np.isclose(nxt, tr.states[1:], rtol=0, atol=1e-9).all(1))[0])
            raise DatasetFormatError(f"trajectory {k}, t={t}: states[t+1] != step(states[t], actions[t])")


# -- operations --------------------------------------------------------------

def collect(spec: MazeSpec, controllers, n_traj: int, T: int, seed: int = 0,
            noise: float = 0.1) -> OfflineDataset:
    """Roll out controllers round-robin; trajectory k uses RNG seed ``seed + k``."""
    if n_traj < 1 or T < 1:
        raise ConfigError("n_traj and T must be >= 1")
    if not controllers:
        raise ConfigError("need at least one controller")
    for c in controllers:
        c.validate(spec)
    trajs = []
    for k in range(n_traj):
        ctrl = controllers[k % len(controllers)]
        rng = np.random.default_rng(seed + k)
        states, actions, goal = ctrl.rollout(spec, T, noise, rng)
        trajs.append(Trajectory(states, actions, np.asarray(goal, float), ctrl.name))
    return OfflineDataset(trajs, spec, seed)


def sample_relabeled(ds: OfflineDataset, batch: int, rng: np.random.Generator,
                     gamma_geom: float | None = None) -> Batch:
    """Uniform transitions with hindsight goals phi(s_i), i >= t.

    The relabel index is uniform on {t, ..., T} by default; with
    ``gamma_geom`` it follows a geometric law truncated at T.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    f = ds.flat()
    idx = f["transitions"][rng.integers(len(f["transitions"]), size=batch)]
    traj, t = f["traj"][idx], f["t"][idx]
    horizon = f["T"][traj] - t  # number of future offsets beyond 0
    if gamma_geom is None:
        off = np.floor(rng.random(batch) * (horizon + 1)).astype(np.int64)
    else:
        off = truncated_geometric(rng, gamma_geom, horizon)
    off = np.minimum(off, horizon)
    j = idx + off
    return Batch(f["states"][idx], f["actions"][idx], f["goals"][j].copy(), traj, t, t + off)


def truncated_geometric(rng, gamma: float, horizon) -> np.ndarray:
    """Offsets k in {0..horizon} with P(k) proportional to gamma**k."""
    horizon = np.asarray(horizon)
    u = rng.random(horizon.shape)
    mass = 1.0 - gamma ** (horizon + 1)
    return np.floor(np.log1p(-u * mass) / np.log(gamma)).astype(np.int64)


def transition_tuples(ds: OfflineDataset):
    """(s_t, a_t, phi(s_{t+1})) for every logged transition, as three arrays."""
    f = ds.flat()
    idx = f["transitions"]
    return f["states"][idx], f["actions"][idx], f["goals"][idx + 1]


# -- persistence -------------------------------------------------------------

def _maze_header(spec: MazeSpec) -> dict:
    return dict(name=spec.name, kind=spec.kind, layout=spec.to_text().splitlines(),
                cell_size=spec.cell_size, dt=spec.dt, v_max=spec.v_max)


def maze_from_header(h: dict) -> MazeSpec:
    return env.parse_layout("\n".join(h["layout"]), h["name"], kind=h["kind"],
                            cell_size=h["cell_size"], dt=h["dt"], v_max=h["v_max"])


def save(ds: OfflineDataset, path) -> None:
    """Line-delimited JSON: a header record then one record per trajectory."""
    discrete = ds.maze.kind == DISCRETE
    lines = [json.dumps(dict(record="header", format=FORMAT_VERSION, maze=_maze_header(ds.maze),
                             seed=ds.seed, n_traj=len(ds), n_transitions=ds.n_transitions))]
    for k, tr in enumerate(ds.trajectories):
        states = tr.states.astype(int).tolist() if discrete else tr.states.tolist()
        lines.append(json.dumps(dict(
            record="trajectory", index=k, controller_id=tr.controller_id,
            desired_goal=tr.desired_goal.tolist(), states=states, actions=tr.actions.tolist())))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> OfflineDataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    records = []
    for n, ln in enumerate(lines, 1):
        try:
            records.append(json.loads(ln))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path} line {n}: {exc.msg}") from None
    head = records[0]
    if head.get("record") != "header" or head.get("format") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path} line 1: missing or unsupported header")
    try:
        spec = maze_from_header(head["maze"])
    except (KeyError, env.MazeError) as exc:
        raise DatasetFormatError(f"{path} line 1: bad maze header ({exc})") from None
    body = records[1:]
    if len(body) != head.get("n_traj"):
        raise DatasetFormatError(f"{path}: header promises {head.get('n_traj')} trajectories, found {len(body)}")
    dtype = np.int64 if spec.kind == DISCRETE else float
    trajs = []
    for n, rec in enumerate(body, 2):
        try:
            tr = Trajectory(np.array(rec["states"], dtype=dtype), np.array(rec["actions"], dtype=dtype),
                            np.array(rec["desired_goal"], dtype=float), rec["controller_id"])
            k = rec["index"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path} line {n}: malformed trajectory record ({exc})") from None
        if tr.states.ndim != 2 or tr.states.shape[1] != spec.state_dim:
            raise DatasetFormatError(f"{path} line {n}: trajectory {k} has malformed states")
        validate_trajectory(spec, tr, k, check_dynamics=False)
        trajs.append(tr)
    return OfflineDataset(trajs, spec, head["seed"])
