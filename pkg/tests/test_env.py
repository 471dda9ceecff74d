import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgda import env
from oracles import grid_hops


def test_discrete_move_right(open5):
    assert tuple(env.step(open5, np.array([1, 1]), env.RIGHT)) == (2, 1)


def test_discrete_move_into_wall_is_identity(open5):
    assert tuple(env.step(open5, np.array([1, 1]), env.LEFT)) == (1, 1)
    assert tuple(env.step(open5, np.array([1, 1]), env.UP)) == (1, 1)


def test_continuous_integrator_step():
    spec = env.load_maze("open5")
    s = env.step(spec, np.array([0.5, 0.5, 0.0, 0.0]), np.array([1.0, 0.0]))
    # v' = 0 + 1 * 0.1, p' = 0.5 + 0.1 * 0.1
    np.testing.assert_allclose(s, [0.51, 0.5, 0.1, 0.0], atol=1e-12)


def test_continuous_action_is_clamped():
    spec = env.load_maze("open5")
    a = env.step(spec, np.array([2.5, 2.5, 0.0, 0.0]), np.array([5.0, -7.0]))
    b = env.step(spec, np.array([2.5, 2.5, 0.0, 0.0]), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(a, b)


def test_velocity_saturates_at_v_max():
    spec = env.load_maze("open5")
    s = env.step(spec, np.array([2.5, 2.5, 0.95, 0.0]), np.array([1.0, 0.0]))
    assert s[2] == pytest.approx(1.0)


def test_wall_collision_zeroes_blocked_velocity():
    spec = env.load_maze("umaze")
    # umaze row 2 is wall except column 3; moving up from (1, 3) hits it
    s = np.array([0.5, 2.05, 0.0, -1.0])
    nxt = env.step(spec, s, np.array([0.0, -1.0]))
    assert nxt[3] == 0.0
    assert spec.cell_of(nxt[:2]) == (1, 3)


def test_phi_projection():
    np.testing.assert_array_equal(env.phi(np.array([1.0, 2.0, 0.3, -0.1])), [1.0, 2.0])
    np.testing.assert_array_equal(env.phi(np.array([3, 4])), [3, 4])


def test_reward_threshold():
    g = np.array([1.0, 1.0])
    assert env.reward(np.array([1.0, 1.0, 0.0, 0.0]), g, 0.1) == 1
    assert env.reward(np.array([1.0 + 0.51, 1.0, 0.0, 0.0]), g, 0.5) == 0
    assert env.DEFAULT_DELTA == 0.5
    with pytest.raises(ValueError):
        env.reward(g, g, 0.0)


def test_bfs_examples(open5):
    assert env.bfs_reachable(open5, (1, 1), (1, 1)) == (True, 0)
    assert env.bfs_reachable(open5, (1, 1), (3, 1)) == (True, 2)
    walled = env.load_maze("two_room", env.DISCRETE)
    assert env.bfs_reachable(walled, (1, 1), (4, 1)) == (False, None)
    with pytest.raises(env.MazeError):
        env.bfs_reachable(open5, (0, 0), (1, 1))


def test_bfs_matches_reference_search():
    spec = env.load_maze("medium", env.DISCRETE)
    layout = env.LAYOUTS["medium"]
    cells = spec.free_cells
    for a in cells[::3]:
        for b in cells[::4]:
            ok, d = env.bfs_reachable(spec, a, b)
            assert d == grid_hops(layout, a, b)
            assert ok == (d is not None)


def test_continuous_bfs_snaps_to_cells(umaze):
    ok, d = env.bfs_reachable(umaze, (0.5, 0.5), (0.5, 2.5))
    assert ok and d == 6


@pytest.mark.parametrize("text, msg", [
    ("#####\n#...#\n#####\n###", "columns"),
    ("#####\n#.x.#\n#####", "unexpected"),
    ("#####\n#...#\n#....\n#####", "boundary"),
    ("#####\n#####\n#####", "no free"),
    ("#####\n#.#.#\n#####", "isolated"),
])
def test_layout_validation(text, msg):
    with pytest.raises(env.MazeError, match=msg):
        env.parse_layout(text)


def test_layout_file_round_trip(tmp_path, umaze):
    p = tmp_path / "maze.txt"
    p.write_text(umaze.to_text())
    spec = env.load_maze(str(p))
    np.testing.assert_array_equal(spec.grid, umaze.grid)
    with pytest.raises(env.MazeError, match="unknown maze"):
        env.load_maze(str(tmp_path / "missing.txt"))


def test_invalid_state_rejected(open5, umaze):
    with pytest.raises(env.MazeError):
        env.step(open5, np.array([0, 0]), env.STAY)
    with pytest.raises(env.MazeError):
        env.step(umaze, np.array([0.5, 1.5, 0.0, 0.0]), np.zeros(2))  # inside the wall row


@pytest.mark.parametrize("name", list(env.LAYOUTS))
def test_bundled_layouts_load(name):
    for kind in (env.CONTINUOUS, env.DISCRETE):
        spec = env.load_maze(name, kind)
        assert spec.n_free >= 2


# -- properties --------------------------------------------------------------

def _free_point(spec, data_draw):
    cell = data_draw(st.sampled_from(spec.free_cells))
    off = data_draw(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)))
    return (np.array(cell, float) - 1 + np.array(off)) * spec.cell_size


@given(st.data(), st.sampled_from(["umaze", "medium", "large"]))
def test_rollouts_stay_in_free_cells(draw, name):
    spec = env.load_maze(name)
    p = _free_point(spec, draw.draw)
    s = np.concatenate([p, draw.draw(st.tuples(st.floats(-1, 1), st.floats(-1, 1)))])
    acts = draw.draw(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=40))
    for a in acts:
        nxt = env.step(spec, s, np.array(a))
        np.testing.assert_array_equal(nxt, env.step(spec, s, np.array(a)))
        s = nxt
        assert spec.is_free(*spec.cell_of(s[:2]))
        assert np.all(np.abs(s[2:]) <= spec.v_max)


@given(st.data(), st.sampled_from(["medium", "large", "two_room"]))
def test_discrete_walks_stay_in_free_cells(draw, name):
    spec = env.load_maze(name, env.DISCRETE)
    s = np.array(draw.draw(st.sampled_from(spec.free_cells)))
    for a in draw.draw(st.lists(st.integers(0, 4), max_size=50)):
        s = env.step(spec, s, a)
        assert spec.is_free(*s)


@given(st.data())
def test_continuous_step_locally_lipschitz(draw):
    spec = env.load_maze("open5")
    # keep both states and their successors well inside the interior
    p1 = np.array(draw.draw(st.tuples(st.floats(0.5, 4.5), st.floats(0.5, 4.5))))
    v1 = np.array(draw.draw(st.tuples(st.floats(-1, 1), st.floats(-1, 1))))
    d = np.array(draw.draw(st.tuples(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05),
                                     st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))))
    a = np.array(draw.draw(st.tuples(st.floats(-1, 1), st.floats(-1, 1))))
    s1 = np.concatenate([p1, v1])
    s2 = s1 + d
    s2[2:] = np.clip(s2[2:], -1, 1)
    gap = np.linalg.norm(env.step(spec, s1, a) - env.step(spec, s2, a))
    assert gap <= spec.k_env * np.linalg.norm(s1 - s2) + 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 2), st.floats(0.01, 1))
def test_reward_monotone_in_delta(x, y, delta, shrink):
    s, g = np.array([x, y, 0, 0]), np.zeros(2)
    r = env.reward(s, g, delta)
    assert r in (0, 1)
    assert env.reward(s, g, delta * shrink) <= r
