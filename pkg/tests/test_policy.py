import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgda import cluster, data, env, evaluate, policy
from mgda.augment import AugmentConfig
from mgda.data import ConfigError
from mgda.numerics import Mlp
from mgda.policy import Policy, TrainConfig, WeightScheme
from oracles import central_difference, rel_error


def _policy(spec, rng=0, zero=False):
    dim = 6 if spec.kind == env.CONTINUOUS else 4
    out = 2 if spec.kind == env.CONTINUOUS else env.N_DISCRETE_ACTIONS
    return Policy(Mlp([dim, 8, out], "tanh", rng=rng, zero=zero), spec, np.zeros(dim), np.ones(dim))


def _batch(spec, n, rng):
    if spec.kind == env.CONTINUOUS:
        s = np.column_stack([rng.uniform(1, 4, (n, 2)), rng.uniform(-1, 1, (n, 2))])
        a = rng.uniform(-1, 1, (n, 2))
    else:
        s = rng.integers(1, 5, (n, 2)).astype(float)
        a = rng.integers(env.N_DISCRETE_ACTIONS, size=n)
    return s, rng.uniform(1, 4, (n, 2)), a, rng.uniform(0, 1, n)


def test_weight_examples():
    ws = WeightScheme("discount", 0.99)
    assert policy.weight(ws, 0, 10) == pytest.approx(0.99 ** 10)
    assert policy.weight(ws, 0, 10) == pytest.approx(0.904382, abs=1e-6)
    assert policy.weight(ws, 3, 3) == 1.0
    assert policy.weight(WeightScheme("uniform"), 0, 50) == 1.0
    np.testing.assert_allclose(policy.weight(ws, np.array([0, 1]), np.array([2, 1])), [0.99 ** 2, 1.0])
    with pytest.raises(ValueError):
        policy.weight(ws, 5, 4)


def test_weight_scheme_validation():
    with pytest.raises(ConfigError):
        WeightScheme("hyperbolic")
    with pytest.raises(ConfigError):
        WeightScheme("discount", 1.0)


def test_heads():
    assert policy.head(env.DISCRETE, np.array([0.1, 0.9, 0.3, 0.9, 0.0])) == 1
    np.testing.assert_array_equal(policy.head(env.CONTINUOUS, np.array([1.7, -0.2])), [1.0, -0.2])


def test_single_state_act_shape(umaze):
    p = _policy(umaze)
    a = policy.act(p, np.array([1.5, 1.5, 0.0, 0.0]), np.array([3.5, 1.5]))
    assert a.shape == (2,) and np.all(np.abs(a) <= 1)


def test_loss_is_zero_on_perfect_mean(umaze, rng):
    p = _policy(umaze, zero=True)
    s, g, _, w = _batch(umaze, 16, rng)
    loss, tape = policy.gcwsl_loss(p, s, g, np.zeros((16, 2)), w)
    assert loss == 0.0
    assert not tape.flat().any()


@pytest.mark.parametrize("kind", [env.CONTINUOUS, env.DISCRETE])
def test_zero_weights_give_zero_gradient(kind, rng):
    spec = env.load_maze("umaze", kind)
    p = _policy(spec)
    s, g, a, _ = _batch(spec, 16, rng)
    loss, tape = policy.gcwsl_loss(p, s, g, a, np.zeros(16))
    assert loss == 0.0
    assert not tape.flat().any()


def test_uniform_logits_cost_log_five(open5, rng):
    p = Policy(Mlp([4, 5], zero=True), open5, np.zeros(4), np.ones(4))
    s, g, a, _ = _batch(open5, 10, rng)
    loss, _ = policy.gcwsl_loss(p, s, g, a, np.ones(10))
    assert loss == pytest.approx(np.log(5))


def test_empty_batch_rejected(umaze):
    with pytest.raises(ValueError):
        policy.gcwsl_loss(_policy(umaze), np.zeros((0, 4)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))


def _fd_error(p, s, g, a, w):
    _, tape = policy.gcwsl_loss(p, s, g, a, w)
    worst = 0.0
    for k, prm in enumerate(p.net.params()):
        def f(v, k=k):
            saved = p.net.params()[k].copy()
            p.net.params()[k][...] = v
            out = policy.gcwsl_loss(p, s, g, a, w)[0]
            p.net.params()[k][...] = saved
            return out
        worst = max(worst, rel_error(tape.arrays()[k], central_difference(f, prm.copy())))
    return worst


@given(st.integers(0, 2**31), st.sampled_from([env.CONTINUOUS, env.DISCRETE]))
def test_loss_gradient_matches_finite_differences(seed, kind):
    spec = env.load_maze("umaze", kind)
    rng = np.random.default_rng(seed)
    assert _fd_error(_policy(spec, rng), *_batch(spec, 6, rng)) < 1e-4


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_scaling_weights_scales_gradient(seed, c):
    spec = env.load_maze("umaze", env.DISCRETE)
    rng = np.random.default_rng(seed)
    p = _policy(spec, rng)
    s, g, a, w = _batch(spec, 8, rng)
    l1, t1 = policy.gcwsl_loss(p, s, g, a, w)
    l2, t2 = policy.gcwsl_loss(p, s, g, a, c * w)
    assert l2 == pytest.approx(c * l1)
    np.testing.assert_allclose(t2.flat(), c * t1.flat(), rtol=1e-9, atol=1e-15)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(steps=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch=0)
    assert TrainConfig(batch=512).batch == 512


def _train(ds, strategy="none", steps=30, seed=0, **kw):
    return policy.train(ds, AugmentConfig(strategy, **kw), TrainConfig(steps=steps, batch=64, probe_batch=256),
                        WeightScheme(), seed)


def test_zero_steps_is_the_initial_policy(small_umaze_ds):
    p = _train(small_umaze_ds, steps=0)
    q = policy.init_policy(small_umaze_ds, TrainConfig(), np.random.default_rng([0, 0]))
    for a, b in zip(p.net.params(), q.net.params()):
        np.testing.assert_array_equal(a, b)
    assert p.train_report["initial_loss"] == p.train_report["final_loss"]


def test_zero_probability_strategy_reproduces_plain_run(small_umaze_ds):
    plain = _train(small_umaze_ds)
    sgda = _train(small_umaze_ds, "sgda", eps_prob=0.0)
    for a, b in zip(plain.net.params(), sgda.net.params()):
        np.testing.assert_array_equal(a, b)


def test_large_batch_and_training_reduces_loss(small_umaze_ds):
    p = policy.train(small_umaze_ds, AugmentConfig("none"), TrainConfig(steps=200, batch=512, probe_batch=512),
                     WeightScheme(), 1)
    assert p.train_report["final_loss"] < p.train_report["initial_loss"]


def test_mgda_without_model_refused(small_umaze_ds):
    with pytest.raises(ConfigError, match="cluster"):
        _train(small_umaze_ds, "mgda")
    ci = cluster.cluster_dataset(small_umaze_ds, 4)
    with pytest.raises(ConfigError, match="fit-dynamics"):
        policy.train(small_umaze_ds, AugmentConfig("mgda"), TrainConfig(steps=1), WeightScheme(), 0, ci)


def test_checkpoint_round_trip(tmp_path, small_umaze_ds, rng):
    p = _train(small_umaze_ds, steps=5)
    p.save(tmp_path / "p.json")
    q = Policy.load(tmp_path / "p.json")
    s, g, _, _ = _batch(small_umaze_ds.maze, 20, rng)
    np.testing.assert_array_equal(p.act(s, g), q.act(s, g))
    assert q.train_report == p.train_report
    assert q.spec.name == p.spec.name


def test_single_leg_imitation():
    spec = env.load_maze("umaze", env.DISCRETE)
    ds = data.collect(spec, data.leg_controllers(spec, 1), 100, 12, seed=0, noise=0.0)
    p = policy.train(ds, AugmentConfig("none"), TrainConfig(steps=1500, probe_batch=256), WeightScheme(), 0)
    pairs = evaluate.make_in_distribution_pairs(spec, ds, 50, seed=0)
    assert evaluate.rollout_success(p, spec, pairs, T_max=30).success_rate >= 0.9
