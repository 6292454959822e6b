import itertools
import json

import numpy as np
import pytest

from pitchlab import vdn
from pitchlab.sim import ConfigError
from pitchlab.vdn import (
    CheckpointFormatError,
    LearnerConfig,
    QNetwork,
    ReplayBuffer,
    ShapeMismatchError,
    TrainConfig,
    Transition,
    VDNLearner,
    batch_from_transitions,
    init_mlp,
    joint_q,
    mlp_forward,
)


def tiny_config(n_agents=2, obs_dim=3, n_actions=4, hidden=(5,)):
    return LearnerConfig(n_agents=n_agents, obs_dim=obs_dim,
                         n_actions=n_actions, hidden=hidden)


def zero_params(learner):
    for net in (*learner.agents, *learner.targets):
        for w in net.weights:
            w[:] = 0.0
        for b in net.biases:
            b[:] = 0.0


def random_batch(cfg, rng, size=4, terminal_frac=0.25):
    ts = []
    for i in range(size):
        ts.append(Transition(
            obs=rng.normal(size=(cfg.n_agents, cfg.obs_dim)),
            actions=rng.integers(0, cfg.n_actions, size=cfg.n_agents),
            reward=float(rng.normal()),
            next_obs=rng.normal(size=(cfg.n_agents, cfg.obs_dim)),
            terminal=bool(rng.random() < terminal_frac),
        ))
    return batch_from_transitions(ts)


# -- joint value ----------------------------------------------------------------

def test_joint_q_example():
    # exact: 0.2 - 0.1 + 0.4 + 0.0 accumulated left to right lands on 0.5
    assert joint_q([0.2, -0.1, 0.4, 0.0]) == 0.5


def test_joint_q_is_sequential_sum():
    rng = np.random.default_rng(7)
    vals = list(rng.normal(size=9))
    acc = 0.0
    for v in vals:
        acc += v
    assert joint_q(vals) == acc


def test_chosen_joint_q_matches_manual_sum():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=3)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(cfg.n_agents, cfg.obs_dim))
    actions = np.array([2, 1])
    q = learner.q_values(obs)
    acc = 0.0
    for a in range(cfg.n_agents):
        acc += float(q[a, actions[a]])
    assert learner.chosen_joint_q(obs, actions) == acc


def test_greedy_decomposition_matches_joint_enumeration():
    cfg = tiny_config(n_agents=3, obs_dim=4, n_actions=3)
    rng = np.random.default_rng(11)
    for trial in range(20):
        learner = VDNLearner(cfg, seed=trial)
        obs = rng.normal(size=(cfg.n_agents, cfg.obs_dim))
        best_joint = None
        best_val = -np.inf
        for joint in itertools.product(range(cfg.n_actions),
                                       repeat=cfg.n_agents):
            v = learner.chosen_joint_q(obs, np.array(joint))
            if v > best_val:
                best_val = v
                best_joint = joint
        greedy = learner.greedy_actions(obs)
        assert tuple(greedy) == best_joint
        assert learner.chosen_joint_q(obs, greedy) == best_val


# -- forward pass -----------------------------------------------------------------

def test_forward_output_width():
    cfg = tiny_config(n_actions=10)
    learner = VDNLearner(cfg, seed=0)
    q = learner.q_values(np.zeros((cfg.n_agents, cfg.obs_dim)))
    assert q.shape == (cfg.n_agents, 10)


def test_forward_zero_network_outputs_zero():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    zero_params(learner)
    q = learner.q_values(np.ones((cfg.n_agents, cfg.obs_dim)))
    assert np.array_equal(q, np.zeros_like(q))


def test_forward_batch_matches_single_rows():
    net = init_mlp([4, 6, 3], np.random.default_rng(2))
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 4))
    batched = mlp_forward(net, x)
    rows = np.stack([mlp_forward(net, x[i]) for i in range(8)])
    assert np.allclose(batched, rows, rtol=0, atol=1e-12)


def test_forward_rejects_wrong_width():
    net = init_mlp([4, 6, 3], np.random.default_rng(2))
    with pytest.raises(ShapeMismatchError):
        mlp_forward(net, np.zeros(5))


def test_q_values_rejects_wrong_agent_count():
    cfg = tiny_config(n_agents=2)
    learner = VDNLearner(cfg, seed=0)
    with pytest.raises(ShapeMismatchError):
        learner.q_values(np.zeros((3, cfg.obs_dim)))


def test_softplus_positive_and_smooth_at_zero():
    z = np.array([-40.0, -1.0, 0.0, 1.0, 40.0])
    s = vdn.softplus(z)
    assert np.all(s > 0)
    assert s[2] == pytest.approx(np.log(2.0), abs=1e-15)
    assert s[4] == pytest.approx(40.0, abs=1e-12)


def test_init_respects_fan_in_bounds():
    net = init_mlp([9, 4, 3], np.random.default_rng(5))
    assert net.weights[0].shape == (9, 4)
    assert net.weights[1].shape == (4, 3)
    for layer, fan_in in ((0, 9), (1, 4)):
        bound = 1.0 / np.sqrt(fan_in)
        assert np.all(np.abs(net.weights[layer]) <= bound)
        assert np.all(np.abs(net.biases[layer]) <= bound)
    # not degenerate
    assert np.std(net.weights[0]) > 0


# -- TD learning ------------------------------------------------------------------

def test_td_target_example():
    # zero online nets make the prediction 0, so the loss exposes the target:
    # y = r + gamma * sum of per-agent target maxes = 0.5 + 0.9 * 1.0 = 1.40
    cfg = LearnerConfig(n_agents=2, obs_dim=3, n_actions=2, hidden=(5,),
                        gamma=0.9)
    learner = VDNLearner(cfg, seed=0)
    zero_params(learner)
    learner.targets[0].biases[-1][:] = [0.25, -1.0]
    learner.targets[1].biases[-1][:] = [0.75, -2.0]
    batch = [Transition(obs=np.zeros((2, 3)), actions=np.array([0, 0]),
                        reward=0.5, next_obs=np.zeros((2, 3)),
                        terminal=False)]
    loss = learner.td_loss(batch)
    assert loss == (0.5 + 0.9 * 1.0) ** 2
    assert abs(np.sqrt(loss) - 1.4) < 1e-12


def test_td_terminal_drops_bootstrap():
    cfg = tiny_config(n_agents=2, obs_dim=3, n_actions=2)
    learner = VDNLearner(cfg, seed=0)
    zero_params(learner)
    learner.targets[0].biases[-1][:] = [5.0, 0.0]
    learner.targets[1].biases[-1][:] = [5.0, 0.0]
    batch = [Transition(obs=np.zeros((2, 3)), actions=np.array([0, 0]),
                        reward=-1.0, next_obs=np.zeros((2, 3)),
                        terminal=True)]
    assert learner.td_loss(batch) == 1.0


def test_td_grads_match_finite_differences():
    cfg = tiny_config(n_agents=2, obs_dim=3, n_actions=3, hidden=(4,))
    learner = VDNLearner(cfg, seed=9)
    batch = random_batch(cfg, np.random.default_rng(1), size=5)
    _, grads = learner.td_grads(batch)
    h = 1e-6
    for a in range(cfg.n_agents):
        for arrs, garrs in ((learner.agents[a].weights, grads[a].weights),
                            (learner.agents[a].biases, grads[a].biases)):
            for arr, garr in zip(arrs, garrs):
                flat = arr.reshape(-1)
                gflat = garr.reshape(-1)
                for i in range(flat.size):
                    keep = flat[i]
                    flat[i] = keep + h
                    up = learner.td_loss(batch)
                    flat[i] = keep - h
                    down = learner.td_loss(batch)
                    flat[i] = keep
                    fd = (up - down) / (2 * h)
                    assert abs(gflat[i] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_td_update_descends_on_fixed_batch():
    cfg = tiny_config(n_agents=2, obs_dim=4, n_actions=3)
    learner = VDNLearner(cfg, seed=4)
    batch = random_batch(cfg, np.random.default_rng(2), size=8)
    first = learner.td_loss(batch)
    for _ in range(50):
        learner.td_update(batch)
    assert learner.td_loss(batch) < first


def test_td_update_applies_plain_sgd_below_clip():
    cfg = tiny_config(n_agents=1, obs_dim=2, n_actions=2, hidden=(3,))
    learner = VDNLearner(cfg, seed=6)
    batch = [Transition(obs=np.full((1, 2), 0.1), actions=np.array([1]),
                        reward=0.01, next_obs=np.zeros((1, 2)),
                        terminal=True)]
    _, grads = learner.td_grads(batch)
    norm = np.sqrt(sum(float(np.sum(a * a))
                       for g in grads for a in (*g.weights, *g.biases)))
    assert norm < cfg.grad_clip
    before = [w.copy() for w in learner.agents[0].weights]
    learner.td_update(batch)
    for w0, w1, gw in zip(before, learner.agents[0].weights, grads[0].weights):
        assert np.allclose(w1, w0 - cfg.lr * gw, rtol=0, atol=1e-15)


def test_td_update_clips_global_gradient_norm():
    cfg = tiny_config(n_agents=1, obs_dim=2, n_actions=2, hidden=(3,))
    learner = VDNLearner(cfg, seed=6)
    # an absurd reward blows the raw gradient past the clip threshold
    batch = [Transition(obs=np.ones((1, 2)), actions=np.array([0]),
                        reward=1e6, next_obs=np.zeros((1, 2)),
                        terminal=True)]
    _, grads = learner.td_grads(batch)
    norm = np.sqrt(sum(float(np.sum(a * a))
                       for g in grads for a in (*g.weights, *g.biases)))
    assert norm > cfg.grad_clip
    before = [w.copy() for w in learner.agents[0].weights]
    learner.td_update(batch)
    scale = cfg.grad_clip / norm
    for w0, w1, gw in zip(before, learner.agents[0].weights, grads[0].weights):
        assert np.allclose(w1, w0 - cfg.lr * scale * gw, rtol=1e-12, atol=0)


def test_train_step_counter_advances():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    batch = random_batch(cfg, np.random.default_rng(0), size=2)
    assert learner.train_step == 0
    learner.td_update(batch)
    learner.td_update(batch)
    assert learner.train_step == 2


# -- action selection ------------------------------------------------------------

def test_greedy_ties_break_to_lowest_index():
    cfg = tiny_config(n_agents=1, obs_dim=2, n_actions=4)
    learner = VDNLearner(cfg, seed=0)
    zero_params(learner)
    learner.agents[0].biases[-1][:] = [1.0, 1.0, 0.0, 0.0]
    acts = learner.select_actions(np.zeros((1, 2)), epsilon=0.0)
    assert acts[0] == 0


def test_epsilon_zero_never_touches_rng():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=1)
    rng = np.random.default_rng(42)
    state = rng.bit_generator.state
    obs = np.zeros((cfg.n_agents, cfg.obs_dim))
    a1 = learner.select_actions(obs, epsilon=0.0, rng=rng)
    a2 = learner.select_actions(obs, epsilon=0.0)
    assert rng.bit_generator.state == state
    assert np.array_equal(a1, a2)


def test_epsilon_positive_requires_rng():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=1)
    with pytest.raises(ConfigError):
        learner.select_actions(np.zeros((cfg.n_agents, cfg.obs_dim)), 0.5)


def test_epsilon_one_is_uniform():
    cfg = tiny_config(n_agents=1, obs_dim=2, n_actions=4, hidden=(3,))
    learner = VDNLearner(cfg, seed=2)
    rng = np.random.default_rng(123)
    obs = np.zeros((1, 2))
    n = 100_000
    counts = np.zeros(4, dtype=int)
    for _ in range(n):
        counts[learner.select_actions(obs, epsilon=1.0, rng=rng)[0]] += 1
    p = 1.0 / 4
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_greedy_is_deterministic():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=5)
    obs = np.random.default_rng(8).normal(size=(cfg.n_agents, cfg.obs_dim))
    first = learner.select_actions(obs, epsilon=0.0)
    for _ in range(5):
        assert np.array_equal(learner.select_actions(obs, epsilon=0.0), first)


# -- target network ----------------------------------------------------------------

def nets_equal(a, b):
    return all(np.array_equal(wa, wb)
               for na, nb in zip(a, b)
               for wa, wb in zip((*na.weights, *na.biases),
                                 (*nb.weights, *nb.biases)))


def test_sync_copies_and_is_idempotent():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=3)
    batch = random_batch(cfg, np.random.default_rng(4), size=4)
    learner.td_update(batch)
    assert not nets_equal(learner.agents, learner.targets)
    learner.sync_target()
    assert nets_equal(learner.agents, learner.targets)
    snap = [n.copy() for n in learner.targets]
    learner.sync_target()
    assert nets_equal(learner.targets, snap)


def test_sync_is_a_copy_not_a_view():
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=3)
    learner.sync_target()
    batch = random_batch(cfg, np.random.default_rng(4), size=4)
    learner.td_update(batch)
    # the update must not leak through to the frozen copies
    assert not nets_equal(learner.agents, learner.targets)


# -- epsilon schedule --------------------------------------------------------------

def test_epsilon_schedule_linear_anneal():
    tc = TrainConfig(total_steps=1000, epsilon_start=1.0, epsilon_end=0.1,
                     epsilon_decay_steps=100, learn_start=32)
    assert tc.epsilon_at(0) == 1.0
    assert tc.epsilon_at(50) == pytest.approx(0.55)
    assert tc.epsilon_at(100) == 0.1
    assert tc.epsilon_at(10_000) == 0.1


def test_epsilon_decay_defaults_to_fifth_of_total():
    tc = TrainConfig(total_steps=1000, learn_start=32)
    assert tc.decay_steps == 200
    explicit = TrainConfig(total_steps=1000, epsilon_decay_steps=77,
                           learn_start=32)
    assert explicit.decay_steps == 77


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(total_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(epsilon_start=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(buffer_capacity=8, batch_size=32)
    with pytest.raises(ConfigError):
        TrainConfig(learn_start=8, batch_size=32)


def test_learner_config_validation():
    with pytest.raises(ConfigError):
        LearnerConfig(n_agents=2, obs_dim=3, n_actions=1)
    with pytest.raises(ConfigError):
        LearnerConfig(n_agents=2, obs_dim=3, n_actions=4, hidden=())
    with pytest.raises(ConfigError):
        LearnerConfig(n_agents=2, obs_dim=3, n_actions=4, lr=0.0)
    with pytest.raises(ConfigError):
        LearnerConfig(n_agents=2, obs_dim=3, n_actions=4, gamma=-0.1)


# -- replay buffer ------------------------------------------------------------------

def test_buffer_fills_then_wraps():
    buf = ReplayBuffer(capacity=4, n_agents=1, obs_dim=2)
    for i in range(6):
        buf.add(np.full((1, 2), float(i)), np.array([0]), float(i),
                np.zeros((1, 2)), False)
    assert len(buf) == 4
    # slots now hold 4, 5, 2, 3: the two oldest were overwritten in place
    stored = sorted(buf.rewards.tolist())
    assert stored == [2.0, 3.0, 4.0, 5.0]


def test_buffer_sample_shapes_and_guard():
    buf = ReplayBuffer(capacity=10, n_agents=2, obs_dim=3)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        buf.sample(1, rng)
    for i in range(5):
        buf.add(np.zeros((2, 3)), np.array([0, 1]), 0.0, np.zeros((2, 3)), False)
    batch = buf.sample(4, rng)
    assert batch.obs.shape == (4, 2, 3)
    assert batch.actions.shape == (4, 2)
    assert batch.rewards.shape == (4,)
    assert batch.terminals.shape == (4,)
    with pytest.raises(ValueError):
        buf.sample(6, rng)


def test_buffer_rejects_zero_capacity():
    with pytest.raises(ConfigError):
        ReplayBuffer(capacity=0, n_agents=1, obs_dim=1)


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_roundtrip_is_exact(tmp_path):
    cfg = tiny_config(n_agents=2, obs_dim=4, n_actions=3, hidden=(6, 5))
    learner = VDNLearner(cfg, seed=17)
    batch = random_batch(cfg, np.random.default_rng(9), size=4)
    for _ in range(3):
        learner.td_update(batch)
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    loaded = VDNLearner.load(str(path))
    assert loaded.config == cfg
    assert loaded.train_step == learner.train_step
    assert nets_equal(loaded.agents, learner.agents)
    assert nets_equal(loaded.targets, learner.targets)
    obs = np.random.default_rng(10).normal(size=(cfg.n_agents, cfg.obs_dim))
    assert np.array_equal(loaded.q_values(obs), learner.q_values(obs))


def test_checkpoint_preserves_distinct_target(tmp_path):
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=1)
    learner.td_update(random_batch(cfg, np.random.default_rng(2), size=4))
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    loaded = VDNLearner.load(str(path))
    assert not nets_equal(loaded.agents, loaded.targets)


def test_checkpoint_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(CheckpointFormatError):
        VDNLearner.load(str(path))


def test_checkpoint_rejects_wrong_version(tmp_path):
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    doc = json.loads(path.read_text())
    doc["version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointFormatError):
        VDNLearner.load(str(path))


def test_checkpoint_rejects_missing_key(tmp_path):
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    doc = json.loads(path.read_text())
    del doc["agents"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointFormatError):
        VDNLearner.load(str(path))


def test_checkpoint_rejects_truncated_weights(tmp_path):
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    doc = json.loads(path.read_text())
    doc["agents"][0]["weights"][0] = doc["agents"][0]["weights"][0][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointFormatError):
        VDNLearner.load(str(path))


def test_checkpoint_rejects_agent_count_mismatch(tmp_path):
    cfg = tiny_config()
    learner = VDNLearner(cfg, seed=0)
    path = tmp_path / "ckpt.json"
    learner.save(str(path))
    doc = json.loads(path.read_text())
    doc["agents"] = doc["agents"][:1]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointFormatError):
        VDNLearner.load(str(path))
