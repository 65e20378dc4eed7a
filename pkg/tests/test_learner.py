import numpy as np
import pytest

from rulesim.learner import (
    Adam,
    PPOHyper,
    PolicyNetwork,
    TrajectoryBuffer,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
)


def toy_policy(seed=0, obs_size=6, branches=(2, 3), hidden=(8, 8)):
    return PolicyNetwork(obs_size=obs_size, branches=branches, hidden=hidden,
                         rng=np.random.default_rng(seed))


def toy_batch(policy, rng, n=16, ratio_noise=0.05):
    obs = rng.standard_normal((n, policy.obs_size))
    masks = np.ones((n, sum(policy.branches)), dtype=bool)
    # mask one optional entry here and there, keeping one legal per branch
    masks[rng.random(masks.shape) < 0.2] = False
    offset = 0
    for b in policy.branches:
        masks[:, offset] = True
        offset += b
    actions = np.zeros((n, len(policy.branches)), dtype=np.int64)
    logps, _, _ = policy.forward(obs, masks)
    total = np.zeros(n)
    for i, lp in enumerate(logps):
        probs = np.exp(lp)
        c = (np.cumsum(probs, axis=1) < rng.random((n, 1))).sum(axis=1)
        actions[:, i] = np.minimum(c, probs.shape[1] - 1)
        total += np.take_along_axis(lp, actions[:, i:i + 1], axis=1)[:, 0]
    return {
        "obs": obs, "masks": masks, "actions": actions,
        "logp": total + rng.normal(0, ratio_noise, n),
        "advantages": rng.standard_normal(n),
        "returns": rng.standard_normal(n),
    }


def flatten(grads, keys):
    return np.concatenate([np.ravel(grads[k]) for k in keys])


def test_gradients_match_finite_differences():
    policy = toy_policy()
    hyper = PPOHyper(clip_epsilon=0.2, entropy_beta=0.01, value_coef=0.5)
    rng = np.random.default_rng(3)
    batch = toy_batch(policy, rng)

    _, grads = policy.loss_and_grads(batch, hyper)
    keys = sorted(policy.params)
    analytic = flatten(grads, keys)

    eps = 1e-6
    numeric = np.zeros_like(analytic)
    pos = 0
    for k in keys:
        p = policy.params[k]
        for j in range(p.size):
            at = np.unravel_index(j, p.shape)
            orig = p[at]
            p[at] = orig + eps
            up, _ = policy.loss_and_grads(batch, hyper)
            p[at] = orig - eps
            dn, _ = policy.loss_and_grads(batch, hyper)
            p[at] = orig
            numeric[pos] = (up["loss"] - dn["loss"]) / (2 * eps)
            pos += 1
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-8)
    rel = np.abs(numeric - analytic) / denom
    significant = np.maximum(np.abs(numeric), np.abs(analytic)) > 1e-10
    assert rel[significant].max() < 1e-4


def test_masked_actions_have_exactly_zero_probability():
    policy = toy_policy()
    obs = np.zeros((4, policy.obs_size))
    masks = np.ones((4, 5), dtype=bool)
    masks[:, 1] = False        # branch 0 entry 1
    masks[:, 3] = False        # branch 1 entry 1
    logps, _, _ = policy.forward(obs, masks)
    assert np.all(np.exp(logps[0][:, 1]) == 0.0)
    assert np.all(np.exp(logps[1][:, 1]) == 0.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        acts, _, _ = policy.act(obs, masks, rng)
        assert np.all(acts[:, 0] != 1)
        assert np.all(acts[:, 1] != 1)


def test_forced_choice_probability_one():
    policy = toy_policy()
    obs = np.zeros((1, policy.obs_size))
    masks = np.zeros((1, 5), dtype=bool)
    masks[0, 0] = True   # only entry legal in branch 0
    masks[0, 2] = True   # only entry legal in branch 1
    acts, logp, _ = policy.act(obs, masks, np.random.default_rng(0))
    assert acts[0, 0] == 0 and acts[0, 1] == 0
    assert logp[0] == pytest.approx(0.0, abs=1e-12)


def test_uniform_sampling_over_unmasked():
    policy = toy_policy()
    for k in policy.params:       # uniform logits
        if k.startswith("wh") or k.startswith("bh"):
            policy.params[k][:] = 0.0
    obs = np.zeros((1, policy.obs_size))
    masks = np.ones((1, 5), dtype=bool)
    masks[0, 3] = False   # branch 1: two of three legal
    rng = np.random.default_rng(1)
    counts = np.zeros(3)
    n = 10_000
    for _ in range(n):
        acts, _, _ = policy.act(obs, masks, rng)
        counts[acts[0, 1]] += 1
    assert counts[1] == 0
    p = 0.5
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(counts[0] - n * p) < 3 * sigma


def test_argmax_mode_is_deterministic_and_read_only():
    policy = toy_policy()
    obs = np.random.default_rng(2).standard_normal((5, policy.obs_size))
    masks = np.ones((5, 5), dtype=bool)
    before = policy.param_fingerprint()
    a1, _, _ = policy.act(obs, masks, np.random.default_rng(0), argmax=True)
    a2, _, _ = policy.act(obs, masks, np.random.default_rng(99), argmax=True)
    assert np.array_equal(a1, a2)
    assert policy.param_fingerprint() == before


def test_zero_advantage_and_terms_off_means_no_change():
    policy = toy_policy()
    hyper = PPOHyper(entropy_beta=0.0, value_coef=0.0, learning_rate=0.01,
                     epochs=1, batch_size=8)
    rng = np.random.default_rng(4)
    batch = toy_batch(policy, rng, n=8)
    batch["advantages"][:] = 0.0
    stats, grads = policy.loss_and_grads(batch, hyper)
    assert stats["policy_loss"] == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())


def test_ratios_outside_clip_range_give_zero_gradient():
    policy = toy_policy()
    hyper = PPOHyper(clip_epsilon=0.15, entropy_beta=0.0, value_coef=0.0)
    rng = np.random.default_rng(5)
    batch = toy_batch(policy, rng, n=6, ratio_noise=0.0)
    # make every stored logp far below current: ratio >> 1 + eps
    batch["logp"] = batch["logp"] - 1.0
    batch["advantages"][:] = 1.0
    _, grads = policy.loss_and_grads(batch, hyper)
    assert all(np.allclose(g, 0.0) for g in grads.values())


def test_loss_decreases_on_frozen_batch():
    policy = toy_policy(seed=7)
    hyper = PPOHyper(entropy_beta=0.001, value_coef=0.5, learning_rate=0.01)
    rng = np.random.default_rng(6)
    batch = toy_batch(policy, rng, n=64)
    opt = Adam(policy.params, hyper.learning_rate)
    first, _ = policy.loss_and_grads(batch, hyper)
    for _ in range(5):
        _, grads = policy.loss_and_grads(batch, hyper)
        opt.step(policy.params, grads)
    last, _ = policy.loss_and_grads(batch, hyper)
    assert last["loss"] < first["loss"]


def test_bandit_convergence():
    policy = toy_policy(seed=8, obs_size=1, branches=(2,), hidden=(8, 8))
    hyper = PPOHyper(gamma=0.0, lam=0.0, clip_epsilon=0.2,
                     entropy_beta=0.001, learning_rate=0.01,
                     batch_size=32, epochs=4)
    rng = np.random.default_rng(9)
    opt = Adam(policy.params, hyper.learning_rate)
    obs1 = np.ones((1, 1))
    mask1 = np.ones((1, 2), dtype=bool)
    prob_best = 0.0
    for update in range(200):
        buf = TrajectoryBuffer()
        for pull in range(64):
            acts, logp, value = policy.act(obs1, mask1, rng)
            reward = 1.0 if acts[0, 0] == 0 else 0.0
            buf.record(pull, obs1[0], mask1[0], acts[0], logp[0],
                       value[0], reward, True)
        ppo_update(policy, buf, hyper, rng, optimizer=opt)
        logps, _, _ = policy.forward(obs1, mask1)
        prob_best = float(np.exp(logps[0][0, 0]))
        if prob_best > 0.9:
            break
    assert prob_best > 0.9


def test_gae_horizon_and_done_resets():
    buf = TrajectoryBuffer()
    hyper = PPOHyper(gamma=0.5, lam=1.0, time_horizon=2)
    # one agent, 3 steps, death at the end
    for t, (r, done) in enumerate(((1.0, False), (1.0, False), (1.0, True))):
        buf.record(0, np.zeros(1), np.ones(1, dtype=bool),
                   np.zeros(1, dtype=np.int64), 0.0, 0.0, r, done)
    data = buf.assemble(hyper, {})
    # backward: adv[2] = 1 (terminal), horizon cut after step 2 means
    # adv[1] bootstraps with value[2]=0 and restarts the tail
    assert data["returns"][2] == pytest.approx(1.0)
    assert data["returns"][1] == pytest.approx(1.0)
    assert data["returns"][0] == pytest.approx(1.0 + 0.5 * 1.0)


def test_checkpoint_roundtrip(tmp_path):
    policy = toy_policy(seed=11)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, policy)
    loaded = load_checkpoint(path)
    assert loaded.branches == policy.branches
    assert loaded.hidden == policy.hidden
    obs = np.random.default_rng(1).standard_normal((3, policy.obs_size))
    masks = np.ones((3, sum(policy.branches)), dtype=bool)
    a1, _, v1 = policy.act(obs, masks, np.random.default_rng(0), argmax=True)
    a2, _, v2 = loaded.act(obs, masks, np.random.default_rng(0), argmax=True)
    assert np.array_equal(a1, a2)
    assert np.allclose(v1, v2, atol=1e-5)   # float32 storage


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTHING MUCH")
    with pytest.raises(ValueError, match="not a policy checkpoint"):
        load_checkpoint(path)
