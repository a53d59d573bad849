from __future__ import annotations

import numpy as np
import pytest

from minibrawl.acer import (
    BATCH_EPISODES,
    BOTH_HEADS,
    GAMMA,
    MOVE_HEAD,
    RATIO_CLIP,
    SKILL_HEAD,
    DataCorruptionError,
    EpisodeLog,
    LearnerState,
    ReplayBuffer,
    Transition,
    acer_gradient,
    bias_correction_logits,
    clip_by_global_norm,
    episode_tape,
    global_norm,
    head_for_step,
    importance_ratio,
    onsample_policy_logits,
    retrace_targets,
    update_step,
)
from minibrawl.net import (
    NetConfig,
    NetworkParams,
    NumericError,
    forward_episode,
    sample_index,
    softmax_vjp,
)

CFG = NetConfig(obs_dim=6, n_skills=5, n_moves=18, hidden=8)


def make_params(cfg: NetConfig = CFG, seed: int = 0) -> NetworkParams:
    return NetworkParams.initialize(cfg, np.random.default_rng(seed))


def zero_params(cfg: NetConfig = CFG) -> NetworkParams:
    p = make_params(cfg)
    for arr in p.arrays().values():
        arr[...] = 0.0
    return p


def collect_episode(params: NetworkParams, T: int, rng: np.random.Generator, *,
                    off_policy: bool = False, maintain: int = 1,
                    rewards=None, gap=GAMMA, masks=None) -> EpisodeLog:
    """Roll the net over random observations and record transitions the way
    a simulator would, sampling actions from the behavior distributions."""
    cfg = params.config
    obs = [rng.normal(size=cfg.obs_dim) for _ in range(T)]
    if masks is None:
        masks = []
        for _ in range(T):
            m = rng.random(cfg.n_skills) < 0.6
            m[0] = True
            masks.append(m)
    if rewards is None:
        rewards = rng.uniform(-1.0, 1.0, size=T)
    gaps = np.full(T, gap) if np.isscalar(gap) else np.asarray(gap)
    tape = forward_episode(params, obs, masks)
    transitions = []
    move = 0
    for t in range(T):
        out = tape.outputs[t]
        skill_dist = out.skill_probs.copy()
        move_dist = out.move_probs.copy()
        if off_policy:
            skill_dist = np.where(skill_dist > 0.0, 0.0, 0.0)
            support = out.skill_probs > 0.0
            skill_dist[support] = 1.0 / support.sum()
            move_dist = np.full(cfg.n_moves, 1.0 / cfg.n_moves)
        skill = sample_index(skill_dist, rng)
        fresh = t % maintain == 0
        if fresh:
            move = sample_index(move_dist, rng)
        transitions.append(Transition(
            obs=obs[t], skill_mask=masks[t], skill=skill, move=move,
            behavior_skill_dist=skill_dist,
            behavior_move_dist=move_dist if fresh else None,
            reward=float(rewards[t]), gap_discount=float(gaps[t]),
            terminal=t == T - 1, move_fresh=fresh))
    episode = EpisodeLog(transitions=transitions)
    episode.validate()
    return episode


# -- importance ratios ------------------------------------------------------

def test_importance_ratio_on_policy():
    assert importance_ratio(0.3, 0.3) == (1.0, 1.0)


def test_importance_ratio_truncates():
    rho, rho_bar = importance_ratio(0.75, 0.05, c=10.0)
    assert rho == pytest.approx(15.0)
    assert rho_bar == 10.0


def test_importance_ratio_below_truncation():
    rho, rho_bar = importance_ratio(0.2, 0.4, c=10.0)
    assert rho == rho_bar == 0.5


def test_importance_ratio_rejects_zero_behavior():
    with pytest.raises(DataCorruptionError):
        importance_ratio(0.5, 0.0)


# -- transition invariants --------------------------------------------------

def test_episode_validation_catches_misplaced_terminal():
    ep = collect_episode(make_params(), 4, np.random.default_rng(0))
    ep.transitions[1].terminal = True
    with pytest.raises(DataCorruptionError):
        ep.validate()


def test_transition_validation_catches_masked_action():
    ep = collect_episode(make_params(), 3, np.random.default_rng(1))
    tr = ep.transitions[0]
    tr.skill_mask = tr.skill_mask.copy()
    tr.skill_mask[tr.skill] = False
    with pytest.raises(DataCorruptionError):
        tr.validate()


# -- return targets ---------------------------------------------------------

def test_retrace_hand_unrolled_two_step():
    # zero params make every Q and V identically zero
    p = zero_params()
    ep = collect_episode(p, 2, np.random.default_rng(2),
                         rewards=[0.0, 1.0], gap=0.9)
    for head in (SKILL_HEAD, MOVE_HEAD):
        np.testing.assert_allclose(retrace_targets(ep, p, head), [0.9, 1.0], atol=1e-12)


def test_retrace_terminal_base_case():
    p = make_params()
    ep = collect_episode(p, 5, np.random.default_rng(3))
    targets = retrace_targets(ep, p, SKILL_HEAD)
    assert targets[-1] == ep.transitions[-1].reward


def test_retrace_on_policy_equals_monte_carlo_return():
    # constant Q heads make Q(x, a) equal V(x) for every action, so the
    # on-policy recursion collapses to the plain discounted return
    p = make_params(seed=4)
    p.w_skill_q[...] = 0.0
    p.b_skill_q[...] = 0.7
    p.w_move_q[...] = 0.0
    p.b_move_q[...] = -0.3
    rng = np.random.default_rng(5)
    for _ in range(20):
        T = int(rng.integers(2, 7))
        gaps = rng.uniform(0.5, 1.0, size=T)
        ep = collect_episode(p, T, rng, gap=gaps)
        rewards = [tr.reward for tr in ep.transitions]
        expected = np.empty(T)
        expected[-1] = rewards[-1]
        for t in range(T - 2, -1, -1):
            expected[t] = rewards[t] + gaps[t] * expected[t + 1]
        for head in (SKILL_HEAD, MOVE_HEAD):
            np.testing.assert_allclose(retrace_targets(ep, p, head), expected,
                                       atol=1e-9, rtol=0.0)


def test_retrace_noop_only_masks_equal_monte_carlo():
    # a single available skill forces a deterministic policy, so the skill
    # head's Q(x, a) is exactly V(x) and the recursion again collapses
    p = make_params(seed=6)
    rng = np.random.default_rng(7)
    mask = np.zeros(CFG.n_skills, dtype=bool)
    mask[0] = True
    ep = collect_episode(p, 4, rng, masks=[mask] * 4, gap=0.9)
    rewards = [tr.reward for tr in ep.transitions]
    expected = np.empty(4)
    expected[-1] = rewards[-1]
    for t in range(2, -1, -1):
        expected[t] = rewards[t] + 0.9 * expected[t + 1]
    np.testing.assert_allclose(retrace_targets(ep, p, SKILL_HEAD), expected, atol=1e-9)


def test_retrace_purity():
    p = make_params(seed=8)
    ep = collect_episode(p, 6, np.random.default_rng(9), off_policy=True)
    a = retrace_targets(ep, p, SKILL_HEAD)
    b = retrace_targets(ep, p, SKILL_HEAD)
    assert np.array_equal(a, b)


# -- policy gradient terms --------------------------------------------------

def test_bias_correction_zero_on_policy():
    p = make_params(seed=10)
    rng = np.random.default_rng(11)
    for _ in range(50):
        mask = rng.random(CFG.n_skills) < 0.7
        mask[0] = True
        out, _ = forward_pair(p, rng, mask)
        grad = bias_correction_logits(out.skill_probs, out.skill_q, out.skill_probs)
        assert np.all(grad == 0.0)


def forward_pair(p, rng, mask):
    from minibrawl.net import forward, zero_hidden
    return forward(p, rng.normal(size=p.config.obs_dim), zero_hidden(p), mask)


def test_bias_correction_zero_when_ratios_below_clip():
    probs = np.array([0.5, 0.3, 0.2])
    behavior = np.array([0.2, 0.4, 0.4])   # max ratio 2.5
    q = np.array([1.0, -1.0, 0.5])
    assert np.all(bias_correction_logits(probs, q, behavior, c=2.5) == 0.0)
    assert np.any(bias_correction_logits(probs, q, behavior, c=2.0) != 0.0)


def test_zero_advantage_zero_on_sample_term():
    probs = np.array([0.25, 0.25, 0.5])
    assert np.all(onsample_policy_logits(probs, 1, rho_bar=3.0, advantage=0.0) == 0.0)


def test_fully_on_policy_zero_reward_zero_q_gives_zero_gradient():
    p = zero_params()
    ep = collect_episode(p, 4, np.random.default_rng(12), rewards=np.zeros(4))
    grad, stats = acer_gradient([ep], p, BOTH_HEADS)
    assert np.all(grad.flat() == 0.0)
    assert stats["skill_critic_loss"] == 0.0


def test_bandit_estimator_matches_exact_policy_gradient():
    # single terminal tick, constant trunk state, critic preloaded with the
    # exact per-action rewards: averaging the estimator over the behavior
    # distribution must reproduce the exact gradient of expected reward
    rng = np.random.default_rng(13)
    n = 4
    rewards = np.array([0.5, -0.2, 1.0, 0.1])
    logits = np.array([0.3, -0.4, 0.9, 0.0])
    probs = np.exp(logits) / np.exp(logits).sum()
    behavior = np.array([0.4, 0.3, 0.1, 0.2])
    c = 1.3   # low enough that some ratios exceed it
    assert np.any(probs / behavior > c)
    value = float(probs @ rewards)
    expected_descent = np.zeros(n)
    for a in range(n):
        _, rho_bar = importance_ratio(float(probs[a]), float(behavior[a]), c)
        expected_descent += behavior[a] * onsample_policy_logits(
            probs, a, rho_bar, rewards[a] - value)
    expected_descent += bias_correction_logits(probs, rewards, behavior, c)
    exact_descent = -softmax_vjp(probs, rewards)
    np.testing.assert_allclose(expected_descent, exact_descent, atol=1e-6)


def test_maintained_only_move_ticks_give_zero_move_gradient():
    p = make_params(seed=14)
    ep = collect_episode(p, 4, np.random.default_rng(15))
    for tr in ep.transitions:
        tr.move_fresh = False
        tr.behavior_move_dist = None
    grad, stats = acer_gradient([ep], p, MOVE_HEAD)
    assert np.all(grad.flat() == 0.0)
    assert stats["n_move"] == 0


def test_numeric_error_names_episode_and_tick():
    p = make_params(seed=16)
    ep = collect_episode(p, 3, np.random.default_rng(17))
    ep.transitions[1].reward = float("nan")
    with pytest.raises(NumericError, match=r"episode 0.*tick"):
        acer_gradient([ep], p, SKILL_HEAD)


# -- finite-difference oracle for the full gradient -------------------------

def frozen_surrogate(episodes, params0, c):
    """Scalar loss whose exact gradient at params0 is the learner gradient.

    All estimator coefficients (clipped ratios, advantages, correction
    weights, return targets) are evaluated at params0 and frozen, leaving
    only the direct dependence on the policy and critic outputs.
    """
    n_skill = sum(len(e) for e in episodes)
    n_move = sum(sum(tr.move_fresh for tr in e.transitions) for e in episodes) or 1
    frozen = []
    for ep in episodes:
        tape = episode_tape(ep, params0)
        tgt_s = retrace_targets(ep, params0, SKILL_HEAD, tape)
        tgt_m = retrace_targets(ep, params0, MOVE_HEAD, tape)
        per = []
        for t, tr in enumerate(ep.transitions):
            out = tape.outputs[t]
            entry = {}
            pi, q, v = out.skill_probs, out.skill_q, out.skill_value
            _, rho_bar = importance_ratio(float(pi[tr.skill]), tr.behavior_probs[0], c)
            wt = np.zeros_like(pi)
            sup = pi > 0.0
            wt[sup] = np.maximum(0.0, 1.0 - c * tr.behavior_skill_dist[sup] / pi[sup])
            entry["s"] = (rho_bar, tgt_s[t] - v, wt * (q - v), tgt_s[t])
            if tr.move_fresh:
                pim, qm, vm = out.move_probs, out.move_q, out.move_value
                _, rbm = importance_ratio(float(pim[tr.move]), tr.behavior_probs[1], c)
                wtm = np.maximum(0.0, 1.0 - c * tr.behavior_move_dist / pim)
                entry["m"] = (rbm, tgt_m[t] - vm, wtm * (qm - vm), tgt_m[t])
            per.append(entry)
        frozen.append(per)

    def loss(params):
        total = 0.0
        for ep, per in zip(episodes, frozen):
            tape = episode_tape(ep, params)
            for t, tr in enumerate(ep.transitions):
                out = tape.outputs[t]
                rho_bar, adv, beta, tgt = per[t]["s"]
                surrogate = (rho_bar * adv * np.log(out.skill_probs[tr.skill])
                             + float(beta @ out.skill_probs))
                total += (-surrogate + 0.5 * (float(out.skill_q[tr.skill]) - tgt) ** 2) / n_skill
                if "m" in per[t]:
                    rho_bar, adv, beta, tgt = per[t]["m"]
                    surrogate = (rho_bar * adv * np.log(out.move_probs[tr.move])
                                 + float(beta @ out.move_probs))
                    total += (-surrogate + 0.5 * (float(out.move_q[tr.move]) - tgt) ** 2) / n_move
        return total

    return loss


def fd_gradient(loss, params, eps=1e-5):
    g = params.zeros_like()
    for name, arr in params.arrays().items():
        garr = getattr(g, name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss(params)
            arr[idx] = orig - eps
            down = loss(params)
            arr[idx] = orig
            garr[idx] = (up - down) / (2 * eps)
    return g


@pytest.mark.parametrize("c", [RATIO_CLIP, 1.0])
def test_full_gradient_matches_finite_differences(c):
    cfg = NetConfig(obs_dim=5, n_skills=4, n_moves=6, hidden=8)
    p = NetworkParams.initialize(cfg, np.random.default_rng(18))
    rng = np.random.default_rng(19)
    episodes = [collect_episode(p, 3, rng, off_policy=True, maintain=2)
                for _ in range(2)]
    analytic, _ = acer_gradient(episodes, p, BOTH_HEADS, c=c)
    fd = fd_gradient(frozen_surrogate(episodes, p, c), p)
    err = np.linalg.norm(analytic.flat() - fd.flat()) / np.linalg.norm(fd.flat())
    assert err < 1e-4


# -- optimizer --------------------------------------------------------------

def test_zero_gradient_fresh_state_leaves_params_unchanged():
    p = make_params(seed=20)
    state = LearnerState.fresh(p)
    new = update_step(state, p.zeros_like())
    assert np.array_equal(new.params.flat(), p.flat())
    assert new.step == 1


def test_global_norm_clipping():
    p = make_params(seed=21)
    grad = p.zeros_like()
    grad.wz[...] = 1.0
    grad.wz *= 100.0 / global_norm(grad)
    clipped, norm = clip_by_global_norm(grad, max_norm=10.0)
    assert norm == pytest.approx(100.0)
    assert global_norm(clipped) == pytest.approx(10.0)


def test_clipped_update_equals_update_with_prescaled_gradient():
    p = make_params(seed=22)
    grad = p.zeros_like()
    grad.uz[...] = 3.0
    grad.uz *= 100.0 / global_norm(grad)
    manual = grad.copy()
    for arr in manual.arrays().values():
        arr *= 0.1
    a = update_step(LearnerState.fresh(p), grad)
    b = update_step(LearnerState.fresh(p), manual)
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_update_determinism():
    p = make_params(seed=23)
    grad = NetworkParams.initialize(p.config, np.random.default_rng(24))
    a = update_step(LearnerState.fresh(p), grad.copy())
    b = update_step(LearnerState.fresh(p), grad.copy())
    assert np.array_equal(a.params.flat(), b.params.flat())
    assert np.array_equal(a.adam_m.flat(), b.adam_m.flat())


def test_critic_loss_decreases_on_frozen_batch():
    p = make_params(seed=25)
    rng = np.random.default_rng(26)
    batch = [collect_episode(p, 8, rng) for _ in range(4)]
    state = LearnerState.fresh(p)
    losses = []
    for _ in range(100):
        grad, stats = acer_gradient(batch, state.params, BOTH_HEADS)
        losses.append(stats["skill_critic_loss"] + stats["move_critic_loss"])
        state = update_step(state, grad)
    assert losses[-1] < losses[0]
    assert max(np.diff(losses)) < 1e-4


def test_head_alternation():
    assert [head_for_step(s) for s in range(4)] == [
        SKILL_HEAD, MOVE_HEAD, SKILL_HEAD, MOVE_HEAD]


# -- replay buffer ----------------------------------------------------------

def test_replay_ring_evicts_oldest():
    buf = ReplayBuffer(capacity=3)
    p = zero_params()
    rng = np.random.default_rng(27)
    eps = [collect_episode(p, 2, rng) for _ in range(5)]
    for ep in eps:
        buf.add(ep)
    assert len(buf) == 3
    assert buf.total_added == 5
    sampled = buf.sample(np.random.default_rng(0), batch=50)
    assert all(s in eps[2:] for s in sampled)


def test_replay_uniform_sampling():
    buf = ReplayBuffer(capacity=10)
    p = zero_params()
    rng = np.random.default_rng(28)
    eps = [collect_episode(p, 2, rng) for _ in range(10)]
    for ep in eps:
        buf.add(ep)
    counts = np.zeros(10)
    draws = buf.sample(np.random.default_rng(1), batch=20_000)
    index = {id(ep): i for i, ep in enumerate(eps)}
    for ep in draws:
        counts[index[id(ep)]] += 1
    expected = 2000.0
    sigma = np.sqrt(20_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - expected) < 4 * sigma)


def test_replay_empty_raises():
    with pytest.raises(ValueError):
        ReplayBuffer().sample(np.random.default_rng(0), batch=1)


def test_replay_default_batch_size():
    buf = ReplayBuffer()
    p = zero_params()
    buf.add(collect_episode(p, 2, np.random.default_rng(29)))
    assert len(buf.sample(np.random.default_rng(2))) == BATCH_EPISODES
