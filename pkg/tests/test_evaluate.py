"""Policy wrappers, match playouts, and evaluation statistics."""

import math

import numpy as np
import pytest

from minibrawl.arena import (
    NO_MOVE,
    JointAction,
    Outcome,
    Side,
    default_arena,
)
from minibrawl.evaluate import (
    DelayedPolicy,
    IdlePolicy,
    MatchSummary,
    NetPolicy,
    ScriptedPolicy,
    apply_reaction_delay,
    binomial_tail,
    decision_sequences,
    move_policy_entropy,
    play_episode,
    play_matches,
    wilson_interval,
)
from minibrawl.net import NetConfig, NetworkParams
from minibrawl.pipeline import filter_episode, raw_return

ENV = default_arena()


def small_params(seed=0, hidden=16):
    cfg = NetConfig(obs_dim=ENV.obs_dim, n_skills=ENV.roster.n_skills,
                    hidden=hidden)
    return NetworkParams.initialize(cfg, np.random.default_rng(seed))


class FixedPolicy:
    """Always plays the same action; for delay-wrapper unit tests."""

    def __init__(self, action):
        self.action = action

    def reset(self):
        pass

    def decide(self, env, state, side):
        return self.action, None


# -- scripted opponent ------------------------------------------------------

def test_scripted_beats_idle():
    summary = play_matches(ENV, ScriptedPolicy(ENV), IdlePolicy(), 5)
    assert summary.wins == 5
    assert summary.losses == 0
    assert summary.mean_length < 900


def test_play_episode_deterministic_for_deterministic_policies():
    a = play_episode(ENV, ScriptedPolicy(ENV), ScriptedPolicy(ENV, skills=("jab",)), seed=3)
    b = play_episode(ENV, ScriptedPolicy(ENV), ScriptedPolicy(ENV, skills=("jab",)), seed=3)
    assert a.outcome == b.outcome
    assert a.length == b.length
    assert np.array_equal(a.final_state.agent.position, b.final_state.agent.position)
    assert a.final_state.opponent.hp == b.final_state.opponent.hp


def test_scripted_rejects_non_damage_skills():
    with pytest.raises(ValueError, match="only attacks"):
        ScriptedPolicy(ENV, skills=("stun_palm",))


# -- reaction delay ---------------------------------------------------------

def test_delay_mean_support_and_order():
    dp = apply_reaction_delay(IdlePolicy(), np.random.default_rng(7))
    state = ENV.reset(0)
    for t in range(100_000):
        state.tick = t
        dp.decide(ENV, state, Side.AGENT)
    delays = np.array(dp.applied_delays)
    assert set(np.unique(delays)) <= {2, 3}
    assert abs(delays.mean() - 2.3) < 0.023   # within 1% of 2.3 ticks
    order = dp.applied_order
    assert all(a < b for a, b in zip(order, order[1:]))


def test_delay_degenerate_at_zero_matches_inner():
    opponent = ScriptedPolicy(ENV, skills=("jab",))
    plain = play_episode(ENV, ScriptedPolicy(ENV), opponent, seed=5)
    wrapped = DelayedPolicy(ScriptedPolicy(ENV), support=(0,), probs=(1.0,))
    delayed = play_episode(ENV, wrapped, opponent, seed=5)
    assert plain.outcome == delayed.outcome
    assert plain.length == delayed.length
    assert plain.final_state.agent.hp == delayed.final_state.agent.hp
    assert np.array_equal(plain.final_state.agent.position,
                          delayed.final_state.agent.position)


def test_delay_idles_until_first_action_due():
    dp = DelayedPolicy(ScriptedPolicy(ENV), support=(2,), probs=(1.0,))
    state = ENV.reset(0)
    for t in range(2):
        state.tick = t
        action, _ = dp.decide(ENV, state, Side.AGENT)
        assert action == JointAction(0, NO_MOVE)
    state.tick = 2
    action, _ = dp.decide(ENV, state, Side.AGENT)
    assert action.move != NO_MOVE   # tick-0 approach decision lands now


def test_delay_substitutes_noop_when_skill_unavailable():
    slash = 2
    dp = DelayedPolicy(FixedPolicy(JointAction(slash, NO_MOVE)),
                       support=(2,), probs=(1.0,))
    state = ENV.reset(0)
    for t in range(2):
        state.tick = t
        dp.decide(ENV, state, Side.AGENT)
    state.tick = 2
    state.agent.cooldowns[slash] = 99   # due action's skill now blocked
    action, _ = dp.decide(ENV, state, Side.AGENT)
    assert action == JointAction(0, NO_MOVE)
    assert dp.applied_delays == [2]

    dp.reset()
    state = ENV.reset(0)
    for t in range(3):
        state.tick = t
        action, _ = dp.decide(ENV, state, Side.AGENT)
    assert action.skill == slash        # available: applied as decided


def test_delayed_net_policy_full_match():
    dp = apply_reaction_delay(NetPolicy(small_params()), np.random.default_rng(3))
    res = play_episode(ENV, dp, ScriptedPolicy(ENV), seed=11)
    assert res.outcome in (Outcome.AGENT_WIN, Outcome.OPPONENT_WIN, Outcome.DRAW)
    assert set(dp.applied_delays) <= {2, 3}
    assert all(a < b for a, b in zip(dp.applied_order, dp.applied_order[1:]))


def test_delay_rejects_bad_distribution():
    with pytest.raises(ValueError):
        DelayedPolicy(IdlePolicy(), support=(2, 3), probs=(0.6, 0.3))


# -- network policy ---------------------------------------------------------

def test_net_policy_passive_tick_bypasses_network():
    policy = NetPolicy(small_params(), np.random.default_rng(0))
    policy.reset()
    state = ENV.reset(0)
    state.agent.cooldowns[:] = 50       # nothing but no-op available
    action, info = policy.decide(ENV, state, Side.AGENT)
    assert action.skill == 0
    assert info.obs is None
    assert info.behavior_skill_dist is None

    noskip = NetPolicy(small_params(), np.random.default_rng(0), skip_passive=False)
    noskip.reset()
    action, info = noskip.decide(ENV, state, Side.AGENT)
    assert action.skill == 0
    assert info.obs is not None
    assert info.behavior_skill_dist[0] == pytest.approx(1.0)


def test_net_policy_recorded_episode_folds_exactly():
    policy = NetPolicy(small_params(), np.random.default_rng(1))
    res = play_episode(ENV, policy, ScriptedPolicy(ENV), record=True, seed=2)
    raw = res.raw_ticks
    assert len(raw) == res.length
    for tick in raw:
        fresh = tick.move_phase == 0
        assert (tick.behavior_move_dist is not None) == (fresh and tick.obs is not None)
        if tick.obs is not None:
            assert tick.behavior_skill_dist is not None
    episode = filter_episode(raw)
    for tr in episode.transitions:
        tr.validate()
    assert episode.folded_return() == pytest.approx(
        raw_return(t.reward for t in raw), abs=1e-9)


def test_net_policy_maintains_moves():
    policy = NetPolicy(small_params(), np.random.default_rng(2), maintain=10)
    res = play_episode(ENV, policy, ScriptedPolicy(ENV), record=True, seed=4)
    active = [t for t in res.raw_ticks if t.obs is not None]
    fresh = [t for t in active if t.move_phase == 0]
    assert fresh
    assert len(fresh) < len(active)     # most active ticks reuse the move
    for a, b in zip(active, active[1:]):
        if b.move_phase != 0 and b.move != NO_MOVE:
            assert b.move == a.move     # held for the whole window

    every_tick = NetPolicy(small_params(), np.random.default_rng(2), maintain=1)
    res1 = play_episode(ENV, every_tick, ScriptedPolicy(ENV), record=True, seed=4)
    assert all(t.move_phase == 0 for t in res1.raw_ticks if t.obs is not None)


def test_play_matches_reproducible():
    def run():
        return play_matches(ENV, NetPolicy(small_params()), ScriptedPolicy(ENV),
                            3, seed=9)
    a, b = run(), run()
    assert (a.wins, a.losses, a.draws) == (b.wins, b.losses, b.draws)
    assert a.lengths == b.lengths


# -- statistics -------------------------------------------------------------

def test_binomial_tail_exact_values():
    assert binomial_tail(0, 10) == 1.0
    assert binomial_tail(10, 10) == pytest.approx(0.5 ** 10, rel=1e-12)
    expected = sum(math.comb(20, j) for j in range(13, 21)) / 2 ** 20
    assert binomial_tail(13, 20) == pytest.approx(expected, rel=1e-12)
    expected = sum(math.comb(15, j) * 0.3 ** j * 0.7 ** (15 - j) for j in range(4, 16))
    assert binomial_tail(4, 15, 0.3) == pytest.approx(expected, rel=1e-12)


def test_wilson_interval_properties():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert lo + hi == pytest.approx(1.0, abs=1e-12)
    assert wilson_interval(0, 100)[0] == 0.0
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo_small, _ = wilson_interval(5, 100)
    assert lo_small < lo


def test_match_summary_counts_draws_as_half():
    summary = MatchSummary()
    summary.record(Outcome.AGENT_WIN, 100)
    summary.record(Outcome.DRAW, 1800)
    assert summary.win_rate == pytest.approx(0.75)
    assert summary.mean_length == pytest.approx(950.0)


def test_move_entropy_uniform_and_peaked():
    params = small_params()
    params.w_move_pi[:] = 0.0
    params.b_move_pi[:] = 0.0
    obs = np.zeros((4, ENV.obs_dim))
    mask = np.ones((4, ENV.roster.n_skills), dtype=bool)
    ent = move_policy_entropy(params, [(obs, mask)])
    assert ent == pytest.approx(math.log(18), abs=1e-12)

    params.b_move_pi[3] = 500.0         # essentially deterministic head
    assert move_policy_entropy(params, [(obs, mask)]) < 1e-6


def test_decision_sequences_from_recorded_play():
    policy = NetPolicy(small_params(), np.random.default_rng(5))
    res = play_episode(ENV, policy, ScriptedPolicy(ENV), record=True, seed=6)
    episode = filter_episode(res.raw_ticks)
    seqs = decision_sequences([episode])
    assert len(seqs) == 1
    obs, mask = seqs[0]
    assert obs.shape == (len(episode.transitions), ENV.obs_dim)
    ent = move_policy_entropy(small_params(), seqs)
    assert 0.0 < ent <= math.log(18) + 1e-12
