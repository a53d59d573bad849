"""Match playouts, policy wrappers, and evaluation statistics.

The rollout engine here is shared by training collection and by
evaluation. Policies expose `reset()` and `decide(env, state, side)`;
the network policy applies move maintenance and passive-tick skipping
at decision time, the scripted opponent is a small deterministic state
machine, and the reaction-delay wrapper makes decisions take effect a
human-like couple of ticks after they were made.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .arena import (
    FACE_OPPONENT,
    MOVE_DIRS,
    N_TARGETINGS,
    NO_MOVE,
    Arena,
    ArenaState,
    JointAction,
    Outcome,
    Side,
    STYLES,
    StyleConfig,
)
from .net import (
    NetworkParams,
    distribution_entropy,
    forward,
    forward_episode,
    sample_index,
    zero_hidden,
)
from .pipeline import MAINTAIN_TICKS, MoveMaintainer, RawTick
from .skills import SkillFunction

DELAY_SUPPORT = (2, 3)
DELAY_PROBS = (0.7, 0.3)   # mean 2.3 ticks = 230 ms at 0.1 s per tick


@dataclass(slots=True, eq=False)
class DecisionInfo:
    """What a recordable policy reveals about one decision tick. Passive
    ticks carry only the mask and the emitted action; the observation and
    distributions stay None because the network was never consulted."""

    obs: np.ndarray | None
    skill_mask: np.ndarray
    skill: int
    move: int
    behavior_skill_dist: np.ndarray | None
    behavior_move_dist: np.ndarray | None
    move_phase: int


class Policy(Protocol):
    def reset(self) -> None: ...

    def decide(self, env: Arena, state: ArenaState,
               side: Side) -> tuple[JointAction, DecisionInfo | None]: ...


class NetPolicy:
    """Plays a parameter snapshot with move maintenance and, by default,
    passive-tick skipping: ticks where only no-op is available never
    reach the network, so the recurrent state advances on retained ticks
    only. With `skip_passive=False` every tick is fed and reported."""

    def __init__(self, params: NetworkParams, rng: np.random.Generator | None = None,
                 *, maintain: int = MAINTAIN_TICKS, skip_passive: bool = True):
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.maintainer = MoveMaintainer(maintain)
        self.skip_passive = skip_passive
        self._h = zero_hidden(params)

    def seed(self, key) -> None:
        self.rng = np.random.default_rng(key)

    def reset(self) -> None:
        self._h = zero_hidden(self.params)
        self.maintainer.reset()

    def decide(self, env: Arena, state: ArenaState,
               side: Side) -> tuple[JointAction, DecisionInfo]:
        mask = env.available_skills(state, side)
        if self.skip_passive and not mask[1:].any():
            move = self.maintainer.passive()
            info = DecisionInfo(obs=None, skill_mask=mask, skill=0, move=move,
                                behavior_skill_dist=None, behavior_move_dist=None,
                                move_phase=self.maintainer.phase)
            return JointAction(0, move), info
        obs = env.observe(state, side)
        out, self._h = forward(self.params, obs, self._h, mask)
        skill = sample_index(out.skill_probs, self.rng)
        if self.maintainer.needs_decision():
            move = self.maintainer.start(sample_index(out.move_probs, self.rng))
            move_dist = out.move_probs.copy()
        else:
            move = self.maintainer.maintained()
            move_dist = None
        info = DecisionInfo(obs=obs, skill_mask=mask, skill=skill, move=move,
                            behavior_skill_dist=out.skill_probs.copy(),
                            behavior_move_dist=move_dist,
                            move_phase=self.maintainer.phase)
        return JointAction(skill, move), info


def direction_toward(vec: Sequence[float]) -> int:
    """Compass direction index whose unit vector best matches `vec`."""
    best, best_dot = 0, -math.inf
    for d in range(8):
        dot = MOVE_DIRS[d][0] * vec[0] + MOVE_DIRS[d][1] * vec[1]
        if dot > best_dot:
            best, best_dot = d, dot
    return best


def move_index(direction: int, targeting: int = FACE_OPPONENT) -> int:
    return direction * N_TARGETINGS + targeting


class ScriptedPolicy:
    """Deterministic built-in opponent: close the distance, attack with
    its strongest usable damage skill while in range, and back off to
    regenerate when skill points run low."""

    def __init__(self, env: Arena, *, skills: tuple[str, ...] = ("slash", "jab"),
                 retreat_sp: float = 1.0, resume_sp: float = 4.0):
        by_name = {s.name: s for s in env.roster.skills}
        self.attacks = [by_name[name] for name in skills]
        for s in self.attacks:
            if s.function is not SkillFunction.DAMAGE:
                raise ValueError(
                    f"scripted opponent only attacks; {s.name} is {s.function.name}")
        self.attacks.sort(key=lambda s: -s.damage)
        self.retreat_sp = retreat_sp
        self.resume_sp = resume_sp
        self._retreating = False

    def reset(self) -> None:
        self._retreating = False

    def decide(self, env: Arena, state: ArenaState,
               side: Side) -> tuple[JointAction, None]:
        me = state.combatant(side)
        foe = state.combatant(side.other)
        mask = env.available_skills(state, side)
        delta = foe.position - me.position
        dist = float(np.hypot(delta[0], delta[1]))
        if not self._retreating and me.sp <= self.retreat_sp:
            self._retreating = True
        elif self._retreating and me.sp >= self.resume_sp:
            self._retreating = False

        skill = 0
        if not self._retreating:
            for s in self.attacks:
                if mask[s.id] and dist <= s.range:
                    skill = s.id
                    break

        if self._retreating:
            move = move_index(direction_toward(-delta))
        elif dist > min(s.range for s in self.attacks) * 0.8:
            move = move_index(direction_toward(delta))
        else:
            move = NO_MOVE
        return JointAction(skill, move), None


class IdlePolicy:
    """Stands still and never uses a skill."""

    def reset(self) -> None:
        pass

    def decide(self, env: Arena, state: ArenaState,
               side: Side) -> tuple[JointAction, None]:
        return JointAction(0, NO_MOVE), None


class DelayedPolicy:
    """Applies each inner decision d ticks after it was made, with d
    drawn per decision from `support`/`probs`. Pending actions are taken
    up strictly in decision order, so a later decision never overtakes
    an earlier one; until the first action falls due the policy idles.
    If the due skill has meanwhile become unavailable it is replaced by
    no-op while the movement part is kept."""

    def __init__(self, inner: Policy, rng: np.random.Generator | None = None,
                 *, support: tuple[int, ...] = DELAY_SUPPORT,
                 probs: tuple[float, ...] = DELAY_PROBS):
        if len(support) != len(probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("delay probabilities must match support and sum to 1")
        if min(support) < 0:
            raise ValueError("delays must be non-negative")
        self.inner = inner
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.support = support
        self._cdf = np.cumsum(probs)
        self.applied_delays: list[int] = []
        self.applied_order: list[int] = []
        self.reset()

    def seed(self, key) -> None:
        # Distinct stream from the inner policy so reseeding both from the
        # same match key never correlates delays with action sampling.
        parts = list(key) if isinstance(key, tuple) else [key]
        self.rng = np.random.default_rng([104729, *parts])
        if hasattr(self.inner, "seed"):
            self.inner.seed(key)

    def reset(self) -> None:
        self.inner.reset()
        self._queue: deque[tuple[int, int, int, JointAction]] = deque()
        self._current = JointAction(0, NO_MOVE)
        self._decisions = 0

    def _draw_delay(self) -> int:
        i = int(np.searchsorted(self._cdf, self.rng.random(), side="right"))
        return self.support[min(i, len(self.support) - 1)]

    def decide(self, env: Arena, state: ArenaState,
               side: Side) -> tuple[JointAction, None]:
        action, _ = self.inner.decide(env, state, side)
        self._queue.append((state.tick + self._draw_delay(), state.tick,
                            self._decisions, action))
        self._decisions += 1
        # Due times are non-decreasing in decision order (the made tick
        # advances by one per decision while delays differ by at most one),
        # so a FIFO scan suffices and preserves order.
        while self._queue and self._queue[0][0] <= state.tick:
            _, made, order, act = self._queue.popleft()
            self._current = act
            self.applied_delays.append(state.tick - made)
            self.applied_order.append(order)
        mask = env.available_skills(state, side)
        emitted = (self._current if mask[self._current.skill]
                   else JointAction(0, self._current.move))
        return emitted, None


def apply_reaction_delay(policy: Policy,
                         rng: np.random.Generator | None = None) -> DelayedPolicy:
    """Wrap a policy so its decisions land 2 ticks later 70% of the time
    and 3 ticks later otherwise, i.e. 230 ms on average."""
    return DelayedPolicy(policy, rng)


@dataclass(slots=True, eq=False)
class EpisodeResult:
    outcome: Outcome           # from the agent side's point of view
    length: int
    final_state: ArenaState
    damage_dealt: float        # HP the agent side removed from the opponent
    damage_taken: float
    raw_ticks: list[RawTick] | None = None
    trace: list[ArenaState] | None = None

    @property
    def return_agent(self) -> float:
        return sum(t.reward for t in self.raw_ticks) if self.raw_ticks else 0.0


def play_episode(env: Arena, agent: Policy, opponent: Policy, *,
                 style: StyleConfig | None = None, seed: int = 0,
                 record: bool = False, trace: bool = False) -> EpisodeResult:
    """Run one match to completion. With `record=True` the agent policy
    must report DecisionInfo every tick and the result carries RawTicks
    whose rewards are the agent-side style-shaped rewards (the baseline
    style when none is given, which equals the raw reward)."""
    cfg = style if style is not None else STYLES["baseline"]
    agent.reset()
    opponent.reset()
    state = env.reset(seed)
    ticks: list[RawTick] = [] if record else None
    states: list[ArenaState] = [state.copy()] if trace else None
    dealt = taken = 0.0
    while not state.done:
        a_act, a_info = agent.decide(env, state, Side.AGENT)
        o_act, _ = opponent.decide(env, state, Side.OPPONENT)
        nxt, _, _ = env.step(state, a_act, o_act)
        if record:
            if a_info is None:
                raise ValueError("recording requires a policy that reports decisions")
            ticks.append(RawTick(
                obs=a_info.obs, skill_mask=a_info.skill_mask,
                skill=a_info.skill, move=a_info.move,
                behavior_skill_dist=a_info.behavior_skill_dist,
                behavior_move_dist=a_info.behavior_move_dist,
                reward=env.style_reward(state, nxt, cfg),
                move_phase=a_info.move_phase))
        dealt += state.opponent.hp - nxt.opponent.hp
        taken += state.agent.hp - nxt.agent.hp
        state = nxt
        if trace:
            states.append(state.copy())
    return EpisodeResult(outcome=state.outcome, length=state.tick,
                         final_state=state, damage_dealt=dealt,
                         damage_taken=taken, raw_ticks=ticks, trace=states)


@dataclass(slots=True, eq=False)
class MatchSummary:
    """Aggregate over matches from side A's point of view."""

    wins: int = 0
    losses: int = 0
    draws: int = 0
    lengths: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.wins + self.losses + self.draws

    @property
    def win_rate(self) -> float:
        """Draws count as half a win for either side."""
        if self.count == 0:
            raise ValueError("no matches played")
        return (self.wins + 0.5 * self.draws) / self.count

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths))

    def record(self, outcome: Outcome, length: int) -> None:
        if outcome is Outcome.AGENT_WIN:
            self.wins += 1
        elif outcome is Outcome.OPPONENT_WIN:
            self.losses += 1
        else:
            self.draws += 1
        self.lengths.append(length)


def play_matches(env: Arena, policy_a: Policy, policy_b: Policy, count: int, *,
                 seed: int = 0, style: StyleConfig | None = None) -> MatchSummary:
    """Play `count` matches with per-match reseeding of any seedable
    policy, so results are reproducible regardless of policy internals."""
    summary = MatchSummary()
    for i in range(count):
        if hasattr(policy_a, "seed"):
            policy_a.seed((seed, i, 0))
        if hasattr(policy_b, "seed"):
            policy_b.seed((seed, i, 1))
        res = play_episode(env, policy_a, policy_b, style=style, seed=seed * 100003 + i)
        summary.record(res.outcome, res.length)
    return summary


def binomial_tail(k: int, n: int, p: float = 0.5) -> float:
    """P[X >= k] for X ~ Binomial(n, p), computed exactly in log space.
    This is the one-sided p-value for observing k or more successes."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    if k == 0:
        return 1.0
    total = 0.0
    log_p, log_q = math.log(p), math.log1p(-p)
    for j in range(k, n + 1):
        log_c = (math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1))
        total += math.exp(log_c + j * log_p + (n - j) * log_q)
    return min(total, 1.0)


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def move_policy_entropy(params: NetworkParams,
                        sequences: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean entropy of the movement head over recorded decision
    sequences, each a (T, obs_dim) observation array with its (T,
    n_skills) mask array. Replaying through forward_episode reproduces
    the hidden-state trajectory the policy had when the data was
    collected with skipping."""
    total, count = 0.0, 0
    for obs_seq, mask_seq in sequences:
        tape = forward_episode(params, obs_seq, mask_seq)
        for out in tape.outputs:
            total += distribution_entropy(out.move_probs)
            count += 1
    if count == 0:
        raise ValueError("no decision states to evaluate")
    return total / count


def decision_sequences(episodes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack each episode's retained observations and masks for replay
    through the network. Accepts anything with a `transitions` list."""
    out = []
    for ep in episodes:
        ts = ep.transitions
        if not ts:
            continue
        obs = np.stack([t.obs for t in ts])
        mask = np.stack([t.skill_mask for t in ts])
        out.append((obs, mask))
    return out
