"""Off-policy actor-critic learner with truncated importance sampling.

The policy gradient combines an on-sample term, with the importance
ratio clipped at RATIO_CLIP, and a bias-correction expectation that is
enumerated exactly over the small discrete action sets. Critic heads
regress toward multi-step return targets computed per head with ratios
truncated at 1 inside the recursion. Updates alternate between the
skill heads and the move heads; the trunk is updated by both. All
gradients are for descent on the scalar training loss.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .arena import Outcome
from .net import (
    EpisodeTape,
    HeadGradients,
    NetworkParams,
    NumericError,
    backward,
    distribution_entropy,
    forward_episode,
    softmax_vjp,
)

GAMMA = 0.995
RATIO_CLIP = 10.0          # truncation c in the on-sample policy term
TARGET_RATIO_CLIP = 1.0    # truncation inside the return recursion
LEARNING_RATE = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 10.0
REPLAY_CAPACITY = 5000
BATCH_EPISODES = 16

SKILL_HEAD = "skill"
MOVE_HEAD = "move"
BOTH_HEADS = "both"


class DataCorruptionError(ValueError):
    """A recorded transition violates its invariants (e.g. zero behavior
    probability for the action that was actually taken)."""


@dataclass(slots=True, eq=False)
class Transition:
    """One retained decision tick of the off-policy training record.

    `reward` already contains any folded rewards of discarded ticks and
    `gap_discount` is gamma raised to the tick distance to the next
    retained transition. `behavior_move_dist` is recorded only at fresh
    move decisions; on maintained ticks the move is a deterministic
    continuation and `move_fresh` is False.
    """

    obs: np.ndarray
    skill_mask: np.ndarray
    skill: int
    move: int
    behavior_skill_dist: np.ndarray
    behavior_move_dist: np.ndarray | None
    reward: float
    gap_discount: float
    terminal: bool
    move_fresh: bool

    @property
    def behavior_probs(self) -> tuple[float, float]:
        """Collection-time probabilities of the recorded (skill, move)."""
        p_move = float(self.behavior_move_dist[self.move]) if self.move_fresh else 1.0
        return float(self.behavior_skill_dist[self.skill]), p_move

    def validate(self) -> None:
        p_skill, p_move = self.behavior_probs
        if not (0.0 < p_skill <= 1.0):
            raise DataCorruptionError(f"skill behavior probability {p_skill} outside (0, 1]")
        if not (0.0 < p_move <= 1.0):
            raise DataCorruptionError(f"move behavior probability {p_move} outside (0, 1]")
        if not (0.0 < self.gap_discount <= 1.0):
            raise DataCorruptionError(f"gap discount {self.gap_discount} outside (0, 1]")
        if not np.isfinite(self.reward):
            raise DataCorruptionError("non-finite reward")
        if not self.skill_mask[self.skill]:
            raise DataCorruptionError(f"recorded skill {self.skill} is masked out")
        if self.move_fresh != (self.behavior_move_dist is not None):
            raise DataCorruptionError("move distribution presence disagrees with move_fresh")


@dataclass(slots=True, eq=False)
class EpisodeLog:
    """Ordered transitions of one finished match plus its provenance."""

    transitions: list[Transition]
    style: str = "baseline"
    agent_snapshot: str = ""
    opponent_snapshot: str = ""
    outcome: Outcome = Outcome.DRAW

    def __len__(self) -> int:
        return len(self.transitions)

    def validate(self) -> None:
        if not self.transitions:
            raise DataCorruptionError("empty episode")
        for tr in self.transitions:
            tr.validate()
        flags = [tr.terminal for tr in self.transitions]
        if flags != [False] * (len(flags) - 1) + [True]:
            raise DataCorruptionError("episode must end with its single terminal transition")


def importance_ratio(target_prob: float, behavior_prob: float,
                     c: float = RATIO_CLIP) -> tuple[float, float]:
    """Return (rho, clipped rho) for one recorded action."""
    if behavior_prob <= 0.0:
        raise DataCorruptionError(f"behavior probability {behavior_prob} is not positive")
    rho = target_prob / behavior_prob
    return rho, min(c, rho)


def episode_tape(episode: EpisodeLog, params: NetworkParams) -> EpisodeTape:
    return forward_episode(params,
                           [tr.obs for tr in episode.transitions],
                           [tr.skill_mask for tr in episode.transitions])


def retrace_targets(episode: EpisodeLog, params: NetworkParams, head: str,
                    tape: EpisodeTape | None = None) -> np.ndarray:
    """Per-tick return targets for one head, computed backwards.

    Recursion: target_t = r_t + g_t * (rho1_{t+1} * (target_{t+1} -
    Q(x_{t+1}, a_{t+1})) + V(x_{t+1})) with g_t the gap discount of tick
    t and rho1 the ratio clipped at TARGET_RATIO_CLIP; the terminal tick
    is the base case target = r. Maintained move ticks contribute with
    ratio 1 since their move was a forced continuation.
    """
    if tape is None:
        tape = episode_tape(episode, params)
    T = len(episode.transitions)
    targets = np.empty(T)
    correction = 0.0
    for t in range(T - 1, -1, -1):
        tr = episode.transitions[t]
        out = tape.outputs[t]
        if tr.terminal:
            targets[t] = tr.reward
        else:
            targets[t] = tr.reward + tr.gap_discount * correction
        if head == SKILL_HEAD:
            q_a = float(out.skill_q[tr.skill])
            value = out.skill_value
            _, rho1 = importance_ratio(float(out.skill_probs[tr.skill]),
                                       tr.behavior_probs[0], TARGET_RATIO_CLIP)
        else:
            q_a = float(out.move_q[tr.move])
            value = out.move_value
            if tr.move_fresh:
                _, rho1 = importance_ratio(float(out.move_probs[tr.move]),
                                           tr.behavior_probs[1], TARGET_RATIO_CLIP)
            else:
                rho1 = 1.0
        correction = rho1 * (targets[t] - q_a) + value
    return targets


def bias_correction_logits(probs: np.ndarray, q_values: np.ndarray,
                           behavior_dist: np.ndarray,
                           c: float = RATIO_CLIP) -> np.ndarray:
    """Descent-direction logit gradient of the enumerated correction term.

    Exactly zero whenever no action's importance ratio exceeds c; actions
    with zero target probability contribute nothing.
    """
    value = float(probs @ q_values)
    beta = np.zeros_like(probs)
    support = probs > 0.0
    weight = np.maximum(0.0, 1.0 - c * behavior_dist[support] / probs[support])
    beta[support] = weight * (q_values[support] - value)
    return -softmax_vjp(probs, beta)


def onsample_policy_logits(probs: np.ndarray, action: int, rho_bar: float,
                           advantage: float) -> np.ndarray:
    """Descent-direction logit gradient of the clipped on-sample term."""
    grad = rho_bar * advantage * probs
    grad[action] -= rho_bar * advantage
    return grad


def acer_gradient(episodes: list[EpisodeLog], params: NetworkParams,
                  head: str = BOTH_HEADS, *, c: float = RATIO_CLIP,
                  window: int | None = None) -> tuple[NetworkParams, dict]:
    """Batch gradient of the combined policy and critic loss.

    Per decision tick the loss is the negated policy surrogate plus half
    the squared critic error against the return target; each head's sum
    is normalized by its decision-tick count. Returns the gradient and a
    statistics dict for the metrics log.
    """
    if not episodes:
        raise ValueError("empty batch")
    do_skill = head in (SKILL_HEAD, BOTH_HEADS)
    do_move = head in (MOVE_HEAD, BOTH_HEADS)
    if not (do_skill or do_move):
        raise ValueError(f"unknown head {head!r}")
    n_skill = sum(len(ep) for ep in episodes)
    n_move = sum(sum(tr.move_fresh for tr in ep.transitions) for ep in episodes)
    stats = {"n_skill": n_skill, "n_move": n_move,
             "skill_critic_loss": 0.0, "move_critic_loss": 0.0,
             "skill_entropy": 0.0, "move_entropy": 0.0,
             "rho_mean": 0.0, "rho_clip_frac": 0.0}
    grad = params.zeros_like()
    cfg = params.config
    for idx, episode in enumerate(episodes):
        try:
            tape = episode_tape(episode, params)
            hg = HeadGradients.zeros(len(episode), cfg)
            if do_skill:
                targets = retrace_targets(episode, params, SKILL_HEAD, tape)
                for t, tr in enumerate(episode.transitions):
                    out = tape.outputs[t]
                    probs, q = out.skill_probs, out.skill_q
                    value = out.skill_value
                    rho, rho_bar = importance_ratio(float(probs[tr.skill]),
                                                    tr.behavior_probs[0], c)
                    hg.skill_logits[t] = (
                        onsample_policy_logits(probs, tr.skill, rho_bar, targets[t] - value)
                        + bias_correction_logits(probs, q, tr.behavior_skill_dist, c)
                    ) / n_skill
                    err = float(q[tr.skill]) - targets[t]
                    hg.skill_q[t, tr.skill] = err / n_skill
                    stats["skill_critic_loss"] += 0.5 * err * err / n_skill
                    stats["skill_entropy"] += distribution_entropy(probs) / n_skill
                    stats["rho_mean"] += rho / n_skill
                    stats["rho_clip_frac"] += (rho > c) / n_skill
            if do_move:
                targets = retrace_targets(episode, params, MOVE_HEAD, tape)
                for t, tr in enumerate(episode.transitions):
                    if not tr.move_fresh:
                        continue
                    out = tape.outputs[t]
                    probs, q = out.move_probs, out.move_q
                    value = out.move_value
                    _, rho_bar = importance_ratio(float(probs[tr.move]),
                                                  tr.behavior_probs[1], c)
                    hg.move_logits[t] = (
                        onsample_policy_logits(probs, tr.move, rho_bar, targets[t] - value)
                        + bias_correction_logits(probs, q, tr.behavior_move_dist, c)
                    ) / max(n_move, 1)
                    err = float(q[tr.move]) - targets[t]
                    hg.move_q[t, tr.move] = err / max(n_move, 1)
                    stats["move_critic_loss"] += 0.5 * err * err / max(n_move, 1)
                    stats["move_entropy"] += distribution_entropy(probs) / max(n_move, 1)
            g = backward(params, tape, hg, window=window)
        except NumericError as err:
            raise NumericError(f"episode {idx}: {err}") from None
        for name, arr in grad.arrays().items():
            arr += getattr(g, name)
    return grad, stats


def head_for_step(step: int) -> str:
    """Alternation schedule: even learner steps train the skill heads,
    odd steps the move heads."""
    return SKILL_HEAD if step % 2 == 0 else MOVE_HEAD


# -- optimization -----------------------------------------------------------

def global_norm(grad: NetworkParams) -> float:
    return float(np.linalg.norm(grad.flat()))


def clip_by_global_norm(grad: NetworkParams,
                        max_norm: float = GRAD_CLIP_NORM) -> tuple[NetworkParams, float]:
    """Scale the whole gradient down to max_norm if it exceeds it.

    Returns (possibly rescaled gradient, pre-clip norm); the input is
    modified in place when rescaling happens.
    """
    norm = global_norm(grad)
    if norm > max_norm:
        scale = max_norm / norm
        for arr in grad.arrays().values():
            arr *= scale
    return grad, norm


@dataclass
class LearnerState:
    """Parameters plus optimizer moments and the update counter."""

    params: NetworkParams
    adam_m: NetworkParams
    adam_v: NetworkParams
    step: int = 0

    @classmethod
    def fresh(cls, params: NetworkParams) -> "LearnerState":
        return cls(params=params, adam_m=params.zeros_like(),
                   adam_v=params.zeros_like(), step=0)


def update_step(state: LearnerState, grad: NetworkParams, *,
                lr: float = LEARNING_RATE, beta1: float = ADAM_BETA1,
                beta2: float = ADAM_BETA2, eps: float = ADAM_EPS,
                clip: float = GRAD_CLIP_NORM) -> LearnerState:
    """One adaptive-moment update with bias correction; returns the new
    learner state with the step counter incremented."""
    grad, _ = clip_by_global_norm(grad, clip)
    step = state.step + 1
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    new_params = state.params.zeros_like()
    new_m = state.params.zeros_like()
    new_v = state.params.zeros_like()
    for name, p in state.params.arrays().items():
        g = getattr(grad, name)
        m = beta1 * getattr(state.adam_m, name) + (1.0 - beta1) * g
        v = beta2 * getattr(state.adam_v, name) + (1.0 - beta2) * g * g
        getattr(new_m, name)[...] = m
        getattr(new_v, name)[...] = v
        getattr(new_params, name)[...] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return LearnerState(params=new_params, adam_m=new_m, adam_v=new_v, step=step)


class ReplayBuffer:
    """Ring of the most recent episodes with uniform replay sampling."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        self._ring: deque[EpisodeLog] = deque(maxlen=capacity)
        self.total_added = 0

    def add(self, episode: EpisodeLog) -> None:
        self._ring.append(episode)
        self.total_added += 1

    def __len__(self) -> int:
        return len(self._ring)

    def sample(self, rng: np.random.Generator,
               batch: int = BATCH_EPISODES) -> list[EpisodeLog]:
        if not self._ring:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self._ring), size=batch)
        return [self._ring[i] for i in idx]
