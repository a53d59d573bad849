"""Collection-time data skipping and episode-log serialization.

Two stream transforms run inside every simulator worker. Passive no-op
ticks, where the availability mask permits nothing but no-op, are
removed from the training record; their rewards are discount-folded
into the preceding retained transition so the episode's discounted
return is preserved exactly. Move decisions are maintained for n
consecutive ticks, with the network consulted only at fresh decision
ticks. Episode logs round-trip through a length-prefixed binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .acer import GAMMA, EpisodeLog, Transition
from .arena import NO_MOVE, Outcome

MAINTAIN_TICKS = 10

EPISODE_MAGIC = b"MBEP"
EPISODE_VERSION = 1


class EmptyEpisodeError(ValueError):
    """Every tick of the episode was passive; nothing to train on."""


class EpisodeFormatError(ValueError):
    """Unreadable or structurally invalid episode-log file."""


@dataclass(slots=True, eq=False)
class RawTick:
    """One environment tick as recorded during play, before filtering.

    `move_phase` is 0 exactly at ticks where a fresh move decision was
    made; maintained ticks carry the phase within their window and no
    move distribution.
    """

    obs: np.ndarray
    skill_mask: np.ndarray
    skill: int
    move: int
    behavior_skill_dist: np.ndarray
    behavior_move_dist: np.ndarray | None
    reward: float
    move_phase: int


def is_passive_noop(tick: RawTick) -> bool:
    """True when no-op was the only available skill."""
    return not bool(np.any(tick.skill_mask[1:]))


def filter_episode(raw: list[RawTick], gamma: float = GAMMA) -> "FilteredEpisode":
    """Drop passive no-op ticks, folding their rewards forward.

    Each retained transition's reward gains the discounted rewards of
    the skipped run that follows it, and its gap discount becomes
    gamma^delta with delta the tick distance to the next retained tick
    (or to the episode end for the last one). Skipped ticks before the
    first retained tick are accounted in the leading fields so the
    discounted return of the whole episode is preserved.
    """
    kept = [i for i, tick in enumerate(raw) if not is_passive_noop(tick)]
    if not kept:
        raise EmptyEpisodeError(f"all {len(raw)} ticks are passive")
    leading_reward = 0.0
    for i in range(kept[0] - 1, -1, -1):
        leading_reward = raw[i].reward + gamma * leading_reward
    transitions = []
    bounds = kept[1:] + [len(raw)]
    for i, nxt in zip(kept, bounds):
        tick = raw[i]
        folded = 0.0
        for j in range(nxt - 1, i, -1):
            folded = raw[j].reward + gamma * folded
        transitions.append(Transition(
            obs=tick.obs, skill_mask=tick.skill_mask, skill=tick.skill,
            move=tick.move, behavior_skill_dist=tick.behavior_skill_dist,
            behavior_move_dist=tick.behavior_move_dist,
            reward=tick.reward + gamma * folded,
            gap_discount=gamma ** (nxt - i),
            terminal=nxt == len(raw),
            move_fresh=tick.move_phase == 0))
    return FilteredEpisode(transitions=transitions,
                           leading_reward=leading_reward,
                           leading_discount=gamma ** kept[0],
                           dropped=len(raw) - len(kept))


@dataclass(slots=True, eq=False)
class FilteredEpisode:
    """Retained transitions plus the folded contribution of any skipped
    ticks that preceded the first retained one."""

    transitions: list[Transition]
    leading_reward: float
    leading_discount: float
    dropped: int

    def __len__(self) -> int:
        return len(self.transitions)

    def folded_return(self) -> float:
        """Discounted return of the original raw episode."""
        total = 0.0
        for tr in reversed(self.transitions):
            total = tr.reward + tr.gap_discount * total
        return self.leading_reward + self.leading_discount * total


def unfiltered_episode(raw: list[RawTick], gamma: float = GAMMA) -> FilteredEpisode:
    """Convert raw ticks one to one, keeping passive ticks. Used by the
    no-skipping ablation arm; requires every tick to carry a behavior
    distribution, i.e. collection must have fed every tick to the net."""
    if not raw:
        raise EmptyEpisodeError("empty episode")
    transitions = [Transition(
        obs=tick.obs, skill_mask=tick.skill_mask, skill=tick.skill,
        move=tick.move, behavior_skill_dist=tick.behavior_skill_dist,
        behavior_move_dist=tick.behavior_move_dist,
        reward=tick.reward, gap_discount=gamma,
        terminal=i == len(raw) - 1,
        move_fresh=tick.move_phase == 0) for i, tick in enumerate(raw)]
    return FilteredEpisode(transitions=transitions, leading_reward=0.0,
                           leading_discount=1.0, dropped=0)


def raw_return(rewards: Iterable[float], gamma: float = GAMMA) -> float:
    """Plain discounted sum, evaluated back to front."""
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


class MoveMaintainer:
    """Repeats each fresh move decision for n consecutive ticks.

    Skill decisions are unaffected; only the move head is skipped on
    maintained ticks. Passive ticks consume the window too (the agent
    keeps drifting in the maintained direction) but never trigger a
    fresh decision; an expired window during a passive stretch emits
    no-move and the decision is deferred to the next non-passive tick.
    """

    def __init__(self, n: int = MAINTAIN_TICKS):
        if n < 1:
            raise ValueError(f"maintenance window {n} must be at least 1")
        self.n = n
        self.reset()

    def reset(self) -> None:
        self._move = NO_MOVE
        self._used = self.n   # forces a fresh decision at the first tick
        self.phase = 0

    def needs_decision(self) -> bool:
        return self._used >= self.n

    def start(self, move: int) -> int:
        """Record a fresh decision; phase becomes 0."""
        self._move = move
        self._used = 1
        self.phase = 0
        return move

    def maintained(self) -> int:
        """Emit the held move for one more tick of its window."""
        self.phase = self._used
        self._used += 1
        return self._move

    def passive(self) -> int:
        """Advance through a passive tick without consulting the policy."""
        if self._used < self.n:
            return self.maintained()
        self.phase = self.n - 1
        return NO_MOVE


def maintain_move(decide: Callable[[], int], ticks: int, n: int) -> list[tuple[int, bool]]:
    """Expand fresh decisions into per-tick (move, fresh) pairs.

    `decide` is called once per window start; the window truncates at
    the end of the episode.
    """
    maintainer = MoveMaintainer(n)
    out = []
    for _ in range(ticks):
        if maintainer.needs_decision():
            out.append((maintainer.start(decide()), True))
        else:
            out.append((maintainer.maintained(), False))
    return out


# -- episode-log files ------------------------------------------------------
#
# File layout: 4-byte magic, u32 version, then one length-prefixed record
# per episode until end of file. Record payload: three u8-length-prefixed
# utf-8 strings (style, agent snapshot, opponent snapshot), u8-length-
# prefixed outcome name, u32 transition count, u16 observation length,
# u8 skill count, u8 move count, then per transition: u8 skill, u8 move,
# u8 flags (bit 0 terminal, bit 1 move decision fresh), f8 reward, f8 gap
# discount, f8 observation vector, u8 availability mask, f8 behavior
# skill distribution, and, on fresh ticks only, f8 behavior move
# distribution. All integers little-endian, floats IEEE 754 binary64.

def _pack_str(text: str) -> bytes:
    data = text.encode("utf-8")
    if len(data) > 255:
        raise EpisodeFormatError(f"string field too long ({len(data)} bytes)")
    return struct.pack("<B", len(data)) + data


def _episode_payload(episode: EpisodeLog) -> bytes:
    parts = [_pack_str(episode.style), _pack_str(episode.agent_snapshot),
             _pack_str(episode.opponent_snapshot), _pack_str(episode.outcome.name)]
    first = episode.transitions[0]
    obs_dim = first.obs.shape[0]
    n_skills = first.behavior_skill_dist.shape[0]
    n_moves = 0
    for tr in episode.transitions:
        if tr.behavior_move_dist is not None:
            n_moves = tr.behavior_move_dist.shape[0]
            break
    parts.append(struct.pack("<IHBB", len(episode.transitions), obs_dim, n_skills, n_moves))
    for tr in episode.transitions:
        flags = (1 if tr.terminal else 0) | (2 if tr.move_fresh else 0)
        parts.append(struct.pack("<BBBdd", tr.skill, tr.move, flags,
                                 tr.reward, tr.gap_discount))
        parts.append(np.ascontiguousarray(tr.obs, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(tr.skill_mask, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(tr.behavior_skill_dist, dtype="<f8").tobytes())
        if tr.move_fresh:
            parts.append(np.ascontiguousarray(tr.behavior_move_dist, dtype="<f8").tobytes())
    return b"".join(parts)


def save_episodes(path, episodes: Iterable[EpisodeLog]) -> int:
    count = 0
    with open(path, "wb") as fh:
        fh.write(EPISODE_MAGIC)
        fh.write(struct.pack("<I", EPISODE_VERSION))
        for episode in episodes:
            payload = _episode_payload(episode)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            count += 1
    return count


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EpisodeFormatError(f"{self.path}: truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<B")
        return self.take(n).decode("utf-8")

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()


def _parse_episode(reader: _Reader) -> EpisodeLog:
    style = reader.string()
    agent = reader.string()
    opponent = reader.string()
    outcome_name = reader.string()
    try:
        outcome = Outcome[outcome_name]
    except KeyError:
        raise EpisodeFormatError(f"{reader.path}: unknown outcome {outcome_name!r}") from None
    count, obs_dim, n_skills, n_moves = reader.unpack("<IHBB")
    transitions = []
    for _ in range(count):
        skill, move, flags, reward, gap = reader.unpack("<BBBdd")
        obs = reader.floats(obs_dim)
        mask = np.frombuffer(reader.take(n_skills), dtype=np.uint8).astype(bool)
        skill_dist = reader.floats(n_skills)
        fresh = bool(flags & 2)
        move_dist = reader.floats(n_moves) if fresh else None
        transitions.append(Transition(
            obs=obs, skill_mask=mask, skill=skill, move=move,
            behavior_skill_dist=skill_dist, behavior_move_dist=move_dist,
            reward=reward, gap_discount=gap,
            terminal=bool(flags & 1), move_fresh=fresh))
    return EpisodeLog(transitions=transitions, style=style, agent_snapshot=agent,
                      opponent_snapshot=opponent, outcome=outcome)


def load_episodes(path) -> list[EpisodeLog]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EPISODE_MAGIC:
        raise EpisodeFormatError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", data[4:8])
    if version != EPISODE_VERSION:
        raise EpisodeFormatError(f"{path}: unsupported version {version}")
    episodes = []
    pos = 8
    while pos < len(data):
        if pos + 4 > len(data):
            raise EpisodeFormatError(f"{path}: truncated record header")
        (length,) = struct.unpack("<I", data[pos:pos + 4])
        pos += 4
        if pos + length > len(data):
            raise EpisodeFormatError(f"{path}: truncated record")
        reader = _Reader(data[pos:pos + length], path)
        episodes.append(_parse_episode(reader))
        pos += length
    return episodes


def dump_lines(episodes: Iterable[EpisodeLog]) -> Iterator[str]:
    """Human-readable one-line-per-transition rendering for inspection."""
    for i, episode in enumerate(episodes):
        yield (f"episode {i} style={episode.style} outcome={episode.outcome.name} "
               f"agent={episode.agent_snapshot or '-'} "
               f"opponent={episode.opponent_snapshot or '-'} "
               f"transitions={len(episode)}")
        for t, tr in enumerate(episode.transitions):
            marks = ("T" if tr.terminal else "") + ("F" if tr.move_fresh else "")
            yield (f"  t={t} skill={tr.skill} move={tr.move} "
                   f"r={tr.reward:+.6f} gap={tr.gap_discount:.6f} {marks}".rstrip())
