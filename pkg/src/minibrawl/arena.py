"""Deterministic tick-based two-player arena with simultaneous resolution.

One tick is 0.1 s. Both players submit a `JointAction` (skill + combined
move/targeting index); the environment resolves them jointly in a fixed
phase order so the result never depends on argument order:

    1. self-targeted activations (resistance, escape, dash)
    2. movement and facing
    3. crowd control (blocked by resistance, simultaneous CC both lands)
    4. damage (cancelled if the attacker was CC'd in phase 3)

All dynamics are deterministic; the optional rng argument is reserved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .skills import CCKind, NOOP, Roster, SkillFunction, SkillSpec, default_roster

SQ2 = math.sqrt(0.5)

# 8 compass directions; index 8 is "no move". Tabled so that the point
# reflection dir -> (dir + 4) % 8 is an exact float negation.
MOVE_DIRS = (
    (1.0, 0.0), (SQ2, SQ2), (0.0, 1.0), (-SQ2, SQ2),
    (-1.0, 0.0), (-SQ2, -SQ2), (0.0, -1.0), (SQ2, -SQ2),
    (0.0, 0.0),
)
N_MOVE_DIRS = 9
N_TARGETINGS = 2          # 0 = face opponent, 1 = face moving direction
N_MOVES = N_MOVE_DIRS * N_TARGETINGS

FACE_OPPONENT = 0
FACE_MOVEMENT = 1

NO_MOVE = 8 * N_TARGETINGS + FACE_OPPONENT   # stand still, track the opponent


class TerminalStateError(RuntimeError):
    """step() called on a finished match."""


class UnavailableSkillError(ValueError):
    """A submitted action violates the availability mask."""


class Side(enum.IntEnum):
    AGENT = 0
    OPPONENT = 1

    @property
    def other(self) -> "Side":
        return Side(1 - self)


class Status(enum.IntEnum):
    NORMAL = 0
    STUNNED = 1
    KNOCKED_DOWN = 2
    RESISTANT = 3


class Outcome(enum.Enum):
    ONGOING = "ongoing"
    AGENT_WIN = "agent_win"
    OPPONENT_WIN = "opponent_win"
    DRAW = "draw"

    def flipped(self) -> "Outcome":
        if self is Outcome.AGENT_WIN:
            return Outcome.OPPONENT_WIN
        if self is Outcome.OPPONENT_WIN:
            return Outcome.AGENT_WIN
        return self


@dataclass(frozen=True)
class JointAction:
    """One player's decision for one tick."""

    skill: int
    move: int   # direction * 2 + targeting, in [0, 18)

    def __post_init__(self) -> None:
        if not 0 <= self.move < N_MOVES:
            raise ValueError(f"move index out of range: {self.move}")

    @property
    def direction(self) -> int:
        return self.move // N_TARGETINGS

    @property
    def targeting(self) -> int:
        return self.move % N_TARGETINGS


def mirror_move(move: int) -> int:
    """Move index under point reflection of the arena."""
    d, t = divmod(move, N_TARGETINGS)
    if d < 8:
        d = (d + 4) % 8
    return d * N_TARGETINGS + t


def mirror_action(a: JointAction) -> JointAction:
    return JointAction(skill=a.skill, move=mirror_move(a.move))


@dataclass
class CombatantState:
    position: np.ndarray          # shape (2,), float64
    facing: np.ndarray            # unit vector, shape (2,)
    hp: float
    sp: float
    cooldowns: np.ndarray         # int32, per skill incl. no-op
    status: Status = Status.NORMAL
    status_ticks: int = 0
    prereq_windows: np.ndarray = None  # type: ignore[assignment]  # int32 per skill

    def copy(self) -> "CombatantState":
        return CombatantState(
            position=self.position.copy(),
            facing=self.facing.copy(),
            hp=self.hp,
            sp=self.sp,
            cooldowns=self.cooldowns.copy(),
            status=self.status,
            status_ticks=self.status_ticks,
            prereq_windows=self.prereq_windows.copy(),
        )

    @property
    def can_act(self) -> bool:
        return self.status not in (Status.STUNNED, Status.KNOCKED_DOWN)


@dataclass
class ArenaState:
    tick: int
    agent: CombatantState
    opponent: CombatantState
    done: bool = False
    outcome: Outcome = Outcome.ONGOING

    def combatant(self, side: Side) -> CombatantState:
        return self.agent if side is Side.AGENT else self.opponent

    def copy(self) -> "ArenaState":
        return ArenaState(
            tick=self.tick,
            agent=self.agent.copy(),
            opponent=self.opponent.copy(),
            done=self.done,
            outcome=self.outcome,
        )


@dataclass(frozen=True)
class StyleConfig:
    """Reward-shaping weights for one battle style."""

    time_penalty: float = 0.0
    hp_ratio_own: float = 0.5
    hp_ratio_opp: float = 0.5
    distance_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.time_penalty < 0 or self.distance_penalty < 0:
            raise ValueError("penalties must be >= 0")
        if abs(self.hp_ratio_own + self.hp_ratio_opp - 1.0) > 1e-12:
            raise ValueError("hp ratio weights must sum to 1")


STYLES: dict[str, StyleConfig] = {
    "aggressive": StyleConfig(time_penalty=0.008, hp_ratio_own=0.5, hp_ratio_opp=0.5,
                              distance_penalty=0.002),
    "balanced": StyleConfig(time_penalty=0.004, hp_ratio_own=0.5, hp_ratio_opp=0.5,
                            distance_penalty=0.0002),
    "defensive": StyleConfig(time_penalty=0.0, hp_ratio_own=0.6, hp_ratio_opp=0.4,
                             distance_penalty=0.0),
    # vanilla self-play: win + HP reward only
    "baseline": StyleConfig(),
}

WIN_REWARD = 10.0


def default_arena() -> "Arena":
    return Arena(default_roster())


class Arena:
    """Match simulator bound to one roster. Instances hold no match state."""

    def __init__(self, roster: Roster):
        self.roster = roster
        self.c = roster.arena
        self._cone_cos = math.cos(math.radians(roster.arena.attack_cone_deg / 2.0))
        self._has_prereq = np.array(
            [s.prerequisite is not None for s in roster.skills], dtype=bool)
        self._sp_cost = np.array([s.sp_cost for s in roster.skills])
        self._cd = np.array([s.cooldown for s in roster.skills], dtype=np.int32)

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int = 0) -> ArenaState:
        """Fresh match: mirrored spawns, full resources. Deterministic."""
        half = self.c.spawn_distance / 2.0
        n = self.roster.n_skills

        def spawn(x: float, fx: float) -> CombatantState:
            return CombatantState(
                position=np.array([x, 0.0]),
                facing=np.array([fx, 0.0]),
                hp=self.c.hp_max,
                sp=self.c.sp_max,
                cooldowns=np.zeros(n, dtype=np.int32),
                prereq_windows=np.zeros(n, dtype=np.int32),
            )

        return ArenaState(tick=0, agent=spawn(-half, 1.0), opponent=spawn(half, -1.0))

    # -- queries ------------------------------------------------------------

    def available_skills(self, state: ArenaState, side: Side) -> np.ndarray:
        """Boolean availability mask; index 0 (no-op) is always usable."""
        me = state.combatant(side)
        mask = np.zeros(self.roster.n_skills, dtype=bool)
        mask[NOOP] = True
        if not me.can_act:
            return mask
        usable = (me.cooldowns == 0) & (self._sp_cost <= me.sp + 1e-12)
        usable &= ~self._has_prereq | (me.prereq_windows > 0)
        usable[NOOP] = True
        return usable

    def observe(self, state: ArenaState, side: Side) -> np.ndarray:
        """Fixed-length observation vector, every component in [-1, 1]."""
        me = state.combatant(side)
        opp = state.combatant(side.other)
        c = self.c
        delta = opp.position - me.position
        dist = float(np.hypot(delta[0], delta[1]))
        if dist > 1e-9:
            to_opp = delta / dist
            face_me = float(me.facing @ to_opp)
            face_opp = float(opp.facing @ -to_opp)
        else:
            face_me = face_opp = 0.0
        wall = c.radius - float(np.hypot(me.position[0], me.position[1]))

        parts = np.empty(self.obs_dim)
        parts[0] = me.hp / c.hp_max
        parts[1] = opp.hp / c.hp_max
        parts[2] = me.sp / c.sp_max
        parts[3] = opp.sp / c.sp_max
        parts[4] = dist / (2.0 * c.radius)
        parts[5] = wall / c.radius
        parts[6] = me.position[0] / c.radius
        parts[7] = me.position[1] / c.radius
        parts[8] = (c.max_ticks - state.tick) / c.max_ticks
        i = 9
        n = self.roster.n_skills
        cd_frac = parts[i:i + n]
        for k, s in enumerate(self.roster.skills):
            cd_frac[k] = me.cooldowns[k] / s.cooldown if s.cooldown > 0 else 0.0
        i += n
        parts[i:i + 4] = 0.0
        parts[i + int(me.status)] = 1.0
        i += 4
        parts[i:i + 4] = 0.0
        parts[i + int(opp.status)] = 1.0
        i += 4
        parts[i] = face_me
        parts[i + 1] = face_opp
        return parts

    @property
    def obs_dim(self) -> int:
        return 9 + self.roster.n_skills + 8 + 2

    def distance(self, state: ArenaState) -> float:
        d = state.opponent.position - state.agent.position
        return float(np.hypot(d[0], d[1]))

    # -- dynamics -----------------------------------------------------------

    def step(self, state: ArenaState, a_ag: JointAction, a_op: JointAction,
             rng: np.random.Generator | None = None) -> tuple[ArenaState, float, float]:
        """Advance one tick; returns (next_state, base reward agent, base reward opponent)."""
        if state.done:
            raise TerminalStateError(f"match already finished: {state.outcome.value}")
        for side, act in ((Side.AGENT, a_ag), (Side.OPPONENT, a_op)):
            mask = self.available_skills(state, side)
            if not 0 <= act.skill < self.roster.n_skills or not mask[act.skill]:
                raise UnavailableSkillError(
                    f"{side.name} selected unavailable skill {act.skill} at tick {state.tick}")

        nxt = state.copy()
        players = (nxt.agent, nxt.opponent)
        actions = (a_ag, a_op)
        casts = [self.roster.skills[a.skill] for a in actions]
        hp_before = (nxt.agent.hp, nxt.opponent.hp)

        # activation: pay costs, start cooldowns, open prerequisite windows
        for me, cast in zip(players, casts):
            if cast.id == NOOP:
                continue
            me.sp = max(0.0, me.sp - cast.sp_cost)
            me.cooldowns[cast.id] = cast.cooldown
            for s in self.roster.skills:
                if s.prerequisite is not None and s.prerequisite.skill_id == cast.id:
                    me.prereq_windows[s.id] = s.prerequisite.window

        # phase 1: self-targeted effects, from a common position snapshot
        snap = (players[0].position.copy(), players[1].position.copy())
        for i, (me, cast) in enumerate(zip(players, casts)):
            other_pos = snap[1 - i]
            if cast.function is SkillFunction.RESISTANCE:
                self._apply_buff(me, Status.RESISTANT, cast.cc_duration)
            elif cast.function is SkillFunction.ESCAPE:
                away = snap[i] - other_pos
                norm = float(np.hypot(away[0], away[1]))
                direction = away / norm if norm > 1e-9 else -me.facing
                me.position = self._clamp(snap[i] + direction * cast.range)
                self._apply_buff(me, Status.RESISTANT, self.c.escape_resist_ticks)
            elif cast.function is SkillFunction.DASH:
                toward = other_pos - snap[i]
                norm = float(np.hypot(toward[0], toward[1]))
                if norm > 1e-9:
                    travel = min(cast.range, max(norm - self.c.dash_stop, 0.0))
                    me.position = self._clamp(snap[i] + (toward / norm) * travel)

        # phase 2: movement, then facing from post-move positions
        deltas = []
        for me, act in zip(players, actions):
            d = MOVE_DIRS[act.direction]
            moving = me.can_act and act.direction != 8
            deltas.append((d[0] * self.c.move_speed, d[1] * self.c.move_speed) if moving else None)
        for me, delta in zip(players, deltas):
            if delta is not None:
                me.position = self._clamp(me.position + np.array(delta))
        for i, (me, act) in enumerate(zip(players, actions)):
            if not me.can_act:
                continue
            if act.targeting == FACE_OPPONENT:
                to_opp = players[1 - i].position - me.position
                norm = float(np.hypot(to_opp[0], to_opp[1]))
                if norm > 1e-9:
                    me.facing = to_opp / norm
            elif act.direction != 8:
                me.facing = np.array(MOVE_DIRS[act.direction])

        # phase 3: crowd control, simultaneous (CC vs CC: both land unless resisted)
        landed_cc = [
            cast.function is SkillFunction.CROWD_CONTROL
            and self._connects(players[i], players[1 - i], cast)
            and players[1 - i].status is not Status.RESISTANT
            for i, cast in enumerate(casts)
        ]
        for i, cast in enumerate(casts):
            if landed_cc[i]:
                target = players[1 - i]
                kind = Status.STUNNED if cast.cc_kind is CCKind.STUN else Status.KNOCKED_DOWN
                if cast.cc_duration > target.status_ticks or target.status in (
                        Status.NORMAL, Status.RESISTANT):
                    target.status = kind
                    target.status_ticks = max(cast.cc_duration, target.status_ticks)

        # phase 4: damage; an attacker CC'd this tick is interrupted
        hits = [
            cast.function is SkillFunction.DAMAGE and players[i].can_act
            and self._connects(players[i], players[1 - i], cast)
            for i, cast in enumerate(casts)
        ]
        for i, cast in enumerate(casts):
            if hits[i]:
                target = players[1 - i]
                target.hp = max(0.0, target.hp - cast.damage)

        # end of tick: resources, timers, termination
        for me in players:
            me.sp = min(self.c.sp_max, me.sp + self.c.sp_regen)
            np.subtract(me.cooldowns, 1, out=me.cooldowns, where=me.cooldowns > 0)
            np.subtract(me.prereq_windows, 1, out=me.prereq_windows,
                        where=me.prereq_windows > 0)
            if me.status is not Status.NORMAL:
                me.status_ticks -= 1
                if me.status_ticks <= 0:
                    me.status = Status.NORMAL
                    me.status_ticks = 0
        nxt.tick += 1

        ag_dead = nxt.agent.hp <= 0.0
        op_dead = nxt.opponent.hp <= 0.0
        if ag_dead or op_dead:
            nxt.done = True
            if ag_dead and op_dead:
                nxt.outcome = Outcome.DRAW
            else:
                nxt.outcome = Outcome.OPPONENT_WIN if ag_dead else Outcome.AGENT_WIN
        elif nxt.tick >= self.c.max_ticks:
            nxt.done = True
            if nxt.agent.hp > nxt.opponent.hp:
                nxt.outcome = Outcome.AGENT_WIN
            elif nxt.agent.hp < nxt.opponent.hp:
                nxt.outcome = Outcome.OPPONENT_WIN
            else:
                nxt.outcome = Outcome.DRAW

        d_ag = nxt.agent.hp - hp_before[0]
        d_op = nxt.opponent.hp - hp_before[1]
        r_hp = d_ag - d_op
        r_win = self._win_reward(nxt)
        return nxt, r_hp + r_win, -r_hp - r_win

    # -- rewards ------------------------------------------------------------

    @staticmethod
    def _win_reward(state: ArenaState) -> float:
        if state.outcome is Outcome.AGENT_WIN:
            return WIN_REWARD
        if state.outcome is Outcome.OPPONENT_WIN:
            return -WIN_REWARD
        return 0.0

    def base_reward(self, prev: ArenaState, nxt: ArenaState) -> float:
        """Agent-side HP-margin reward plus the terminal win/loss signal."""
        d_ag = nxt.agent.hp - prev.agent.hp
        d_op = nxt.opponent.hp - prev.opponent.hp
        return (d_ag - d_op) + self._win_reward(nxt)

    def style_reward(self, prev: ArenaState, nxt: ArenaState, cfg: StyleConfig) -> float:
        """Style-shaped agent reward; with a 5:5 HP ratio the HP term equals base_reward's."""
        d_ag = nxt.agent.hp - prev.agent.hp
        d_op = nxt.opponent.hp - prev.opponent.hp
        hp_term = 2.0 * (cfg.hp_ratio_own * d_ag - cfg.hp_ratio_opp * d_op)
        shaped = hp_term - cfg.time_penalty - cfg.distance_penalty * self.distance(nxt)
        return shaped + self._win_reward(nxt)

    # -- symmetry -----------------------------------------------------------

    def mirror(self, state: ArenaState) -> ArenaState:
        """The match seen from the other side: players swapped, outcome flipped.

        The dynamics carry no player asymmetry, so step(mirror(s), a_op, a_ag)
        equals mirror(step(s, a_ag, a_op)) with rewards swapped, and
        observe(s, OPPONENT) equals observe(mirror(s), AGENT) exactly.
        """
        return ArenaState(
            tick=state.tick,
            agent=state.opponent.copy(),
            opponent=state.agent.copy(),
            done=state.done,
            outcome=state.outcome.flipped(),
        )

    def reflect(self, state: ArenaState) -> ArenaState:
        """Point-reflect every position and facing through the arena center."""

        def ref(cs: CombatantState) -> CombatantState:
            out = cs.copy()
            out.position = -cs.position
            out.facing = -cs.facing
            return out

        return ArenaState(tick=state.tick, agent=ref(state.agent),
                          opponent=ref(state.opponent), done=state.done,
                          outcome=state.outcome)

    # -- internals ----------------------------------------------------------

    def _apply_buff(self, me: CombatantState, status: Status, ticks: int) -> None:
        if me.status is status:
            me.status_ticks = max(me.status_ticks, ticks)
        elif me.status is Status.NORMAL:
            me.status = status
            me.status_ticks = ticks

    def _connects(self, attacker: CombatantState, target: CombatantState,
                  skill: SkillSpec) -> bool:
        delta = target.position - attacker.position
        dist = float(np.hypot(delta[0], delta[1]))
        if dist > skill.range:
            return False
        if dist <= 1e-9:
            return True
        return float(attacker.facing @ (delta / dist)) >= self._cone_cos - 1e-12

    def _clamp(self, pos: np.ndarray) -> np.ndarray:
        r = float(np.hypot(pos[0], pos[1]))
        if r > self.c.radius:
            return pos * (self.c.radius / r)
        return pos
