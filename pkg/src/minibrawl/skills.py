"""Skill roster and arena constants, loaded from a versioned YAML config.

The roster is the static description of everything a combatant can do: a
list of skills with cooldowns, costs and effects, plus the arena geometry
and resource constants. Skill id 0 is always the synthesized no-op.
"""

from __future__ import annotations

import enum
import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1

NOOP = 0


class SkillFunction(enum.Enum):
    NOOP = "noop"
    DAMAGE = "damage"
    CROWD_CONTROL = "crowd_control"
    RESISTANCE = "resistance"
    ESCAPE = "escape"
    DASH = "dash"


class CCKind(enum.Enum):
    STUN = "stun"
    KNOCKDOWN = "knockdown"


@dataclass(frozen=True)
class Prerequisite:
    """Skill usable only within `window` ticks after `skill_id` was cast."""

    skill_id: int
    window: int


@dataclass(frozen=True)
class SkillSpec:
    id: int
    name: str
    function: SkillFunction
    cooldown: int = 0          # ticks until reusable
    sp_cost: float = 0.0       # in [0, 10]
    damage: float = 0.0        # HP units, damage skills only
    cc_duration: int = 0       # ticks: CC lockout, or buff duration for resistance
    cc_kind: CCKind = CCKind.STUN
    range: float = 0.0         # reach for targeted skills; travel distance for dash/escape
    prerequisite: Prerequisite | None = None

    def validate(self) -> None:
        if self.id == NOOP:
            if self.cooldown != 0 or self.sp_cost != 0.0 or self.damage != 0.0:
                raise RosterError("no-op must have zero cooldown, sp_cost and damage")
        if self.cooldown < 0:
            raise RosterError(f"skill {self.name}: cooldown must be >= 0")
        if self.damage < 0:
            raise RosterError(f"skill {self.name}: damage must be >= 0")
        if not 0.0 <= self.sp_cost <= 10.0:
            raise RosterError(f"skill {self.name}: sp_cost must be in [0, 10]")
        if self.prerequisite is not None and self.prerequisite.window <= 0:
            raise RosterError(f"skill {self.name}: prerequisite window must be > 0")


class RosterError(ValueError):
    """Malformed roster config."""


@dataclass(frozen=True)
class ArenaConstants:
    radius: float = 8.0            # circular arena, meters
    move_speed: float = 0.3        # meters per tick
    spawn_distance: float = 6.0    # meters between initial positions
    max_ticks: int = 1800
    hp_max: float = 10.0
    sp_max: float = 10.0
    sp_regen: float = 0.05         # per tick
    attack_cone_deg: float = 90.0  # full width of the frontal cone for targeted skills
    dash_stop: float = 0.5         # dash never closes past this separation
    escape_resist_ticks: int = 5   # brief CC immunity granted by escape skills


@dataclass(frozen=True)
class Roster:
    """Complete static game description: skills (index == id) and constants."""

    skills: tuple[SkillSpec, ...]
    arena: ArenaConstants = field(default_factory=ArenaConstants)

    def __post_init__(self) -> None:
        if not self.skills or self.skills[0].function is not SkillFunction.NOOP:
            raise RosterError("skill 0 must be the no-op")
        for i, s in enumerate(self.skills):
            if s.id != i:
                raise RosterError(f"skill ids must be contiguous, got {s.id} at index {i}")
            s.validate()
            if s.prerequisite is not None and not 0 < s.prerequisite.skill_id < len(self.skills):
                raise RosterError(f"skill {s.name}: unknown prerequisite id")

    @property
    def n_skills(self) -> int:
        """Number of skill actions including no-op."""
        return len(self.skills)

    def by_name(self, name: str) -> SkillSpec:
        for s in self.skills:
            if s.name == name:
                return s
        raise KeyError(name)


def _skill_from_dict(d: dict) -> SkillSpec:
    prereq = None
    if "prerequisite" in d and d["prerequisite"] is not None:
        p = d["prerequisite"]
        prereq = Prerequisite(skill_id=int(p["skill"]), window=int(p["window"]))
    return SkillSpec(
        id=int(d["id"]),
        name=str(d["name"]),
        function=SkillFunction(d["function"]),
        cooldown=int(d.get("cooldown", 0)),
        sp_cost=float(d.get("sp_cost", 0.0)),
        damage=float(d.get("damage", 0.0)),
        cc_duration=int(d.get("cc_duration", 0)),
        cc_kind=CCKind(d.get("cc_kind", "stun")),
        range=float(d.get("range", 0.0)),
        prerequisite=prereq,
    )


def roster_from_dict(doc: dict) -> Roster:
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise RosterError(f"unsupported roster schema version: {version!r}")
    arena_doc = doc.get("arena", {})
    arena = ArenaConstants(**{k: v for k, v in arena_doc.items()})
    noop = SkillSpec(id=NOOP, name="noop", function=SkillFunction.NOOP)
    skills = [noop] + [_skill_from_dict(d) for d in doc.get("skills", [])]
    skills.sort(key=lambda s: s.id)
    return Roster(skills=tuple(skills), arena=arena)


def load_roster(path: str | Path) -> Roster:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise RosterError(f"{path}: expected a mapping at top level")
    return roster_from_dict(doc)


def default_roster() -> Roster:
    """The bundled 12-skill roster (plus no-op)."""
    ref = importlib.resources.files("minibrawl.data").joinpath("default_roster.yaml")
    with ref.open("r", encoding="utf-8") as fh:
        return roster_from_dict(yaml.safe_load(fh))
