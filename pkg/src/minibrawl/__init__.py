"""Desk-scale real-time fighting arena with style-shaped self-play training."""

from .arena import Arena, ArenaState, JointAction, Status, StyleConfig, default_arena
from .evaluate import (
    NetPolicy,
    ScriptedPolicy,
    apply_reaction_delay,
    play_episode,
    play_matches,
)
from .net import NetConfig, NetworkParams, load_params, save_params
from .selfplay import CurriculumConfig, OpponentPool, run_curriculum

__version__ = "0.1.0"

__all__ = [
    "Arena",
    "ArenaState",
    "JointAction",
    "Status",
    "default_arena",
    "NetPolicy",
    "ScriptedPolicy",
    "apply_reaction_delay",
    "play_episode",
    "play_matches",
    "NetConfig",
    "NetworkParams",
    "load_params",
    "save_params",
    "CurriculumConfig",
    "OpponentPool",
    "run_curriculum",
    "StyleConfig",
    "__version__",
]
