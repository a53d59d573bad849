"""Ablation experiments over the training techniques.

Four studies: generalization of shared-pool versus independent-pool
training (cross-evaluating each agent against fixed-interval snapshots
of the other styles' independent pools), steps-to-threshold against the
scripted opponent with and without passive-tick skipping, move-policy
entropy decline for maintenance windows 1 and 10, and mean game length
per style. Each emits line-delimited report records plus plot-ready CSV.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acer import (
    EpisodeLog,
    LearnerState,
    ReplayBuffer,
    acer_gradient,
    head_for_step,
    update_step,
)
from .arena import Arena, Outcome, default_arena
from .evaluate import MatchSummary, NetPolicy, ScriptedPolicy, play_episode, play_matches
from .net import NetConfig, NetworkParams, load_params
from .pipeline import EmptyEpisodeError, filter_episode, unfiltered_episode
from .selfplay import OpponentPool, SnapshotMeta


class MissingCheckpointError(FileNotFoundError):
    """A required artifact is absent; the message names it."""


# -- single-learner training against the scripted opponent ------------------

@dataclass(slots=True)
class VsScriptedTrace:
    """Per-update history of one training arm. `steps_to_threshold` is
    infinity when the running win rate never reached the threshold."""

    history: list[dict]
    params: NetworkParams
    steps_to_threshold: float
    threshold: float
    episodes: int
    ticks: int

    def entropy_curve(self) -> list[tuple[int, float]]:
        return [(h["step"], h["move_entropy"]) for h in self.history
                if h["head"] == "move"]

    def final_move_entropy(self) -> float:
        curve = self.entropy_curve()
        if not curve:
            raise ValueError("no move-head updates recorded")
        tail = curve[-max(1, len(curve) // 4):]
        return float(np.mean([e for _, e in tail]))


def train_vs_scripted(*, steps: int, seed: int, skip_passive: bool = True,
                      maintain: int = 10, hidden: int = 32, batch: int = 8,
                      replay_capacity: int = 64, learning_rate: float = 1e-4,
                      opponent_skills: tuple[str, ...] = ("jab",),
                      window: int = 40, threshold: float = 0.8,
                      env: Arena | None = None) -> VsScriptedTrace:
    """Train one unshaped learner against the scripted opponent for a
    fixed number of update steps, one episode per step. The win rate is
    a running mean over the last `window` episodes (draws count half)
    and becomes eligible for the threshold once the window is full."""
    env = env if env is not None else default_arena()
    net_cfg = NetConfig(obs_dim=env.obs_dim, n_skills=env.roster.n_skills,
                        hidden=hidden)
    state = LearnerState.fresh(
        NetworkParams.initialize(net_cfg, np.random.default_rng([seed, 0])))
    replay = ReplayBuffer(replay_capacity)
    replay_rng = np.random.default_rng([seed, 1])
    env_seeds = np.random.default_rng([seed, 2])
    opponent = ScriptedPolicy(env, skills=opponent_skills)
    recent: deque[float] = deque(maxlen=window)
    history: list[dict] = []
    steps_to_threshold = math.inf
    episodes = ticks = 0

    while state.step < steps:
        agent = NetPolicy(state.params, maintain=maintain,
                          skip_passive=skip_passive)
        agent.seed((seed, episodes, 3))
        result = play_episode(env, agent, opponent,
                              seed=int(env_seeds.integers(2 ** 31)), record=True)
        episodes += 1
        ticks += result.length
        recent.append({Outcome.AGENT_WIN: 1.0, Outcome.DRAW: 0.5,
                       Outcome.OPPONENT_WIN: 0.0}[result.outcome])
        try:
            episode = (filter_episode(result.raw_ticks) if skip_passive
                       else unfiltered_episode(result.raw_ticks))
        except EmptyEpisodeError:
            continue
        replay.add(EpisodeLog(transitions=episode.transitions,
                              agent_snapshot=f"step{state.step}",
                              opponent_snapshot="scripted",
                              outcome=result.outcome))
        head = head_for_step(state.step)
        grad, stats = acer_gradient(replay.sample(replay_rng, batch),
                                    state.params, head)
        state = update_step(state, grad, lr=learning_rate)
        win_rate = float(np.mean(recent))
        stats.update({"step": state.step, "head": head, "episodes": episodes,
                      "ticks": ticks, "win_rate": win_rate})
        history.append(stats)
        if (math.isinf(steps_to_threshold) and len(recent) == window
                and win_rate >= threshold):
            steps_to_threshold = state.step
    return VsScriptedTrace(history=history, params=state.params,
                           steps_to_threshold=steps_to_threshold,
                           threshold=threshold, episodes=episodes, ticks=ticks)


def noop_skipping_experiment(seeds: tuple[int, ...] = (0, 1, 2), *,
                             steps: int = 300, env: Arena | None = None,
                             **kw) -> dict[str, list[VsScriptedTrace]]:
    """Fig-style comparison arm: steps to the win-rate threshold with
    passive-tick skipping versus training on every tick."""
    return {
        "skip": [train_vs_scripted(steps=steps, seed=s, skip_passive=True,
                                   env=env, **kw) for s in seeds],
        "no_skip": [train_vs_scripted(steps=steps, seed=s, skip_passive=False,
                                      env=env, **kw) for s in seeds],
    }


def maintenance_entropy_experiment(seeds: tuple[int, ...] = (0, 1, 2), *,
                                   steps: int = 300,
                                   windows: tuple[int, ...] = (1, 10),
                                   env: Arena | None = None,
                                   **kw) -> dict[int, list[VsScriptedTrace]]:
    """Move-policy entropy decline for each maintenance window size."""
    return {n: [train_vs_scripted(steps=steps, seed=s, maintain=n, env=env, **kw)
                for s in seeds] for n in windows}


# -- pool-generalization cross-evaluation -----------------------------------

def select_snapshots(pool: OpponentPool, style: str,
                     count: int) -> list[SnapshotMeta]:
    """Snapshots at fixed intervals over a style's registration order."""
    mine = pool.snapshots(style)
    if not mine:
        raise MissingCheckpointError(f"no {style} snapshots in {pool.root}")
    if len(mine) <= count:
        return mine
    idx = np.linspace(0, len(mine) - 1, count).round().astype(int)
    return [mine[i] for i in sorted(set(int(i) for i in idx))]


def _final_checkpoint(run_dir: Path, style: str) -> NetworkParams:
    path = run_dir / f"{style}-final.ckpt"
    if not path.exists():
        raise MissingCheckpointError(f"missing final checkpoint {path}")
    return load_params(path)


def pool_cross_evaluation(shared_dir: str | Path, independent_dir: str | Path, *,
                          styles: tuple[str, ...] = ("aggressive", "balanced",
                                                     "defensive"),
                          snapshots_per_style: int = 10, matches: int = 4,
                          maintain: int = 10, seed: int = 0,
                          env: Arena | None = None) -> list[dict]:
    """Win rates of shared-pool and independent-pool agents against the
    fixed-interval snapshot collections of the other styles' independent
    pools. Returns one record per training regime with a win rate per
    style plus the average."""
    env = env if env is not None else default_arena()
    shared_dir, independent_dir = Path(shared_dir), Path(independent_dir)
    agents = {
        "shared": {s: _final_checkpoint(shared_dir, s) for s in styles},
        "independent": {s: _final_checkpoint(independent_dir, s) for s in styles},
    }
    opponent_sets = {}
    for style in styles:
        pool = OpponentPool(independent_dir / f"pool-{style}")
        opponent_sets[style] = [
            pool.load(m) for m in select_snapshots(pool, style,
                                                   snapshots_per_style)]

    rows = []
    for regime, by_style in agents.items():
        row = {"experiment": "pool_generalization", "regime": regime}
        rates = []
        for style in styles:
            summary = MatchSummary()
            for other in styles:
                if other == style:
                    continue
                for j, opp_params in enumerate(opponent_sets[other]):
                    part = play_matches(
                        env, NetPolicy(by_style[style], maintain=maintain),
                        NetPolicy(opp_params, maintain=maintain),
                        matches, seed=seed * 7919 + j,
                    )
                    summary.wins += part.wins
                    summary.losses += part.losses
                    summary.draws += part.draws
                    summary.lengths.extend(part.lengths)
            row[style] = summary.win_rate
            rates.append(summary.win_rate)
        row["average"] = float(np.mean(rates))
        rows.append(row)
    return rows


# -- game length by style ---------------------------------------------------

def game_length_by_style(checkpoints: dict[str, NetworkParams], *,
                         matches: int = 50, maintain: int = 10, seed: int = 0,
                         env: Arena | None = None) -> dict[str, float]:
    """Mean length of mirror matches where each style's agent plays an
    identically parameterized copy of itself."""
    env = env if env is not None else default_arena()
    out = {}
    for style, params in checkpoints.items():
        summary = play_matches(env, NetPolicy(params, maintain=maintain),
                               NetPolicy(params, maintain=maintain),
                               matches, seed=seed)
        out[style] = summary.mean_length
    return out


# -- the full suite ---------------------------------------------------------

@dataclass(slots=True)
class AblationConfig:
    """Budgets for the suite. The pool-generalization study needs the
    output directories of one shared-mode and one independent-mode
    curriculum run; leave them None to skip that study."""

    seeds: tuple[int, ...] = (0, 1, 2)
    steps: int = 300
    threshold: float = 0.8
    window: int = 40
    hidden: int = 32
    learning_rate: float = 1e-4
    maintain_windows: tuple[int, ...] = (1, 10)
    opponent_skills: tuple[str, ...] = ("jab",)
    shared_dir: str | None = None
    independent_dir: str | None = None
    snapshots_per_style: int = 10
    cross_matches: int = 4
    length_matches: int = 50
    length_checkpoints: dict[str, str] = field(default_factory=dict)
    studies: tuple[str, ...] = ("noop_skipping", "move_maintenance",
                                "pool_generalization", "game_length")


@dataclass(slots=True)
class AblationReport:
    records: list[dict]
    report_path: str
    csv_paths: dict[str, str]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def ablation_suite(cfg: AblationConfig, out_dir: str | Path,
                   env: Arena | None = None) -> AblationReport:
    """Run the configured studies and write `report.jsonl` plus one CSV
    per study under `out_dir`."""
    env = env if env is not None else default_arena()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[dict] = []
    csv_paths: dict[str, str] = {}

    if "noop_skipping" in cfg.studies:
        arms = noop_skipping_experiment(
            cfg.seeds, steps=cfg.steps, env=env, threshold=cfg.threshold,
            window=cfg.window, hidden=cfg.hidden,
            learning_rate=cfg.learning_rate,
            opponent_skills=cfg.opponent_skills)
        rows = []
        for arm, traces in arms.items():
            medians = float(np.median([t.steps_to_threshold for t in traces]))
            records.append({"experiment": "noop_skipping", "arm": arm,
                            "steps_to_threshold": [t.steps_to_threshold
                                                   for t in traces],
                            "median": medians})
            for seed, trace in zip(cfg.seeds, traces):
                for h in trace.history:
                    rows.append([arm, seed, h["step"], h["ticks"],
                                 h["win_rate"]])
        path = out / "noop_skipping.csv"
        _write_csv(path, ["arm", "seed", "step", "ticks", "win_rate"], rows)
        csv_paths["noop_skipping"] = str(path)

    if "move_maintenance" in cfg.studies:
        by_window = maintenance_entropy_experiment(
            cfg.seeds, steps=cfg.steps, windows=cfg.maintain_windows, env=env,
            threshold=cfg.threshold, window=cfg.window, hidden=cfg.hidden,
            learning_rate=cfg.learning_rate,
            opponent_skills=cfg.opponent_skills)
        rows = []
        for n, traces in by_window.items():
            records.append({"experiment": "move_maintenance", "maintain": n,
                            "final_entropy": [t.final_move_entropy()
                                              for t in traces],
                            "median": float(np.median(
                                [t.final_move_entropy() for t in traces]))})
            for seed, trace in zip(cfg.seeds, traces):
                for step, entropy in trace.entropy_curve():
                    rows.append([n, seed, step, entropy])
        path = out / "maintenance_entropy.csv"
        _write_csv(path, ["maintain", "seed", "step", "entropy"], rows)
        csv_paths["maintenance_entropy"] = str(path)

    if "pool_generalization" in cfg.studies \
            and cfg.shared_dir is not None and cfg.independent_dir is not None:
        cross = pool_cross_evaluation(
            cfg.shared_dir, cfg.independent_dir,
            snapshots_per_style=cfg.snapshots_per_style,
            matches=cfg.cross_matches, env=env)
        records.extend(cross)
        styles = [k for k in cross[0] if k not in ("experiment", "regime",
                                                   "average")]
        path = out / "pool_generalization.csv"
        _write_csv(path, ["regime", *styles, "average"],
                   [[r["regime"], *[r[s] for s in styles], r["average"]]
                    for r in cross])
        csv_paths["pool_generalization"] = str(path)

    if "game_length" in cfg.studies and cfg.length_checkpoints:
        checkpoints = {}
        for style, p in cfg.length_checkpoints.items():
            if not Path(p).exists():
                raise MissingCheckpointError(f"missing checkpoint {p}")
            checkpoints[style] = load_params(p)
        lengths = game_length_by_style(checkpoints,
                                       matches=cfg.length_matches, env=env)
        records.append({"experiment": "game_length", "mean_length": lengths})
        path = out / "game_length.csv"
        _write_csv(path, ["style", "mean_length"],
                   [[s, l] for s, l in lengths.items()])
        csv_paths["game_length"] = str(path)

    report_path = out / "report.jsonl"
    with open(report_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return AblationReport(records=records, report_path=str(report_path),
                          csv_paths=csv_paths)
