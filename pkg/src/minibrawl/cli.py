"""Command-line surface: train, eval, ablate, serve, dump."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .ablation import AblationConfig, ablation_suite
from .arena import Arena, default_arena
from .evaluate import (
    NetPolicy,
    apply_reaction_delay,
    binomial_tail,
    play_matches,
    wilson_interval,
)
from .net import load_params
from .pipeline import load_episodes, dump_lines
from .selfplay import CurriculumConfig, run_curriculum
from .server import duel_server


def _arena(skills: int) -> Arena:
    """Arena over the first `skills` roster entries; 0 keeps the full
    roster. Small prefixes (e.g. 4) make desk-scale training tractable."""
    env = default_arena()
    if skills and skills < env.roster.n_skills:
        roster = dataclasses.replace(env.roster,
                                     skills=env.roster.skills[:skills])
        env = Arena(roster)
    return env


_SKILLS_OPTION = click.option(
    "--skills", default=0, show_default=True, type=click.IntRange(0),
    help="Truncate the roster to its first N skills (0 keeps all). Must "
         "match the roster the checkpoint was trained on.")


@click.group()
def main() -> None:
    """Real-time dueling arena: training, evaluation, and live play."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for pools, checkpoints, and metrics.")
@click.option("--resume", is_flag=True,
              help="Continue each learner from its latest pool snapshot.")
@_SKILLS_OPTION
def train(config: str, out: str, resume: bool, skills: int) -> None:
    """Run a self-play curriculum described by a YAML config file.

    The file may set any CurriculumConfig field, for example:

    \b
        mode: shared
        styles: [aggressive, balanced, defensive]
        tick_budget: 200000
        seed: 0
    """
    raw = yaml.safe_load(Path(config).read_text()) or {}
    if not isinstance(raw, dict):
        raise click.ClickException("config must be a mapping of fields")
    for key in ("styles", "maintain_windows"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    try:
        cfg = CurriculumConfig(**raw)
        cfg.validate()
    except (TypeError, ValueError) as err:
        raise click.ClickException(str(err))
    result = run_curriculum(cfg, out, resume=resume, env=_arena(skills))
    for style, report in result.reports.items():
        click.echo(json.dumps({
            "style": style, "steps": report.steps, "ticks": report.ticks,
            "episodes": report.episodes, "snapshots": report.snapshots,
            "dropped_empty": report.dropped_empty,
            "checkpoint": report.checkpoint,
            "metrics": report.metrics_path}))


@main.command("eval")
@click.argument("checkpoint_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("checkpoint_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--matches", "-n", default=100, show_default=True,
              help="Number of matches to play.")
@click.option("--seed", default=0, show_default=True)
@click.option("--maintain", default=10, show_default=True,
              help="Move-maintenance window for both policies.")
@click.option("--delay/--no-delay", default=False, show_default=True,
              help="Apply the human-reaction delay handicap to side A.")
@_SKILLS_OPTION
def eval_command(checkpoint_a: str, checkpoint_b: str, matches: int,
                 seed: int, maintain: int, delay: bool, skills: int) -> None:
    """Play checkpoint A against checkpoint B and report the win rate."""
    env = _arena(skills)
    policy_a = NetPolicy(load_params(checkpoint_a), maintain=maintain)
    if delay:
        policy_a = apply_reaction_delay(policy_a)
    policy_b = NetPolicy(load_params(checkpoint_b), maintain=maintain)
    summary = play_matches(env, policy_a, policy_b, matches, seed=seed)
    decisive = summary.wins + summary.losses
    lo, hi = wilson_interval(summary.wins, decisive) if decisive else (0.0, 1.0)
    click.echo(json.dumps({
        "a": checkpoint_a, "b": checkpoint_b, "matches": summary.count,
        "wins": summary.wins, "losses": summary.losses, "draws": summary.draws,
        "win_rate": summary.win_rate, "mean_length": summary.mean_length,
        "wilson_95": [lo, hi],
        "p_value_vs_even": binomial_tail(summary.wins, decisive)
        if decisive else 1.0}))


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--study", "studies", multiple=True,
              type=click.Choice(["noop_skipping", "move_maintenance",
                                 "pool_generalization", "game_length"]),
              help="Restrict to specific studies; default runs all feasible.")
@click.option("--seeds", default="0,1,2", show_default=True,
              help="Comma-separated training seeds.")
@click.option("--steps", default=300, show_default=True,
              help="Learner steps per training arm.")
@click.option("--shared-dir", type=click.Path(file_okay=False),
              help="Shared-mode curriculum run directory (pool study).")
@click.option("--independent-dir", type=click.Path(file_okay=False),
              help="Independent-mode curriculum run directory (pool study).")
@click.option("--checkpoint", "checkpoints", multiple=True,
              metavar="STYLE=PATH",
              help="Style checkpoint for the game-length study; repeatable.")
@click.option("--learning-rate", default=1e-4, show_default=True,
              help="Adam step size for the training arms.")
@_SKILLS_OPTION
def ablate(out: str, studies: tuple[str, ...], seeds: str, steps: int,
           shared_dir: str | None, independent_dir: str | None,
           checkpoints: tuple[str, ...], learning_rate: float,
           skills: int) -> None:
    """Run the comparison experiments and write reports plus CSV data."""
    length_checkpoints = {}
    for spec_arg in checkpoints:
        if "=" not in spec_arg:
            raise click.ClickException(
                f"--checkpoint wants STYLE=PATH, got {spec_arg!r}")
        style, path = spec_arg.split("=", 1)
        length_checkpoints[style] = path
    cfg = AblationConfig(
        seeds=tuple(int(s) for s in seeds.split(",")),
        steps=steps,
        learning_rate=learning_rate,
        shared_dir=shared_dir,
        independent_dir=independent_dir,
        length_checkpoints=length_checkpoints)
    if studies:
        cfg.studies = tuple(studies)
    report = ablation_suite(cfg, out, env=_arena(skills))
    for record in report.records:
        click.echo(json.dumps(record))
    click.echo(json.dumps({"report": report.report_path,
                           "csv": report.csv_paths}))


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--port", default=8765, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--record-dir", type=click.Path(file_okay=False),
              help="Directory for match logs; omit to skip recording.")
@_SKILLS_OPTION
def serve(checkpoint: str, port: int, host: str, seed: int,
          record_dir: str | None, skills: int) -> None:
    """Host live duels against a trained checkpoint."""
    duel_server(checkpoint, port, host=host, seed=seed,
                record_dir=record_dir, env=_arena(skills))


@main.command()
@click.argument("episodes", type=click.Path(exists=True, dir_okay=False))
@click.option("--limit", default=0, show_default=True,
              help="Stop after this many lines (0 means everything).")
def dump(episodes: str, limit: int) -> None:
    """Print an episode-log file as human-readable text."""
    try:
        logs = load_episodes(episodes)
    except ValueError as err:
        raise click.ClickException(str(err))
    for i, line in enumerate(dump_lines(logs)):
        if limit and i >= limit:
            click.echo(f"... ({limit} line limit)")
            break
        click.echo(line)


if __name__ == "__main__":
    main()
