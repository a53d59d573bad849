"""Shared-pool self-play training with style-specific learners.

Each learner owns one style's reward shaping and trains against
opponents drawn from a snapshot pool: the most recent k snapshots of
every style carry total probability mass p, annealed from 0.8 to 0.1
over training, and the remaining mass spreads uniformly over the older
snapshots. Learners and their simulator workers run as cooperatively
scheduled tasks in one process, interleaved round-robin per episode, so
runs are deterministic; the pool itself is a directory registry guarded
by file locks and safe for genuinely concurrent writers.
"""

from __future__ import annotations

import fcntl
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acer import (
    BATCH_EPISODES,
    EpisodeLog,
    LearnerState,
    ReplayBuffer,
    acer_gradient,
    head_for_step,
    update_step,
)
from .arena import Arena, Outcome, STYLES, default_arena
from .evaluate import NetPolicy, play_episode
from .net import NetConfig, NetworkParams, load_params, save_params
from .pipeline import EmptyEpisodeError, MAINTAIN_TICKS, filter_episode, unfiltered_episode

P_START = 0.8
P_END = 0.1
RECENT_K = 5
SNAPSHOT_INTERVAL = 10_000


class PoolNotReadyError(RuntimeError):
    """No snapshot registered yet; callers fall back to mirror self-play."""


def anneal_p(progress: float) -> float:
    """Recent-set probability mass, linear in training progress. Written
    as an interpolation so both endpoints are exact in floating point."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress {progress} outside [0, 1]")
    return P_START * (1.0 - progress) + P_END * progress


@dataclass(slots=True, frozen=True)
class SnapshotMeta:
    """One registered parameter snapshot. Ids increase monotonically in
    registration order, which also orders each style's snapshots."""

    snapshot_id: int
    style: str
    step: int
    path: str
    saved_at: float

    def to_json(self) -> str:
        return json.dumps({"snapshot_id": self.snapshot_id, "style": self.style,
                           "step": self.step, "path": self.path,
                           "saved_at": self.saved_at})

    @classmethod
    def from_json(cls, line: str) -> "SnapshotMeta":
        d = json.loads(line)
        return cls(snapshot_id=int(d["snapshot_id"]), style=str(d["style"]),
                   step=int(d["step"]), path=str(d["path"]),
                   saved_at=float(d["saved_at"]))


class OpponentPool:
    """Append-only snapshot registry backed by a directory.

    `index.jsonl` holds one SnapshotMeta record per line; parameter
    files are written next to it and never mutated after registration.
    Registration takes an exclusive file lock, so several training
    processes may share one pool.
    """

    def __init__(self, root: str | Path, *, k: int = RECENT_K, p: float = P_START):
        if k < 1:
            raise ValueError(f"recency window {k} must be at least 1")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.k = k
        self.p = p
        self._snapshots: list[SnapshotMeta] = []
        self.refresh()

    @property
    def _index(self) -> Path:
        return self.root / "index.jsonl"

    def refresh(self) -> None:
        """Re-read the index; picks up snapshots registered elsewhere."""
        if not self._index.exists():
            self._snapshots = []
            return
        with open(self._index) as fh:
            self._snapshots = [SnapshotMeta.from_json(line)
                               for line in fh if line.strip()]

    def __len__(self) -> int:
        return len(self._snapshots)

    def snapshots(self, style: str | None = None) -> list[SnapshotMeta]:
        if style is None:
            return list(self._snapshots)
        return [s for s in self._snapshots if s.style == style]

    def recent(self) -> list[SnapshotMeta]:
        """Union of the most recent k snapshots of every style."""
        out = []
        for style in sorted({s.style for s in self._snapshots}):
            out.extend(self.snapshots(style)[-self.k:])
        return out

    def latest(self, style: str) -> SnapshotMeta:
        mine = self.snapshots(style)
        if not mine:
            raise PoolNotReadyError(f"no {style} snapshot in {self.root}")
        return mine[-1]

    def register(self, params: NetworkParams, style: str, step: int) -> SnapshotMeta:
        """Atomically save parameters and append them to the index."""
        with open(self.root / ".lock", "a+") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)
            self.refresh()
            snapshot_id = len(self._snapshots)
            name = f"{style}-{snapshot_id:06d}.ckpt"
            tmp = self.root / f".{name}.tmp"
            save_params(params, tmp)
            os.replace(tmp, self.root / name)
            meta = SnapshotMeta(snapshot_id=snapshot_id, style=style, step=step,
                                path=name, saved_at=time.time())
            with open(self._index, "a") as fh:
                fh.write(meta.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        self._snapshots.append(meta)
        return meta

    def load(self, meta: SnapshotMeta) -> NetworkParams:
        return load_params(self.root / meta.path)


def sample_opponent(pool: OpponentPool, rng: np.random.Generator) -> SnapshotMeta:
    """Draw an opponent snapshot under the recency schedule: probability
    `pool.p` of a uniform pick from the recent set (last k per style),
    rest uniform over the older snapshots. With no older snapshots yet,
    all mass falls on the recent set."""
    if len(pool) == 0:
        raise PoolNotReadyError(f"pool at {pool.root} is empty")
    recent = pool.recent()
    recent_ids = {s.snapshot_id for s in recent}
    older = [s for s in pool.snapshots() if s.snapshot_id not in recent_ids]
    if not older or rng.random() < pool.p:
        return recent[rng.integers(len(recent))]
    return older[rng.integers(len(older))]


def snapshot_if_due(pool: OpponentPool, params: NetworkParams, style: str,
                    step: int, interval: int = SNAPSHOT_INTERVAL,
                    *, retries: int = 3) -> SnapshotMeta | None:
    """Register a snapshot exactly when step is a multiple of the
    interval. Storage hiccups are retried with backoff; registration
    failure after all retries is swallowed so training continues."""
    if step % interval != 0:
        return None
    delay = 0.05
    for attempt in range(retries):
        try:
            return pool.register(params, style, step)
        except OSError:
            if attempt == retries - 1:
                return None
            time.sleep(delay)
            delay *= 2
    return None


# -- curriculum -------------------------------------------------------------

@dataclass(slots=True)
class CurriculumConfig:
    """Desk-scale training run description. One learner per style; the
    tick budget, batch size, and worker count are per learner."""

    styles: tuple[str, ...] = ("aggressive", "balanced", "defensive")
    mode: str = "shared"               # shared | independent | baseline
    tick_budget: int = 200_000
    workers: int = 8                   # logical simulator workers per learner
    hidden: int = 64
    recent_k: int = RECENT_K
    snapshot_interval: int = 50        # learner steps between pool snapshots
    batch_episodes: int = BATCH_EPISODES
    replay_capacity: int = 128
    updates_per_episode: float = 1.0
    learning_rate: float = 1e-4
    maintain: int = MAINTAIN_TICKS
    skip_passive: bool = True
    anneal_horizon_ticks: int | None = None  # None: anneal over tick_budget
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("shared", "independent", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for style in self.styles:
            if style not in STYLES:
                raise ValueError(f"unknown style {style!r}")
        if self.tick_budget < 1 or self.workers < 1 or self.batch_episodes < 1:
            raise ValueError("budgets and counts must be positive")
        if self.anneal_horizon_ticks is not None \
                and self.anneal_horizon_ticks < 1:
            raise ValueError("anneal horizon must be positive")


@dataclass(slots=True)
class LearnerReport:
    style: str
    params: NetworkParams
    checkpoint: str
    metrics_path: str
    steps: int
    ticks: int
    episodes: int
    dropped_empty: int
    snapshots: int


@dataclass(slots=True)
class CurriculumResult:
    reports: dict[str, LearnerReport]
    pool_dirs: dict[str, str]

    def params(self, style: str) -> NetworkParams:
        return self.reports[style].params


class _Learner:
    """One style's learner plus its logical simulator workers, run as a
    cooperative task: `run_slice` plays one episode (attributed to the
    next worker round-robin) and applies the due number of updates."""

    def __init__(self, style: str, pool: OpponentPool, cfg: CurriculumConfig,
                 env: Arena, out_dir: Path, *, resume: bool):
        self.style = style
        self.pool = pool
        self.cfg = cfg
        self.env = env
        net_cfg = NetConfig(obs_dim=env.obs_dim, n_skills=env.roster.n_skills,
                            hidden=cfg.hidden)
        seed = cfg.seed
        params = NetworkParams.initialize(net_cfg, _rng(seed, style, "init"))
        self.state = LearnerState.fresh(params)
        if resume:
            try:
                meta = pool.latest(style)
                self.state = LearnerState.fresh(pool.load(meta))
                self.state = replace(self.state, step=meta.step)
            except PoolNotReadyError:
                pass
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self._episode_rng = _rng(seed, style, "episodes")
        self._replay_rng = _rng(seed, style, "replay")
        self._pool_rng = _rng(seed, style, "pool")
        self.ticks = 0
        self.episodes = 0
        self.dropped_empty = 0
        self.snapshots = 0
        self._update_credit = 0.0
        self.metrics_path = out_dir / f"metrics-{style}.jsonl"
        self._metrics = open(self.metrics_path, "w")
        if self.state.step % cfg.snapshot_interval == 0:
            self._snapshot()

    @property
    def done(self) -> bool:
        return self.ticks >= self.cfg.tick_budget

    def close(self) -> None:
        self._metrics.close()

    def _snapshot(self) -> None:
        meta = snapshot_if_due(self.pool, self.state.params, self.style,
                               self.state.step, self.cfg.snapshot_interval)
        if meta is not None:
            self.snapshots += 1

    def _log(self, record: dict) -> None:
        self._metrics.write(json.dumps(record) + "\n")

    def _opponent(self) -> tuple[NetworkParams, str]:
        self.pool.refresh()
        horizon = self.cfg.anneal_horizon_ticks or self.cfg.tick_budget
        self.pool.p = anneal_p(min(1.0, self.ticks / horizon))
        try:
            meta = sample_opponent(self.pool, self._pool_rng)
        except PoolNotReadyError:
            return self.state.params, "self"
        return self.pool.load(meta), meta.path

    def collect_episode(self) -> None:
        cfg = self.cfg
        opponent_params, opponent_name = self._opponent()
        worker = self.episodes % cfg.workers
        agent = NetPolicy(self.state.params, maintain=cfg.maintain,
                          skip_passive=cfg.skip_passive)
        opponent = NetPolicy(opponent_params, maintain=cfg.maintain)
        agent.seed((cfg.seed, _style_id(self.style), worker, self.episodes, 0))
        opponent.seed((cfg.seed, _style_id(self.style), worker, self.episodes, 1))
        env_seed = int(self._episode_rng.integers(2 ** 31))
        result = play_episode(self.env, agent, opponent,
                              style=STYLES[self.style], seed=env_seed,
                              record=True)
        self.ticks += result.length
        self.episodes += 1
        self._update_credit += cfg.updates_per_episode
        try:
            if cfg.skip_passive:
                episode = filter_episode(result.raw_ticks)
            else:
                episode = unfiltered_episode(result.raw_ticks)
        except EmptyEpisodeError:
            self.dropped_empty += 1
            return
        self.replay.add(EpisodeLog(
            transitions=episode.transitions, style=self.style,
            agent_snapshot=f"{self.style}:{self.state.step}",
            opponent_snapshot=opponent_name, outcome=result.outcome))
        self._log({"kind": "episode", "step": self.state.step,
                   "ticks": self.ticks, "episode": self.episodes,
                   "length": result.length, "kept": len(episode.transitions),
                   "outcome": result.outcome.value, "opponent": opponent_name})

    def update(self) -> None:
        batch = self.replay.sample(self._replay_rng, self.cfg.batch_episodes)
        head = head_for_step(self.state.step)
        grad, stats = acer_gradient(batch, self.state.params, head)
        self.state = update_step(self.state, grad, lr=self.cfg.learning_rate)
        stats.update({"kind": "update", "step": self.state.step,
                      "ticks": self.ticks, "head": head})
        self._log(stats)
        self._snapshot()

    def run_slice(self) -> None:
        self.collect_episode()
        while self._update_credit >= 1.0 and len(self.replay):
            self.update()
            self._update_credit -= 1.0


def _style_id(style: str) -> int:
    return sorted(STYLES).index(style)


def _rng(seed: int, style: str, stream: str) -> np.random.Generator:
    return np.random.default_rng([seed, _style_id(style), _STREAMS[stream]])


_STREAMS = {"init": 0, "episodes": 1, "replay": 2, "pool": 3}


def run_curriculum(cfg: CurriculumConfig, out_dir: str | Path,
                   *, resume: bool = False, env: Arena | None = None) -> CurriculumResult:
    """Train one learner per style to its tick budget.

    Modes: `shared` gives all styles one opponent pool, `independent`
    gives each style a private pool, and `baseline` trains a single
    unshaped learner (win and HP rewards only) in vanilla self-play
    against its own private pool.
    Learner and worker tasks interleave deterministically, so a rerun
    with the same config reproduces every snapshot byte for byte.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = env if env is not None else default_arena()

    styles = ("baseline",) if cfg.mode == "baseline" else cfg.styles
    pool_dirs: dict[str, str] = {}
    pools: dict[str, OpponentPool] = {}
    if cfg.mode == "shared":
        shared = OpponentPool(out / "pool", k=cfg.recent_k)
        for style in styles:
            pools[style] = shared
            pool_dirs[style] = str(shared.root)
    else:
        for style in styles:
            pool = OpponentPool(out / f"pool-{style}", k=cfg.recent_k)
            pools[style] = pool
            pool_dirs[style] = str(pool.root)

    learners = [_Learner(style, pools[style], cfg, env, out, resume=resume)
                for style in styles]
    try:
        while any(not L.done for L in learners):
            for L in learners:
                if not L.done:
                    L.run_slice()
    finally:
        for L in learners:
            L.close()

    reports = {}
    for L in learners:
        ckpt = out / f"{L.style}-final.ckpt"
        save_params(L.state.params, ckpt)
        reports[L.style] = LearnerReport(
            style=L.style, params=L.state.params, checkpoint=str(ckpt),
            metrics_path=str(L.metrics_path), steps=L.state.step,
            ticks=L.ticks, episodes=L.episodes,
            dropped_empty=L.dropped_empty, snapshots=L.snapshots)
    return CurriculumResult(reports=reports, pool_dirs=pool_dirs)
