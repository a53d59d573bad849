"""Recurrent policy/value network: GRU trunk, four output heads, exact BPTT.

The four heads share the trunk's hidden state: a masked softmax policy over
skills, a Q value per skill, and the same pair for the combined
move/targeting action. Unavailable skills get a large negative constant
added to their logits before the softmax and their probabilities are then
explicitly zeroed, so masked entries carry exactly zero probability.

Everything is plain numpy in float64; gradients are hand-derived and
checked against finite differences in the test suite. Checkpoints are
little-endian float32 with a shape table and survive a bit-exact round
trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

MASK_NEG = -1e9
N_MOVES_DEFAULT = 18


class MaskViolationError(ValueError):
    """The skill mask does not permit any action (no-op must stay available)."""


class NumericError(RuntimeError):
    """Non-finite value encountered; message names the offending tick."""


@dataclass(frozen=True)
class NetConfig:
    obs_dim: int
    n_skills: int
    n_moves: int = N_MOVES_DEFAULT
    hidden: int = 64
    bptt_window: int = 20


@dataclass
class NetworkParams:
    """All weights of the trunk and heads, float64 in memory."""

    # GRU gates: update z, reset r, candidate n
    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wn: np.ndarray
    un: np.ndarray
    bn: np.ndarray
    # heads
    w_skill_pi: np.ndarray
    b_skill_pi: np.ndarray
    w_skill_q: np.ndarray
    b_skill_q: np.ndarray
    w_move_pi: np.ndarray
    b_move_pi: np.ndarray
    w_move_q: np.ndarray
    b_move_q: np.ndarray

    @classmethod
    def initialize(cls, cfg: NetConfig, rng: np.random.Generator) -> "NetworkParams":
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        h, x = cfg.hidden, cfg.obs_dim
        return cls(
            wz=u((h, x), x), uz=u((h, h), h), bz=u(h, h),
            wr=u((h, x), x), ur=u((h, h), h), br=u(h, h),
            wn=u((h, x), x), un=u((h, h), h), bn=u(h, h),
            w_skill_pi=u((cfg.n_skills, h), h), b_skill_pi=u(cfg.n_skills, h),
            w_skill_q=u((cfg.n_skills, h), h), b_skill_q=u(cfg.n_skills, h),
            w_move_pi=u((cfg.n_moves, h), h), b_move_pi=u(cfg.n_moves, h),
            w_move_q=u((cfg.n_moves, h), h), b_move_q=u(cfg.n_moves, h),
        )

    @property
    def config(self) -> NetConfig:
        return NetConfig(obs_dim=self.wz.shape[1], n_skills=self.w_skill_pi.shape[0],
                         n_moves=self.w_move_pi.shape[0], hidden=self.wz.shape[0])

    def arrays(self) -> dict[str, np.ndarray]:
        """Named tensors in a fixed declaration order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self) -> "NetworkParams":
        return NetworkParams(**{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays().values())


def zero_hidden(params: NetworkParams) -> np.ndarray:
    """Recurrent state at episode start."""
    return np.zeros(params.wz.shape[0])


@dataclass
class HeadOutputs:
    skill_probs: np.ndarray
    skill_q: np.ndarray
    move_probs: np.ndarray
    move_q: np.ndarray

    @property
    def skill_value(self) -> float:
        """State value as the policy expectation of the skill Q head."""
        return float(self.skill_probs @ self.skill_q)

    @property
    def move_value(self) -> float:
        return float(self.move_probs @ self.move_q)


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        logits = np.where(mask, logits, logits + MASK_NEG)
    z = logits - logits.max()
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    total = e.sum()
    if total <= 0.0:
        raise MaskViolationError("softmax support is empty")
    return e / total


def softmax_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """d(loss)/d(logits) given d(loss)/d(probs); exact zeros where probs are 0."""
    return probs * (dprobs - float(dprobs @ probs))


def distribution_entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    p = probs[probs > 0.0]
    return float(-(p * np.log(p)).sum())


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a))


def _gru_step(p: NetworkParams, x: np.ndarray, h: np.ndarray):
    z = _sigmoid(p.wz @ x + p.uz @ h + p.bz)
    r = _sigmoid(p.wr @ x + p.ur @ h + p.br)
    un_h = p.un @ h
    n = np.tanh(p.wn @ x + r * un_h + p.bn)
    h_new = (1.0 - z) * n + z * h
    return h_new, z, r, n, un_h


def _heads(p: NetworkParams, h: np.ndarray, skill_mask: np.ndarray) -> HeadOutputs:
    return HeadOutputs(
        skill_probs=masked_softmax(p.w_skill_pi @ h + p.b_skill_pi, skill_mask),
        skill_q=p.w_skill_q @ h + p.b_skill_q,
        move_probs=masked_softmax(p.w_move_pi @ h + p.b_move_pi, None),
        move_q=p.w_move_q @ h + p.b_move_q,
    )


def _check_mask(skill_mask: np.ndarray) -> None:
    if not skill_mask[0]:
        raise MaskViolationError("no-op must always be available")


def forward(params: NetworkParams, obs: np.ndarray, h: np.ndarray,
            skill_mask: np.ndarray) -> tuple[HeadOutputs, np.ndarray]:
    """One decision step. Pure: identical inputs give identical outputs."""
    _check_mask(skill_mask)
    h_new, _, _, _, _ = _gru_step(params, obs, h)
    return _heads(params, h_new, skill_mask), h_new


def sample_action(outputs: HeadOutputs, rng: np.random.Generator
                  ) -> tuple[int, int, float, float]:
    """Sample (skill, move) independently; returns their probabilities too."""
    skill = sample_index(outputs.skill_probs, rng)
    move = sample_index(outputs.move_probs, rng)
    return skill, move, float(outputs.skill_probs[skill]), float(outputs.move_probs[move])


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw restricted to the nonzero support."""
    support = np.flatnonzero(probs > 0.0)
    if support.size == 1:
        return int(support[0])
    cdf = np.cumsum(probs[support])
    u = rng.random() * cdf[-1]
    return int(support[np.searchsorted(cdf, u, side="right").clip(max=support.size - 1)])


@dataclass
class EpisodeTape:
    """Per-tick activations recorded by forward_episode, consumed by backward."""

    xs: list
    h_prev: list
    zs: list
    rs: list
    ns: list
    un_hs: list
    h_out: list
    masks: list
    outputs: list

    def __len__(self) -> int:
        return len(self.xs)


def forward_episode(params: NetworkParams, obs_seq, mask_seq,
                    h0: np.ndarray | None = None) -> EpisodeTape:
    """Run the net over a tick sequence, recording everything backward needs."""
    h = zero_hidden(params) if h0 is None else h0.copy()
    tape = EpisodeTape([], [], [], [], [], [], [], [], [])
    for obs, mask in zip(obs_seq, mask_seq):
        _check_mask(mask)
        tape.xs.append(np.asarray(obs, dtype=float))
        tape.h_prev.append(h)
        h, z, r, n, un_h = _gru_step(params, tape.xs[-1], h)
        tape.zs.append(z)
        tape.rs.append(r)
        tape.ns.append(n)
        tape.un_hs.append(un_h)
        tape.h_out.append(h)
        tape.masks.append(np.asarray(mask, dtype=bool))
        tape.outputs.append(_heads(params, h, tape.masks[-1]))
    return tape


@dataclass
class HeadGradients:
    """d(loss)/d(head pre-activations) per tick: logits for the policy heads,
    raw outputs for the Q heads. Masked skill-logit entries must be zero."""

    skill_logits: np.ndarray   # (T, n_skills)
    skill_q: np.ndarray        # (T, n_skills)
    move_logits: np.ndarray    # (T, n_moves)
    move_q: np.ndarray         # (T, n_moves)

    @classmethod
    def zeros(cls, T: int, cfg: NetConfig) -> "HeadGradients":
        return cls(skill_logits=np.zeros((T, cfg.n_skills)),
                   skill_q=np.zeros((T, cfg.n_skills)),
                   move_logits=np.zeros((T, cfg.n_moves)),
                   move_q=np.zeros((T, cfg.n_moves)))


def backward(params: NetworkParams, tape: EpisodeTape, hg: HeadGradients,
             window: int | None = None) -> NetworkParams:
    """Exact gradient of the scalar loss encoded by `hg`, truncated BPTT.

    Gradients do not flow across window boundaries: the episode is split
    into consecutive windows of `window` ticks and d(loss)/d(hidden) is
    dropped at each boundary. Head gradients of every tick still
    contribute.
    """
    T = len(tape)
    if window is None:
        window = params.config.bptt_window
    g = params.zeros_like()
    dh = np.zeros_like(tape.h_out[0]) if T else None
    for t in range(T - 1, -1, -1):
        for name, arr in (("skill_logits", hg.skill_logits), ("skill_q", hg.skill_q),
                          ("move_logits", hg.move_logits), ("move_q", hg.move_q)):
            if not np.all(np.isfinite(arr[t])):
                raise NumericError(f"non-finite {name} gradient at tick {t}")
        if t % window == window - 1 or t == T - 1:
            dh = np.zeros_like(tape.h_out[t])   # window boundary: truncate

        h = tape.h_out[t]
        dsl = np.where(tape.masks[t], hg.skill_logits[t], 0.0)
        g.w_skill_pi += np.outer(dsl, h)
        g.b_skill_pi += dsl
        g.w_skill_q += np.outer(hg.skill_q[t], h)
        g.b_skill_q += hg.skill_q[t]
        g.w_move_pi += np.outer(hg.move_logits[t], h)
        g.b_move_pi += hg.move_logits[t]
        g.w_move_q += np.outer(hg.move_q[t], h)
        g.b_move_q += hg.move_q[t]
        dh = dh + (params.w_skill_pi.T @ dsl + params.w_skill_q.T @ hg.skill_q[t]
                   + params.w_move_pi.T @ hg.move_logits[t]
                   + params.w_move_q.T @ hg.move_q[t])

        # GRU cell backward
        x, hp = tape.xs[t], tape.h_prev[t]
        z, r, n, un_h = tape.zs[t], tape.rs[t], tape.ns[t], tape.un_hs[t]
        dz = dh * (hp - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        g.wn += np.outer(dan, x)
        g.bn += dan
        g.un += np.outer(dan * r, hp)
        dh_prev = dh_prev + params.un.T @ (dan * r)
        dr = dan * un_h
        dar = dr * r * (1.0 - r)
        g.wr += np.outer(dar, x)
        g.br += dar
        g.ur += np.outer(dar, hp)
        dh_prev = dh_prev + params.ur.T @ dar
        daz = dz * z * (1.0 - z)
        g.wz += np.outer(daz, x)
        g.bz += daz
        g.uz += np.outer(daz, hp)
        dh_prev = dh_prev + params.uz.T @ daz

        if not np.all(np.isfinite(dh_prev)):
            raise NumericError(f"non-finite hidden gradient at tick {t}")
        dh = dh_prev
    return g


# -- checkpoint I/O ---------------------------------------------------------

CKPT_MAGIC = b"MBNET"
CKPT_VERSION = 1


def save_params(params: NetworkParams, path) -> None:
    """Versioned binary layout: header, shape table, <f4 row-major data."""
    arrays = params.arrays()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class CheckpointError(ValueError):
    """Unreadable or shape-incompatible checkpoint file."""


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("ascii")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            shapes.append((name, shape))
        data = {}
        for name, shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise CheckpointError(f"{path}: truncated tensor {name}")
            data[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    expected = {f.name for f in fields(NetworkParams)}
    if set(data) != expected:
        raise CheckpointError(f"{path}: tensor set mismatch")
    return NetworkParams(**data)
