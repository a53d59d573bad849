"""Live duel service: a human client fights a checkpoint over WebSocket.

The server owns the authoritative match loop at 10 Hz. Clients send
{skill, move} inputs which take effect at the next tick, defaulting to
no-op and no-move whenever no input arrived in time; the agent plays
under the reaction-delay handicap. Every frame in both directions is a
JSON text message carrying a protocol version. Finished matches are
written as a replayable action log plus a standard episode log.

The WebSocket layer implements the subset of RFC 6455 needed here:
HTTP upgrade handshake, single-fragment text/close/ping/pong frames,
client-to-server masking.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import os
import secrets
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acer import GAMMA, EpisodeLog, Transition
from .arena import (
    Arena,
    JointAction,
    N_MOVES,
    NO_MOVE,
    Side,
    Status,
    default_arena,
)
from .evaluate import NetPolicy, apply_reaction_delay
from .net import NetworkParams, load_params
from .pipeline import MAINTAIN_TICKS, save_episodes

PROTOCOL = 1
TICK_HZ = 10.0

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class ProtocolError(ValueError):
    """Malformed WebSocket handshake or frame."""


class ConnectionClosed(ConnectionError):
    """Peer closed the socket or sent a close frame."""


# -- WebSocket plumbing -----------------------------------------------------

def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def encode_frame(payload: bytes, opcode: int = OP_TEXT, *,
                 mask: bool = False) -> bytes:
    head = bytes([0x80 | opcode])
    mask_bit = 0x80 if mask else 0
    n = len(payload)
    if n < 126:
        head += bytes([mask_bit | n])
    elif n < 2 ** 16:
        head += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        head += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if not mask:
        return head + payload
    key = secrets.token_bytes(4)
    masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return head + key + masked


async def read_frame(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    """One complete frame; fragmentation is not supported."""
    try:
        b0, b1 = await reader.readexactly(2)
        if not b0 & 0x80:
            raise ProtocolError("fragmented frames not supported")
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        n = b1 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", await reader.readexactly(2))
        elif n == 127:
            (n,) = struct.unpack(">Q", await reader.readexactly(8))
        key = await reader.readexactly(4) if masked else None
        payload = await reader.readexactly(n) if n else b""
    except (asyncio.IncompleteReadError, ConnectionResetError) as err:
        raise ConnectionClosed("socket closed mid-frame") from err
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload


async def send_json(writer: asyncio.StreamWriter, message: dict, *,
                    mask: bool = False) -> None:
    payload = json.dumps(message, separators=(",", ":")).encode("utf-8")
    writer.write(encode_frame(payload, mask=mask))
    await writer.drain()


async def recv_json(reader: asyncio.StreamReader,
                    writer: asyncio.StreamWriter, *,
                    mask_replies: bool = False) -> dict:
    """Next text frame parsed as JSON; answers pings, raises on close."""
    while True:
        opcode, payload = await read_frame(reader)
        if opcode == OP_PING:
            writer.write(encode_frame(payload, OP_PONG, mask=mask_replies))
            await writer.drain()
        elif opcode == OP_PONG:
            continue
        elif opcode == OP_CLOSE:
            raise ConnectionClosed("close frame received")
        elif opcode == OP_TEXT:
            try:
                return json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as err:
                raise ProtocolError(f"unparseable text frame: {err}") from err
        else:
            raise ProtocolError(f"unsupported opcode {opcode}")


async def server_handshake(reader: asyncio.StreamReader,
                           writer: asyncio.StreamWriter) -> None:
    request = await reader.readuntil(b"\r\n\r\n")
    headers = {}
    for line in request.decode("latin-1").split("\r\n")[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    if headers.get("upgrade", "").lower() != "websocket" \
            or "sec-websocket-key" not in headers:
        writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        await writer.drain()
        raise ProtocolError("not a websocket upgrade request")
    writer.write((
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(headers['sec-websocket-key'])}\r\n"
        "\r\n").encode("ascii"))
    await writer.drain()


async def client_handshake(reader: asyncio.StreamReader,
                           writer: asyncio.StreamWriter, host: str) -> None:
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    writer.write((
        "GET / HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n").encode("ascii"))
    await writer.drain()
    response = (await reader.readuntil(b"\r\n\r\n")).decode("latin-1")
    if "101" not in response.split("\r\n")[0]:
        raise ProtocolError(f"handshake refused: {response.splitlines()[0]}")
    expected = accept_key(key)
    for line in response.split("\r\n"):
        if line.lower().startswith("sec-websocket-accept:"):
            if line.split(":", 1)[1].strip() != expected:
                raise ProtocolError("bad accept key")
            return
    raise ProtocolError("missing accept key")


# -- frame payload builders -------------------------------------------------

def _combatant_json(c) -> dict:
    return {"position": [float(c.position[0]), float(c.position[1])],
            "facing": [float(c.facing[0]), float(c.facing[1])],
            "hp": float(c.hp), "sp": float(c.sp),
            "status": Status(c.status).name.lower(),
            "status_ticks": int(c.status_ticks),
            "cooldowns": [int(v) for v in c.cooldowns]}


def _tick_events(prev, nxt, agent_action, human_action) -> list[dict]:
    events = []
    for side, act in ((Side.AGENT, agent_action), (Side.OPPONENT, human_action)):
        name = side.name.lower()
        if act.skill != 0:
            events.append({"kind": "cast", "side": name, "skill": act.skill})
        hurt = prev.combatant(side).hp - nxt.combatant(side).hp
        if hurt > 1e-9:
            events.append({"kind": "hit", "side": name,
                           "amount": round(float(hurt), 4)})
        was, now = prev.combatant(side).status, nxt.combatant(side).status
        if now != was and now != Status.NORMAL:
            events.append({"kind": "status", "side": name,
                           "status": Status(now).name.lower(),
                           "ticks": int(nxt.combatant(side).status_ticks)})
    if nxt.done:
        events.append({"kind": "end", "outcome": nxt.outcome.value})
    return events


# -- the server -------------------------------------------------------------

@dataclass(slots=True)
class MatchRecord:
    match_id: str
    seed: int
    aborted: bool
    outcome: str
    ticks: int
    log_path: str | None
    episode_path: str | None


class DuelServer:
    """Authoritative duel host. One connection drives one match; the
    human plays the opponent side against the loaded parameters."""

    def __init__(self, params: NetworkParams, *, host: str = "127.0.0.1",
                 port: int = 0, seed: int = 0, tick_hz: float = TICK_HZ,
                 record_dir: str | Path | None = None,
                 env: Arena | None = None, maintain: int = MAINTAIN_TICKS,
                 checkpoint_name: str = "checkpoint"):
        self.params = params
        self.host = host
        self.port = port
        self.seed = seed
        self.tick_hz = tick_hz
        self.record_dir = Path(record_dir) if record_dir is not None else None
        self.env = env if env is not None else default_arena()
        self.maintain = maintain
        self.checkpoint_name = checkpoint_name
        self.matches: list[MatchRecord] = []
        self._counter = 0
        self._server: asyncio.base_events.Server | None = None

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host,
                                                  self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    def _hello(self, match_id: str) -> dict:
        c = self.env.c
        return {"protocol": PROTOCOL, "type": "hello", "match_id": match_id,
                "tick_hz": self.tick_hz, "side": "opponent",
                "n_moves": N_MOVES,
                "arena": {"radius": c.radius, "hp_max": c.hp_max,
                          "sp_max": c.sp_max, "max_ticks": c.max_ticks,
                          "move_speed": c.move_speed},
                "skills": [{"id": s.id, "name": s.name,
                            "function": s.function.value,
                            "cooldown": s.cooldown, "sp_cost": s.sp_cost,
                            "damage": s.damage, "range": s.range}
                           for s in self.env.roster.skills]}

    def _tick_frame(self, state, events) -> dict:
        mask = self.env.available_skills(state, Side.OPPONENT)
        return {"protocol": PROTOCOL, "type": "tick", "tick": state.tick,
                "agent": _combatant_json(state.agent),
                "opponent": _combatant_json(state.opponent),
                "availability": [bool(v) for v in mask],
                "cooldowns": [int(v) for v in state.opponent.cooldowns],
                "events": events, "outcome": state.outcome.value}

    async def _input_loop(self, reader, writer, match_id: str,
                          box: dict) -> None:
        n_skills = self.env.roster.n_skills
        while True:
            try:
                msg = await recv_json(reader, writer)
            except ProtocolError:
                await send_json(writer, {"protocol": PROTOCOL, "type": "error",
                                         "reason": "malformed message"})
                continue
            ok = (isinstance(msg, dict) and msg.get("protocol") == PROTOCOL
                  and msg.get("type") == "input"
                  and msg.get("match_id") == match_id
                  and type(msg.get("skill")) is int
                  and type(msg.get("move")) is int
                  and 0 <= msg["skill"] < n_skills
                  and 0 <= msg["move"] < N_MOVES)
            if not ok:
                await send_json(writer, {"protocol": PROTOCOL, "type": "error",
                                         "reason": "malformed message"})
                continue
            box["skill"] = msg["skill"]
            box["move"] = msg["move"]
            box["fresh"] = True

    async def _handle(self, reader: asyncio.StreamReader,
                      writer: asyncio.StreamWriter) -> None:
        try:
            await self._run_match(reader, writer)
        except (ConnectionClosed, ConnectionError, ProtocolError,
                asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _run_match(self, reader, writer) -> None:
        await server_handshake(reader, writer)
        match_id = f"match-{self._counter:04d}"
        match_seed = self.seed + self._counter
        self._counter += 1
        env = self.env
        state = env.reset(match_seed)

        inner = NetPolicy(self.params, maintain=self.maintain)
        agent = apply_reaction_delay(inner)
        agent.seed((self.seed, match_seed, 2))
        agent.reset()

        await send_json(writer, self._hello(match_id))
        await send_json(writer, self._tick_frame(state, []))

        box = {"skill": 0, "move": NO_MOVE, "fresh": False}
        input_task = asyncio.create_task(
            self._input_loop(reader, writer, match_id, box))
        actions: list[dict] = []
        transitions: list[Transition] = []
        aborted = False
        loop = asyncio.get_running_loop()
        period = 1.0 / self.tick_hz
        start = loop.time()
        step = 0
        try:
            while not state.done:
                deadline = start + (step + 1) * period
                pause = deadline - loop.time()
                if pause > 0:
                    await asyncio.sleep(pause)
                if input_task.done():
                    aborted = True
                    break
                if box["fresh"]:
                    skill, move = box["skill"], box["move"]
                    box["fresh"] = False
                else:
                    skill, move = 0, NO_MOVE
                mask = env.available_skills(state, Side.OPPONENT)
                if not mask[skill]:
                    await send_json(writer, {
                        "protocol": PROTOCOL, "type": "warning",
                        "reason": "unavailable skill", "skill": skill,
                        "tick": state.tick})
                    skill = 0
                human_action = JointAction(skill, move)
                agent_action, _ = agent.decide(env, state, Side.AGENT)
                prev = state
                obs = env.observe(prev, Side.AGENT)
                agent_mask = env.available_skills(prev, Side.AGENT)
                state, r_agent, _ = env.step(state, agent_action, human_action)
                actions.append({"tick": prev.tick,
                                "agent": [agent_action.skill, agent_action.move],
                                "human": [human_action.skill, human_action.move]})
                transitions.append(_duel_transition(
                    env, obs, agent_mask, agent_action, r_agent, state.done))
                events = _tick_events(prev, state, agent_action, human_action)
                await send_json(writer, self._tick_frame(state, events))
                step += 1
        except (ConnectionClosed, ConnectionError):
            aborted = True
        finally:
            input_task.cancel()
            try:
                await input_task
            except (asyncio.CancelledError, ConnectionClosed, ConnectionError,
                    ProtocolError):
                pass

        record = self._write_record(match_id, match_seed, aborted, state,
                                    actions, transitions)
        self.matches.append(record)
        if not aborted:
            await send_json(writer, {
                "protocol": PROTOCOL, "type": "end",
                "outcome": record.outcome, "ticks": record.ticks,
                "record": record.log_path})

    def _write_record(self, match_id, match_seed, aborted, state, actions,
                      transitions) -> MatchRecord:
        outcome = "aborted" if aborted else state.outcome.value
        record = MatchRecord(match_id=match_id, seed=match_seed,
                             aborted=aborted, outcome=outcome,
                             ticks=len(actions), log_path=None,
                             episode_path=None)
        if self.record_dir is None:
            return record
        self.record_dir.mkdir(parents=True, exist_ok=True)
        log = {"protocol": PROTOCOL, "match_id": match_id, "seed": match_seed,
               "checkpoint": self.checkpoint_name, "tick_hz": self.tick_hz,
               "aborted": aborted, "outcome": outcome,
               "ticks": len(actions), "actions": actions}
        path = self.record_dir / f"{match_id}.json"
        path.write_text(json.dumps(log))
        record.log_path = str(path)
        if not aborted and transitions:
            episode_path = self.record_dir / f"{match_id}.mbep"
            save_episodes(episode_path,
                          [EpisodeLog(transitions=transitions, style="baseline",
                                      agent_snapshot=self.checkpoint_name,
                                      opponent_snapshot="human",
                                      outcome=state.outcome)])
            record.episode_path = str(episode_path)
        return record


def _duel_transition(env, obs, mask, action, reward, terminal) -> Transition:
    """Archive form of one duel tick: the emitted actions with degenerate
    behavior probabilities, so standard episode tooling can read it."""
    skill_dist = np.zeros(env.roster.n_skills)
    skill_dist[action.skill] = 1.0
    move_dist = np.zeros(N_MOVES)
    move_dist[action.move] = 1.0
    return Transition(obs=obs, skill_mask=mask, skill=action.skill,
                      move=action.move, behavior_skill_dist=skill_dist,
                      behavior_move_dist=move_dist, reward=reward,
                      gap_discount=GAMMA, terminal=terminal, move_fresh=True)


def replay_match_log(path: str | Path, env: Arena | None = None) -> dict:
    """Re-simulate a recorded duel from its action log. Returns the
    replayed outcome and tick count alongside the recorded values; the
    environment is deterministic, so they match for faithful logs."""
    env = env if env is not None else default_arena()
    log = json.loads(Path(path).read_text())
    state = env.reset(int(log["seed"]))
    for entry in log["actions"]:
        agent = JointAction(*entry["agent"])
        human = JointAction(*entry["human"])
        state, _, _ = env.step(state, agent, human)
    outcome = "aborted" if log["aborted"] and not state.done \
        else state.outcome.value
    return {"outcome": outcome, "ticks": state.tick,
            "recorded_outcome": log["outcome"], "recorded_ticks": log["ticks"],
            "matches_record": (outcome == log["outcome"]
                               and state.tick == log["ticks"])}


async def scripted_duel_client(host: str, port: int, *,
                               choose=None, max_ticks: int | None = None) -> dict:
    """Headless client: plays one full match and reports what it saw.
    `choose` maps a tick frame to an optional (skill, move) input; by
    default no inputs are sent and the character stands idle."""
    reader, writer = await asyncio.open_connection(host, port)
    loop = asyncio.get_running_loop()
    try:
        await client_handshake(reader, writer, host)
        hello = await recv_json(reader, writer, mask_replies=True)
        if hello.get("type") != "hello" or hello.get("protocol") != PROTOCOL:
            raise ProtocolError(f"expected hello, got {hello.get('type')}")
        match_id = hello["match_id"]
        arrivals: list[float] = []
        warnings: list[dict] = []
        errors: list[dict] = []
        end = None
        ticks = 0
        while end is None:
            msg = await recv_json(reader, writer, mask_replies=True)
            if msg.get("type") == "tick":
                arrivals.append(loop.time())
                ticks = msg["tick"]
                if choose is not None and msg["outcome"] == "ongoing":
                    picked = choose(msg)
                    if picked is not None:
                        await send_json(writer, {
                            "protocol": PROTOCOL, "type": "input",
                            "match_id": match_id, "tick": msg["tick"],
                            "skill": int(picked[0]), "move": int(picked[1])},
                            mask=True)
                if max_ticks is not None and ticks >= max_ticks:
                    break
            elif msg.get("type") == "warning":
                warnings.append(msg)
            elif msg.get("type") == "error":
                errors.append(msg)
            elif msg.get("type") == "end":
                end = msg
        intervals = [b - a for a, b in zip(arrivals, arrivals[1:])]
        return {"hello": hello, "ticks": ticks, "end": end,
                "warnings": warnings, "errors": errors,
                "intervals": intervals}
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


def duel_server(checkpoint: str | Path, port: int, *, host: str = "127.0.0.1",
                seed: int = 0, record_dir: str | Path | None = None,
                maintain: int = MAINTAIN_TICKS,
                env: Arena | None = None) -> None:
    """Blocking entry point: load a checkpoint and serve duels until
    interrupted."""
    params = load_params(checkpoint)
    server = DuelServer(params, host=host, port=port, seed=seed,
                        record_dir=record_dir, maintain=maintain, env=env,
                        checkpoint_name=Path(checkpoint).name)

    async def _serve():
        await server.start()
        print(f"duel server on ws://{server.host}:{server.port} "
              f"(checkpoint {server.checkpoint_name})")
        await server.serve_forever()

    try:
        asyncio.run(_serve())
    except KeyboardInterrupt:
        pass
