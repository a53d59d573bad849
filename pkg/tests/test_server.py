"""WebSocket duel server: codec, match loop, records, replay."""

import asyncio
import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from minibrawl.arena import NO_MOVE, Arena
from minibrawl.net import NetConfig, NetworkParams
from minibrawl.pipeline import load_episodes
from minibrawl.server import (
    OP_TEXT,
    ConnectionClosed,
    DuelServer,
    ProtocolError,
    accept_key,
    encode_frame,
    read_frame,
    replay_match_log,
    scripted_duel_client,
)
from minibrawl.skills import default_roster


def short_env(max_ticks=120):
    roster = default_roster()
    return Arena(dataclasses.replace(
        roster, arena=dataclasses.replace(roster.arena, max_ticks=max_ticks)))


def small_params(seed=0):
    env = short_env()
    cfg = NetConfig(obs_dim=env.obs_dim, n_skills=env.roster.n_skills, hidden=8)
    return NetworkParams.initialize(cfg, np.random.default_rng(seed))


def run(coro):
    return asyncio.run(coro)


async def start_server(tmp_path, **kw):
    defaults = dict(env=short_env(), tick_hz=250.0, record_dir=tmp_path,
                    seed=3)
    defaults.update(kw)
    server = DuelServer(small_params(), **defaults)
    await server.start()
    return server


# -- frame codec ------------------------------------------------------------

def test_accept_key_rfc_example():
    assert accept_key("dGhlIHNhbXBsZSBub25jZQ==") == \
        "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


@pytest.mark.parametrize("size", [0, 5, 125, 126, 300, 70_000])
@pytest.mark.parametrize("mask", [False, True])
def test_frame_roundtrip(size, mask):
    payload = bytes(i % 251 for i in range(size))

    async def check():
        reader = asyncio.StreamReader()
        reader.feed_data(encode_frame(payload, mask=mask))
        opcode, out = await read_frame(reader)
        assert opcode == OP_TEXT
        assert out == payload

    run(check())


def test_fragmented_frame_rejected():
    async def check():
        reader = asyncio.StreamReader()
        frame = bytearray(encode_frame(b"abc"))
        frame[0] &= 0x7F                    # clear FIN
        reader.feed_data(bytes(frame))
        with pytest.raises(ProtocolError):
            await read_frame(reader)

    run(check())


def test_truncated_frame_is_connection_closed():
    async def check():
        reader = asyncio.StreamReader()
        reader.feed_data(encode_frame(b"abcdef")[:3])
        reader.feed_eof()
        with pytest.raises(ConnectionClosed):
            await read_frame(reader)

    run(check())


# -- match loop -------------------------------------------------------------

def test_full_match_record_and_replay(tmp_path):
    async def scenario():
        server = await start_server(tmp_path)
        try:
            summary = await scripted_duel_client("127.0.0.1", server.port)
        finally:
            await server.stop()
        return server, summary

    server, summary = run(scenario())
    assert summary["hello"]["side"] == "opponent"
    assert summary["hello"]["skills"][0]["name"] == "noop"
    assert summary["end"] is not None
    assert summary["end"]["outcome"] in ("agent_win", "opponent_win", "draw")
    assert summary["ticks"] <= 120

    assert len(server.matches) == 1
    record = server.matches[0]
    assert not record.aborted
    assert record.outcome == summary["end"]["outcome"]

    replay = replay_match_log(record.log_path, env=short_env())
    assert replay["matches_record"]
    assert replay["outcome"] == record.outcome

    episodes = load_episodes(record.episode_path)
    assert len(episodes) == 1
    assert len(episodes[0].transitions) == record.ticks
    assert episodes[0].transitions[-1].terminal


def test_human_inputs_move_the_character(tmp_path):
    frames = []

    def push_east(msg):
        frames.append(msg)
        return 0, 0 * 2          # direction 0, face opponent

    def idle(msg):
        frames.append(msg)
        return None

    async def scenario(choose):
        server = await start_server(tmp_path, record_dir=None)
        try:
            frames.clear()
            await scripted_duel_client("127.0.0.1", server.port, choose=choose)
            return [f["opponent"]["position"][0] for f in frames]
        finally:
            await server.stop()

    moving = run(scenario(push_east))
    still = run(scenario(idle))
    assert abs(moving[-1] - moving[0]) > 0.5
    assert still[-1] == pytest.approx(still[0])


def test_unavailable_skill_warning_and_substitution(tmp_path):
    heavy = 3                     # long cooldown: second cast must be refused

    async def scenario():
        server = await start_server(tmp_path, record_dir=None)
        try:
            return await scripted_duel_client(
                "127.0.0.1", server.port,
                choose=lambda msg: (heavy, NO_MOVE))
        finally:
            await server.stop()

    summary = run(scenario())
    assert summary["warnings"]
    assert all(w["reason"] == "unavailable skill" for w in summary["warnings"])
    assert all(w["skill"] == heavy for w in summary["warnings"])
    assert summary["end"] is not None


def test_malformed_messages_get_error_frames(tmp_path):
    from minibrawl.server import client_handshake, recv_json, send_json

    async def scenario():
        server = await start_server(tmp_path, record_dir=None)
        errors = []
        try:
            reader, writer = await asyncio.open_connection("127.0.0.1",
                                                           server.port)
            await client_handshake(reader, writer, "127.0.0.1")
            hello = await recv_json(reader, writer, mask_replies=True)
            writer.write(encode_frame(b"not json", mask=True))
            await writer.drain()
            await send_json(writer, {"protocol": 99, "type": "input",
                                     "match_id": hello["match_id"],
                                     "skill": 1, "move": 0}, mask=True)
            await send_json(writer, {"protocol": 1, "type": "input",
                                     "match_id": hello["match_id"],
                                     "skill": 1, "move": "east"}, mask=True)
            deadline = asyncio.get_running_loop().time() + 3.0
            while len(errors) < 3:
                msg = await asyncio.wait_for(recv_json(reader, writer,
                                                       mask_replies=True), 3.0)
                if msg.get("type") == "error":
                    errors.append(msg)
                if msg.get("type") == "end" or \
                        asyncio.get_running_loop().time() > deadline:
                    break
            writer.close()
        finally:
            await server.stop()
        return errors

    errors = run(scenario())
    assert len(errors) == 3
    assert all(e["reason"] == "malformed message" for e in errors)


def test_disconnect_aborts_and_logs(tmp_path):
    async def scenario():
        server = await start_server(tmp_path, env=short_env(2000))
        try:
            await scripted_duel_client("127.0.0.1", server.port, max_ticks=10)
            for _ in range(100):
                if server.matches:
                    break
                await asyncio.sleep(0.02)
        finally:
            await server.stop()
        return server

    server = run(scenario())
    assert len(server.matches) == 1
    record = server.matches[0]
    assert record.aborted
    assert record.outcome == "aborted"
    log = json.loads(Path(record.log_path).read_text())
    assert log["aborted"] is True
    assert record.episode_path is None


def test_two_clients_two_matches(tmp_path):
    async def scenario():
        server = await start_server(tmp_path)
        try:
            a, b = await asyncio.gather(
                scripted_duel_client("127.0.0.1", server.port),
                scripted_duel_client("127.0.0.1", server.port))
        finally:
            await server.stop()
        return server, a, b

    server, a, b = run(scenario())
    assert len(server.matches) == 2
    assert {m.match_id for m in server.matches} == \
        {a["hello"]["match_id"], b["hello"]["match_id"]}


def test_tick_rate_at_ten_hertz(tmp_path):
    async def scenario():
        server = await start_server(tmp_path, record_dir=None, tick_hz=10.0,
                                    env=short_env(2000))
        try:
            return await scripted_duel_client("127.0.0.1", server.port,
                                              max_ticks=20)
        finally:
            await server.stop()

    summary = run(scenario())
    intervals = summary["intervals"]
    assert len(intervals) >= 15
    mean = sum(intervals) / len(intervals)
    assert 1 / 11 <= mean <= 1 / 9
