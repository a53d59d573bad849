import { describe, expect, it } from "vitest";

import {
  BadFrameError,
  FACE_MOVEMENT,
  FACE_OPPONENT,
  NO_MOVE,
  PROTOCOL,
  ProtocolMismatchError,
  inputMessage,
  moveIndex,
  parseFrame,
} from "../src/protocol.js";

describe("parseFrame", () => {
  it("accepts a well-formed tick frame", () => {
    const frame = parseFrame(JSON.stringify({
      protocol: 1, type: "tick", tick: 4,
      agent: {}, opponent: {}, availability: [true],
      cooldowns: [0], events: [], outcome: "ongoing",
    }));
    expect(frame.type).toBe("tick");
  });

  it("rejects a version mismatch with both versions in the message", () => {
    const raw = JSON.stringify({ protocol: 99, type: "hello" });
    expect(() => parseFrame(raw)).toThrow(ProtocolMismatchError);
    expect(() => parseFrame(raw)).toThrow(/99/);
    expect(() => parseFrame(raw)).toThrow(new RegExp(String(PROTOCOL)));
  });

  it("rejects non-JSON and unknown frame types", () => {
    expect(() => parseFrame("not json")).toThrow(BadFrameError);
    expect(() => parseFrame(JSON.stringify({ protocol: 1, type: "jump" })))
      .toThrow(BadFrameError);
    expect(() => parseFrame(JSON.stringify(["protocol", 1])))
      .toThrow(BadFrameError);
  });
});

describe("input messages", () => {
  it("carry the protocol version and all fields", () => {
    const msg = inputMessage("match-0001", 7, 2, 5);
    expect(msg).toEqual({
      protocol: PROTOCOL, type: "input", match_id: "match-0001",
      tick: 7, skill: 2, move: 5,
    });
  });
});

describe("move encoding", () => {
  it("matches the server's direction * 2 + targeting layout", () => {
    expect(moveIndex(0, FACE_OPPONENT)).toBe(0);
    expect(moveIndex(0, FACE_MOVEMENT)).toBe(1);
    expect(moveIndex(3, FACE_OPPONENT)).toBe(6);
    expect(NO_MOVE).toBe(16);
  });
});
