/**
 * Wire protocol spoken by the duel server.
 *
 * Every frame in both directions carries `protocol: 1`. The server sends
 * one hello, then one tick frame per simulation tick, with warning/error
 * frames interleaved as needed and a single end frame on completion. The
 * client sends input messages; the latest input before a tick is applied
 * at that tick.
 */

export const PROTOCOL = 1;

export interface CombatantFrame {
  position: [number, number];
  facing: [number, number];
  hp: number;
  sp: number;
  status: string; // "normal" | "stunned" | "knocked_down" | "resistant"
  status_ticks: number;
  cooldowns: number[];
}

export interface SkillInfo {
  id: number;
  name: string;
  function: string;
  cooldown: number;
  sp_cost: number;
  damage: number;
  range: number;
}

export interface ArenaInfo {
  radius: number;
  hp_max: number;
  sp_max: number;
  max_ticks: number;
  move_speed: number;
}

export interface HelloFrame {
  protocol: number;
  type: "hello";
  match_id: string;
  tick_hz: number;
  side: string; // the human plays this side; the server says "opponent"
  n_moves: number;
  arena: ArenaInfo;
  skills: SkillInfo[];
}

export interface TickEvent {
  kind: string; // "cast" | "hit" | "status" | "end"
  side?: string;
  skill?: number;
  amount?: number;
  status?: string;
  ticks?: number;
  outcome?: string;
}

export interface TickFrame {
  protocol: number;
  type: "tick";
  tick: number;
  agent: CombatantFrame;
  opponent: CombatantFrame;
  availability: boolean[]; // the human side's skill mask, authoritative
  cooldowns: number[];
  events: TickEvent[];
  outcome: string; // "ongoing" until the match ends
}

export interface WarningFrame {
  protocol: number;
  type: "warning";
  reason: string;
  skill: number;
  tick: number;
}

export interface ErrorFrame {
  protocol: number;
  type: "error";
  reason: string;
}

export interface EndFrame {
  protocol: number;
  type: "end";
  outcome: string;
  ticks: number;
  record: string;
}

export type ServerFrame =
  | HelloFrame
  | TickFrame
  | WarningFrame
  | ErrorFrame
  | EndFrame;

export interface InputMessage {
  protocol: number;
  type: "input";
  match_id: string;
  tick: number;
  skill: number;
  move: number;
}

/** Move encoding mirrored from the server: direction * 2 + targeting. */
export const N_TARGETINGS = 2;
export const FACE_OPPONENT = 0;
export const FACE_MOVEMENT = 1;
export const STAND = 8; // direction index meaning "do not move"
export const NO_MOVE = STAND * N_TARGETINGS + FACE_OPPONENT;

export function moveIndex(direction: number, targeting: number): number {
  return direction * N_TARGETINGS + targeting;
}

export class ProtocolMismatchError extends Error {
  constructor(got: unknown) {
    super(`incompatible server: speaks protocol ${got}, this client needs ${PROTOCOL}`);
    this.name = "ProtocolMismatchError";
  }
}

export class BadFrameError extends Error {
  constructor(detail: string) {
    super(`unreadable server frame: ${detail}`);
    this.name = "BadFrameError";
  }
}

const FRAME_TYPES = new Set(["hello", "tick", "warning", "error", "end"]);

/** Parse one server message, rejecting version mismatches loudly. */
export function parseFrame(data: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(data);
  } catch {
    throw new BadFrameError("not JSON");
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new BadFrameError("not an object");
  }
  const frame = raw as Record<string, unknown>;
  if (frame.protocol !== PROTOCOL) {
    throw new ProtocolMismatchError(frame.protocol);
  }
  if (typeof frame.type !== "string" || !FRAME_TYPES.has(frame.type)) {
    throw new BadFrameError(`unknown frame type ${JSON.stringify(frame.type)}`);
  }
  return frame as unknown as ServerFrame;
}

export function inputMessage(
  matchId: string, tick: number, skill: number, move: number,
): InputMessage {
  return { protocol: PROTOCOL, type: "input", match_id: matchId, tick, skill, move };
}
