/**
 * Client session state: the latest server frames and the view model
 * derived from them.
 *
 * The client never simulates rules. Positions are interpolated between
 * the two most recent tick frames for smooth rendering, but hit points,
 * availability, cooldowns, statuses, and the outcome are always copied
 * verbatim from the last server frame.
 */

import {
  EndFrame,
  HelloFrame,
  ServerFrame,
  TickFrame,
  WarningFrame,
} from "./protocol.js";

export interface FighterView {
  x: number;
  y: number;
  facing: [number, number];
  hp: number;
  sp: number;
  status: string;
}

export interface SkillButton {
  id: number;
  name: string;
  hotkey: string;
  available: boolean;
  cooldown: number;      // remaining ticks, display only
  cooldownFrac: number;  // remaining / total, for the sweep overlay
  flash: boolean;        // brief dimmed flash after a server warning
}

export interface View {
  tick: number;
  clockSeconds: number;
  agent: FighterView;
  you: FighterView;
  skills: SkillButton[];
  feed: string[];
  banner: string | null;
  arenaRadius: number;
  hpMax: number;
  spMax: number;
}

const FEED_LIMIT = 6;
const FLASH_MS = 300;

function describeEvent(ev: { kind: string; side?: string; amount?: number;
                             status?: string; skill?: number }): string | null {
  const who = ev.side === "opponent" ? "you" : "agent";
  if (ev.kind === "hit") {
    return `${who} took ${ev.amount}`;
  }
  if (ev.kind === "status") {
    return `${who}: ${String(ev.status).replace("_", " ")}`;
  }
  return null; // casts are visible on the arena, end becomes the banner
}

function bannerText(outcome: string): string {
  // the human plays the opponent side
  if (outcome === "opponent_win") return "You win";
  if (outcome === "agent_win") return "Agent wins";
  return "Draw";
}

export class SessionState {
  hello: HelloFrame | null = null;
  last: TickFrame | null = null;
  prev: TickFrame | null = null;
  end: EndFrame | null = null;
  feed: string[] = [];
  captured: ServerFrame[] = [];
  private lastArrival = 0;
  private flashes = new Map<number, number>(); // skill id -> flash deadline ms

  /** Fold one server frame into the session. `now` is a millisecond clock. */
  apply(frame: ServerFrame, now: number): void {
    this.captured.push(frame);
    switch (frame.type) {
      case "hello":
        this.hello = frame;
        break;
      case "tick":
        this.prev = this.last;
        this.last = frame;
        this.lastArrival = now;
        for (const ev of frame.events) {
          const line = describeEvent(ev);
          if (line !== null) {
            this.feed.push(`t${frame.tick}  ${line}`);
          }
        }
        if (this.feed.length > FEED_LIMIT) {
          this.feed.splice(0, this.feed.length - FEED_LIMIT);
        }
        break;
      case "warning":
        this.flashes.set((frame as WarningFrame).skill, now + FLASH_MS);
        break;
      case "end":
        this.end = frame;
        break;
      case "error":
        this.feed.push(`server rejected input: ${frame.reason}`);
        break;
    }
  }

  get matchId(): string {
    return this.hello ? this.hello.match_id : "";
  }

  get nextInputTick(): number {
    return this.last ? this.last.tick + 1 : 0;
  }

  /** Outcome as declared by the server, null while the match runs. */
  get outcome(): string | null {
    if (this.end) return this.end.outcome;
    if (this.last && this.last.outcome !== "ongoing") return this.last.outcome;
    return null;
  }

  /** Build the render view for time `now`, interpolating positions. */
  view(now: number): View | null {
    if (this.hello === null || this.last === null) return null;
    const hello = this.hello;
    const last = this.last;
    const tickMs = 1000 / hello.tick_hz;
    const alpha = this.prev
      ? Math.max(0, Math.min(1, (now - this.lastArrival) / tickMs))
      : 1;

    const fighter = (key: "agent" | "opponent"): FighterView => {
      const cur = last[key];
      const old = this.prev ? this.prev[key] : cur;
      return {
        x: old.position[0] + (cur.position[0] - old.position[0]) * alpha,
        y: old.position[1] + (cur.position[1] - old.position[1]) * alpha,
        facing: cur.facing,
        hp: cur.hp,
        sp: cur.sp,
        status: cur.status,
      };
    };

    const skills: SkillButton[] = hello.skills
      .filter((s) => s.id !== 0)
      .map((s) => ({
        id: s.id,
        name: s.name,
        hotkey: "",
        available: last.availability[s.id] === true,
        cooldown: last.cooldowns[s.id],
        cooldownFrac: s.cooldown > 0 ? last.cooldowns[s.id] / s.cooldown : 0,
        flash: (this.flashes.get(s.id) ?? 0) > now,
      }));

    return {
      tick: last.tick,
      clockSeconds: last.tick / hello.tick_hz,
      agent: fighter("agent"),
      you: fighter("opponent"),
      skills,
      feed: [...this.feed],
      banner: this.outcome === null ? null : bannerText(this.outcome),
      arenaRadius: hello.arena.radius,
      hpMax: hello.arena.hp_max,
      spMax: hello.arena.sp_max,
    };
  }
}
