/**
 * Keyboard state -> (skill, move) pairs.
 *
 * WASD and the arrow keys steer in 8 directions; holding Shift faces
 * the movement direction instead of tracking the agent. Skill hotkeys
 * are dealt out over the roster in id order: digits first, then a row
 * of letters. Skill presses are one-shot: each press is sent once, on
 * the next input message.
 */

import { FACE_MOVEMENT, FACE_OPPONENT, NO_MOVE, SkillInfo, moveIndex } from "./protocol.js";

export const HOTKEYS = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "0",
                        "q", "e", "r", "f", "z", "x", "c", "v"];

// (dx, dy) -> direction index; dy is +1 northwards, matching the arena
const DIRECTIONS: Record<string, number> = {
  "1,0": 0, "1,1": 1, "0,1": 2, "-1,1": 3,
  "-1,0": 4, "-1,-1": 5, "0,-1": 6, "1,-1": 7,
  "0,0": 8,
};

export function hotkeyMap(skills: SkillInfo[]): Map<string, number> {
  const map = new Map<string, number>();
  let i = 0;
  for (const s of skills) {
    if (s.id === 0) continue; // no-op is the absence of a press
    if (i >= HOTKEYS.length) break;
    map.set(HOTKEYS[i], s.id);
    i += 1;
  }
  return map;
}

export class InputTracker {
  private down = new Set<string>();
  private hotkeys = new Map<string, number>();
  private pendingSkill = 0;

  bindSkills(skills: SkillInfo[]): void {
    this.hotkeys = hotkeyMap(skills);
  }

  hotkeyFor(skillId: number): string {
    for (const [key, id] of this.hotkeys) {
      if (id === skillId) return key;
    }
    return "";
  }

  keyDown(key: string): void {
    const k = key.length === 1 ? key.toLowerCase() : key;
    const skill = this.hotkeys.get(k);
    if (skill !== undefined) {
      this.pendingSkill = skill;
      return;
    }
    this.down.add(k);
  }

  keyUp(key: string): void {
    this.down.delete(key.length === 1 ? key.toLowerCase() : key);
  }

  /** Drop all held state, e.g. when the window loses focus. */
  clear(): void {
    this.down.clear();
    this.pendingSkill = 0;
  }

  currentMove(): number {
    const has = (...keys: string[]) => keys.some((k) => this.down.has(k));
    const dx = (has("d", "ArrowRight") ? 1 : 0) - (has("a", "ArrowLeft") ? 1 : 0);
    const dy = (has("w", "ArrowUp") ? 1 : 0) - (has("s", "ArrowDown") ? 1 : 0);
    const dir = DIRECTIONS[`${dx},${dy}`];
    if (dir === 8) return NO_MOVE;
    const targeting = has("Shift") ? FACE_MOVEMENT : FACE_OPPONENT;
    return moveIndex(dir, targeting);
  }

  /** The (skill, move) to send now; consumes any pending skill press. */
  takeInput(): { skill: number; move: number } {
    const skill = this.pendingSkill;
    this.pendingSkill = 0;
    return { skill, move: this.currentMove() };
  }
}
