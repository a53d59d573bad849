/**
 * Canvas rendering of the view model.
 *
 * Drawing goes through the narrow `Draw2D` interface (the used subset of
 * CanvasRenderingContext2D) so tests can record operations headlessly.
 * Top-down view: world y points up, screen y points down.
 */

import { View } from "./state.js";

export interface Draw2D {
  fillStyle: string;
  strokeStyle: string;
  globalAlpha: number;
  lineWidth: number;
  font: string;
  textAlign: string;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export const AGENT_COLOR = "#e4574c";
export const YOU_COLOR = "#4c9de4";
const BAR_H = 14;
const SKILL_W = 52;
const SKILL_H = 52;

interface Mapping {
  scale: number;
  cx: number;
  cy: number;
}

function mapping(view: View, w: number, h: number): Mapping {
  const scale = (Math.min(w, h) * 0.42) / view.arenaRadius;
  return { scale, cx: w / 2, cy: h / 2 };
}

function toScreen(m: Mapping, x: number, y: number): [number, number] {
  return [m.cx + x * m.scale, m.cy - y * m.scale];
}

function drawFighter(ctx: Draw2D, m: Mapping, f: { x: number; y: number;
    facing: [number, number]; status: string }, color: string): void {
  const [sx, sy] = toScreen(m, f.x, f.y);
  const r = Math.max(6, m.scale * 0.35);
  ctx.globalAlpha = f.status === "normal" || f.status === "resistant" ? 1 : 0.55;
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(sx, sy, r, 0, Math.PI * 2);
  ctx.fill();
  if (f.status === "resistant") {
    ctx.strokeStyle = "#ffd54a";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(sx, sy, r + 3, 0, Math.PI * 2);
    ctx.stroke();
  }
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(sx, sy);
  ctx.lineTo(sx + f.facing[0] * r * 1.8, sy - f.facing[1] * r * 1.8);
  ctx.stroke();
  ctx.globalAlpha = 1;
}

function drawBars(ctx: Draw2D, x: number, y: number, w: number,
                  hp: number, hpMax: number, sp: number, spMax: number,
                  label: string): void {
  ctx.fillStyle = "#222";
  ctx.fillRect(x, y, w, BAR_H);
  ctx.fillStyle = "#3fb950";
  ctx.fillRect(x, y, (w * hp) / hpMax, BAR_H);
  ctx.fillStyle = "#222";
  ctx.fillRect(x, y + BAR_H + 2, w, BAR_H / 2);
  ctx.fillStyle = "#3a7bd5";
  ctx.fillRect(x, y + BAR_H + 2, (w * sp) / spMax, BAR_H / 2);
  ctx.fillStyle = "#ddd";
  ctx.font = "12px sans-serif";
  ctx.textAlign = "left";
  ctx.fillText(label, x, y - 4);
}

function drawSkillBar(ctx: Draw2D, view: View, w: number, h: number): void {
  const n = view.skills.length;
  const total = n * (SKILL_W + 6) - 6;
  let x = (w - total) / 2;
  const y = h - SKILL_H - 10;
  for (const s of view.skills) {
    // dimming follows the server availability mask, nothing else
    const dim = !s.available || s.flash;
    ctx.globalAlpha = dim ? 0.3 : 1;
    ctx.fillStyle = "#31343b";
    ctx.fillRect(x, y, SKILL_W, SKILL_H);
    if (s.cooldownFrac > 0) {
      ctx.fillStyle = "#14161a";
      ctx.fillRect(x, y, SKILL_W, SKILL_H * Math.min(1, s.cooldownFrac));
    }
    ctx.fillStyle = "#eee";
    ctx.font = "11px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(s.name.slice(0, 7), x + SKILL_W / 2, y + SKILL_H - 18);
    ctx.fillText(s.hotkey, x + SKILL_W / 2, y + SKILL_H - 5);
    if (s.cooldown > 0) {
      ctx.fillText(String(s.cooldown), x + SKILL_W / 2, y + 14);
    }
    ctx.globalAlpha = 1;
    ctx.strokeStyle = s.available ? "#5a5f6a" : "#2a2c31";
    ctx.lineWidth = 1;
    ctx.strokeRect(x, y, SKILL_W, SKILL_H);
    x += SKILL_W + 6;
  }
}

export function drawScene(ctx: Draw2D, view: View, w: number, h: number): void {
  ctx.globalAlpha = 1;
  ctx.fillStyle = "#0e0f12";
  ctx.fillRect(0, 0, w, h);

  const m = mapping(view, w, h);
  ctx.strokeStyle = "#444";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(m.cx, m.cy, view.arenaRadius * m.scale, 0, Math.PI * 2);
  ctx.stroke();

  drawFighter(ctx, m, view.agent, AGENT_COLOR);
  drawFighter(ctx, m, view.you, YOU_COLOR);

  drawBars(ctx, 16, 24, w * 0.3, view.agent.hp, view.hpMax,
           view.agent.sp, view.spMax, "agent");
  drawBars(ctx, w - 16 - w * 0.3, 24, w * 0.3, view.you.hp, view.hpMax,
           view.you.sp, view.spMax, "you");

  ctx.fillStyle = "#aaa";
  ctx.font = "13px sans-serif";
  ctx.textAlign = "center";
  const sec = view.clockSeconds;
  const mm = String(Math.floor(sec / 60));
  const ss = String(Math.floor(sec % 60)).padStart(2, "0");
  ctx.fillText(`${mm}:${ss}`, w / 2, 30);

  ctx.textAlign = "left";
  ctx.fillStyle = "#8b949e";
  ctx.font = "12px sans-serif";
  view.feed.forEach((line, i) => {
    ctx.fillText(line, 16, h - 120 + i * 15);
  });

  drawSkillBar(ctx, view, w, h);

  if (view.banner !== null) {
    ctx.globalAlpha = 0.75;
    ctx.fillStyle = "#000";
    ctx.fillRect(0, h / 2 - 40, w, 80);
    ctx.globalAlpha = 1;
    ctx.fillStyle = "#fff";
    ctx.font = "32px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(view.banner, w / 2, h / 2 + 10);
  }
}
