/** DOM glue: connect form, canvas loop, keyboard wiring, end-of-match UI. */

import { DuelClient } from "./client.js";
import { Draw2D, drawScene } from "./render.js";

const canvas = document.getElementById("arena") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as unknown as Draw2D;
const statusLine = document.getElementById("status") as HTMLElement;
const connectBtn = document.getElementById("connect") as HTMLButtonElement;
const addrInput = document.getElementById("address") as HTMLInputElement;
const downloadLink = document.getElementById("download") as HTMLAnchorElement;

let client: DuelClient | null = null;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function offerDownload(c: DuelClient): void {
  const blob = new Blob([c.capturedLog()], { type: "application/json" });
  downloadLink.href = URL.createObjectURL(blob);
  downloadLink.download = `${c.state.matchId || "match"}-frames.json`;
  downloadLink.hidden = false;
}

function connect(): void {
  client?.close();
  downloadLink.hidden = true;
  const c = new DuelClient(addrInput.value, {
    onUpdate: () => {},
    onEnd: (outcome) => {
      setStatus(`match over: ${outcome.replace("_", " ")}`);
      offerDownload(c);
    },
    onDisconnect: () => {
      setStatus("disconnected — press Connect to rejoin");
      offerDownload(c);
    },
    onIncompatible: (message) => setStatus(message),
  });
  client = c;
  c.connect();
  setStatus("connected, waiting for match…");
  canvas.focus();
}

connectBtn.addEventListener("click", connect);

window.addEventListener("keydown", (ev) => {
  if (ev.target === addrInput) return;
  client?.input.keyDown(ev.key);
  if (["ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight", " "].includes(ev.key)) {
    ev.preventDefault();
  }
});
window.addEventListener("keyup", (ev) => client?.input.keyUp(ev.key));
window.addEventListener("blur", () => client?.input.clear());

function frame(): void {
  if (client !== null) {
    const view = client.state.view(performance.now());
    if (view !== null) {
      for (const s of view.skills) {
        s.hotkey = client.input.hotkeyFor(s.id);
      }
      drawScene(ctx, view, canvas.width, canvas.height);
    }
  }
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
