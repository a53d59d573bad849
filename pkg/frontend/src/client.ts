/**
 * WebSocket session against the duel server.
 *
 * One socket handler feeds the session state; an input message goes out
 * after every tick frame, carrying whatever the keyboard holds at that
 * moment (under one tick of input-to-wire latency on loopback). Frames
 * are applied latest-wins; rendering happens elsewhere at display rate.
 */

import { InputTracker } from "./input.js";
import {
  ProtocolMismatchError,
  inputMessage,
  parseFrame,
} from "./protocol.js";
import { SessionState } from "./state.js";

export interface ClientCallbacks {
  onUpdate(): void;
  onEnd(outcome: string): void;
  onDisconnect(clean: boolean): void;
  onIncompatible(message: string): void;
}

export class DuelClient {
  readonly state = new SessionState();
  readonly input = new InputTracker();
  private socket: WebSocket | null = null;
  private ended = false;

  constructor(private url: string, private callbacks: ClientCallbacks) {}

  connect(): void {
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.onmessage = (ev) => this.handleMessage(String(ev.data));
    socket.onclose = () => {
      if (!this.ended) this.callbacks.onDisconnect(false);
    };
    socket.onerror = () => {
      if (!this.ended) this.callbacks.onDisconnect(false);
    };
  }

  close(): void {
    this.ended = true;
    this.socket?.close();
  }

  /** The full received frame log, for the download link at match end. */
  capturedLog(): string {
    return JSON.stringify(this.state.captured, null, 1);
  }

  private handleMessage(data: string): void {
    let frame;
    try {
      frame = parseFrame(data);
    } catch (err) {
      if (err instanceof ProtocolMismatchError) {
        this.callbacks.onIncompatible(err.message);
        this.close();
        return;
      }
      // one unreadable frame is not fatal; the server keeps ticking
      return;
    }
    this.state.apply(frame, performance.now());
    if (frame.type === "hello") {
      this.input.bindSkills(frame.skills);
    } else if (frame.type === "tick") {
      this.sendInput();
    } else if (frame.type === "end") {
      this.ended = true;
      this.callbacks.onEnd(frame.outcome);
    }
    this.callbacks.onUpdate();
  }

  private sendInput(): void {
    if (this.socket === null || this.socket.readyState !== WebSocket.OPEN) {
      return;
    }
    const { skill, move } = this.input.takeInput();
    this.socket.send(JSON.stringify(inputMessage(
      this.state.matchId, this.state.nextInputTick, skill, move)));
  }
}
