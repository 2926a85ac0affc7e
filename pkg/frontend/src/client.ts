/**
 * Socket client and console orchestration.
 *
 * The WebSocket implementation is injected so the same class runs in a
 * browser (native WebSocket) and under node tests (the ws package).
 * Incoming frames go through a FIFO queue drained on a microtask: one
 * logical render loop, no reentrancy, state changes applied in exactly
 * arrival order.
 */

import {
  abortFrame,
  helloFrame,
  inputFrame,
  parseServerFrame,
  resolutionFrame,
  switchFrame,
  type ResolutionKind,
} from "./protocol.js";
import {
  applyControl,
  applyEvent,
  dismissApproval,
  initialState,
  type ConsoleState,
} from "./state.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ConsoleClientOptions {
  url: string;
  wsFactory(url: string): WebSocketLike;
  onChange(state: ConsoleState): void;
  /** Initial session id requested in the first hello. */
  sessionId?: string;
  retryDelayMs?: number;
}

export class ConsoleClient {
  readonly state: ConsoleState = initialState();

  private ws: WebSocketLike | null = null;
  private queue: string[] = [];
  private drainScheduled = false;
  private stopped = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(private opts: ConsoleClientOptions) {}

  connect(): void {
    this.stopped = false;
    this.state.connection = this.state.token ? "retrying" : "connecting";
    this.emit();
    const ws = this.opts.wsFactory(this.opts.url);
    this.ws = ws;
    ws.onopen = () => {
      // a stored token reattaches to the same instance after a drop
      ws.send(
        helloFrame({
          token: this.state.token || undefined,
          sessionId: this.state.token ? undefined : this.opts.sessionId,
        }),
      );
    };
    ws.onmessage = (ev) => {
      const raw = typeof ev.data === "string" ? ev.data : String(ev.data);
      this.queue.push(raw);
      this.scheduleDrain();
    };
    ws.onerror = () => {
      /* onclose follows; retry happens there */
    };
    ws.onclose = () => {
      if (this.stopped) return;
      this.state.connection = "retrying";
      this.emit();
      const delay = this.opts.retryDelayMs ?? 1000;
      this.retryTimer = setTimeout(() => this.connect(), delay);
    };
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer) clearTimeout(this.retryTimer);
    this.state.connection = "closed";
    this.ws?.close();
    this.emit();
  }

  private scheduleDrain(): void {
    if (this.drainScheduled) return;
    this.drainScheduled = true;
    queueMicrotask(() => {
      this.drainScheduled = false;
      while (this.queue.length > 0) {
        const raw = this.queue.shift()!;
        let parsed;
        try {
          parsed = parseServerFrame(raw);
        } catch {
          continue; // not ours to crash on; the engine validates its side
        }
        if (parsed.kind === "control") applyControl(this.state, parsed.frame);
        else applyEvent(this.state, parsed.event);
      }
      this.emit();
    });
  }

  private emit(): void {
    this.opts.onChange(this.state);
  }

  sendQuery(text: string): void {
    this.ws?.send(inputFrame(this.state.token, text));
  }

  resolve(requestId: string, kind: ResolutionKind, feedback = ""): void {
    this.ws?.send(resolutionFrame(this.state.token, requestId, kind, feedback));
    dismissApproval(this.state, requestId);
    this.emit();
  }

  abort(): void {
    this.ws?.send(abortFrame(this.state.token));
  }

  switchSession(sessionId: string): void {
    this.ws?.send(switchFrame(this.state.token, sessionId));
  }
}
