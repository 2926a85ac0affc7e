/**
 * Console state and its reducer. All state derives from received frames;
 * the UI never invents anything the server did not say. Transcript order
 * is exactly event arrival order.
 */

import type {
  ControlFrame,
  EngineEvent,
  PermissionRequest,
  TodoItem,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "retrying" | "closed";

export interface TranscriptItem {
  /** Discriminates the row style; mirrors the originating event type. */
  kind: string;
  text: string;
  /** Set for rows that should render as errors or refusals. */
  tone?: "error" | "refusal" | "status";
}

export interface BackgroundEntry {
  taskId: string;
  status: string;
  exitCode: number | null;
  message: string;
}

export interface ConsoleState {
  connection: ConnectionStatus;
  token: string;
  sessionId: string;
  sessions: string[];
  transcript: TranscriptItem[];
  approvals: PermissionRequest[];
  todos: TodoItem[];
  lastTodoKind: "replace" | "subset";
  background: BackgroundEntry[];
  /** True while the engine acked the last input with "enqueued". */
  queued: boolean;
  turnRunning: boolean;
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    token: "",
    sessionId: "",
    sessions: [],
    transcript: [],
    approvals: [],
    todos: [],
    lastTodoKind: "replace",
    background: [],
    queued: false,
    turnRunning: false,
  };
}

function noteSession(state: ConsoleState, sessionId: string): void {
  if (sessionId && !state.sessions.includes(sessionId)) {
    state.sessions.push(sessionId);
  }
}

export function applyControl(state: ConsoleState, frame: ControlFrame): void {
  switch (frame.type) {
    case "token":
      state.connection = "connected";
      state.token = frame.token;
      state.sessionId = frame.session_id;
      noteSession(state, frame.session_id);
      break;
    case "ack":
      if (frame.op === "input") {
        state.queued = frame.result === "enqueued";
        if (frame.result === "started") state.turnRunning = true;
      }
      if (frame.op === "switch_session" && frame.result === "applied") {
        state.queued = false;
      }
      break;
    case "error":
      state.transcript.push({
        kind: "control_error",
        text: frame.message,
        tone: "error",
      });
      break;
  }
}

export function applyEvent(state: ConsoleState, event: EngineEvent): void {
  noteSession(state, event.session_id);
  switch (event.type) {
    case "text_chunk":
      state.transcript.push({ kind: event.type, text: event.text });
      break;
    case "thinking_chunk":
      state.transcript.push({ kind: event.type, text: event.thinking, tone: "status" });
      break;
    case "tool_call_started":
      state.turnRunning = true;
      state.transcript.push({
        kind: event.type,
        text: `${event.tool_name} ${JSON.stringify(event.args)}`,
        tone: "status",
      });
      break;
    case "tool_result":
      state.transcript.push({
        kind: event.type,
        text: event.content,
        tone: event.is_user_refusal ? "refusal" : event.is_error ? "error" : undefined,
      });
      break;
    case "token_stats":
      state.transcript.push({
        kind: event.type,
        text: `context ${event.context_tokens}/${event.limit} (${event.phase})`,
        tone: "status",
      });
      break;
    case "permission_request":
      // a card exists iff its request is unresolved; arrival opens it
      state.approvals.push(event);
      break;
    case "todo_update":
      state.todos = event.todos;
      state.lastTodoKind = event.update_kind;
      break;
    case "background_notification": {
      const entry: BackgroundEntry = {
        taskId: event.task_id,
        status: event.status,
        exitCode: event.exit_code,
        message: event.message,
      };
      const i = state.background.findIndex((b) => b.taskId === entry.taskId);
      if (i >= 0) state.background[i] = entry;
      else state.background.push(entry);
      state.transcript.push({ kind: event.type, text: event.message, tone: "status" });
      break;
    }
    case "session_complete":
      state.turnRunning = false;
      state.queued = false;
      // a completed or aborted turn cannot still be waiting on anyone
      state.approvals = [];
      state.transcript.push({
        kind: event.type,
        text: `turn ${event.status}${event.reason ? ` (${event.reason})` : ""}`,
        tone: "status",
      });
      break;
    case "error":
      state.transcript.push({ kind: event.type, text: event.message, tone: "error" });
      break;
  }
}

/** Drop an approval card once the human answered it. */
export function dismissApproval(state: ConsoleState, requestId: string): void {
  state.approvals = state.approvals.filter((a) => a.request_id !== requestId);
}
