/**
 * Wire protocol types for ws://host:port/v1/session.
 *
 * One JSON object per frame. Server frames carry v: 1 and split into
 * control frames (token, ack, error-without-session) and engine events.
 * This file is the console's only coupling to the engine; nothing here is
 * invented beyond the documented schema.
 */

export type ResolutionKind =
  | "transient_allow"
  | "persistent_allow"
  | "reject"
  | "guided_correction";

export const RESOLUTION_KINDS: ResolutionKind[] = [
  "transient_allow",
  "persistent_allow",
  "reject",
  "guided_correction",
];

// ---------------------------------------------------------------- events

interface EventBase {
  v: 1;
  session_id: string;
  agent_id: string;
}

export interface TextChunk extends EventBase {
  type: "text_chunk";
  text: string;
}

export interface ThinkingChunk extends EventBase {
  type: "thinking_chunk";
  thinking: string;
}

export interface ToolCallStarted extends EventBase {
  type: "tool_call_started";
  call_id: string;
  tool_name: string;
  args: Record<string, unknown>;
}

export interface ToolResult extends EventBase {
  type: "tool_result";
  call_id: string;
  tool_name: string;
  content: string;
  is_error: boolean;
  is_user_refusal: boolean;
}

export interface TokenStats extends EventBase {
  type: "token_stats";
  context_tokens: number;
  limit: number;
  phase: string;
}

export interface PermissionRequest extends EventBase {
  type: "permission_request";
  request_id: string;
  layer: string;
  summary: string;
  risk_note: string;
}

export interface TodoItem {
  id: string;
  content: string;
  state: "pending" | "active" | "completed";
}

export interface TodoUpdate extends EventBase {
  type: "todo_update";
  todos: TodoItem[];
  update_kind: "replace" | "subset";
}

export interface BackgroundNotification extends EventBase {
  type: "background_notification";
  task_id: string;
  status: string;
  exit_code: number | null;
  message: string;
}

export interface SessionComplete extends EventBase {
  type: "session_complete";
  status: "completed" | "aborted";
  reason: string;
}

export interface ErrorEvent extends EventBase {
  type: "error";
  message: string;
  code: string;
}

export type EngineEvent =
  | TextChunk
  | ThinkingChunk
  | ToolCallStarted
  | ToolResult
  | TokenStats
  | PermissionRequest
  | TodoUpdate
  | BackgroundNotification
  | SessionComplete
  | ErrorEvent;

// ---------------------------------------------------------------- control

export interface TokenFrame {
  v: 1;
  type: "token";
  token: string;
  session_id: string;
}

export interface AckFrame {
  v: 1;
  type: "ack";
  op: string;
  result: string;
}

export interface ErrorFrame {
  v: 1;
  type: "error";
  message: string;
}

export type ControlFrame = TokenFrame | AckFrame | ErrorFrame;

export type ServerFrame =
  | { kind: "control"; frame: ControlFrame }
  | { kind: "event"; event: EngineEvent };

const CONTROL_TYPES = new Set(["token", "ack"]);

/** Classify a raw server frame. An "error" without a session_id is
 * control-plane; with one it is an engine error event. */
export function parseServerFrame(raw: string): ServerFrame {
  const frame = JSON.parse(raw);
  if (typeof frame !== "object" || frame === null || !("type" in frame)) {
    throw new Error(`not a frame: ${raw}`);
  }
  if (
    CONTROL_TYPES.has(frame.type) ||
    (frame.type === "error" && !("session_id" in frame))
  ) {
    return { kind: "control", frame: frame as ControlFrame };
  }
  return { kind: "event", event: frame as EngineEvent };
}

// ------------------------------------------------------------ client frames

export function helloFrame(opts: { token?: string; sessionId?: string }): string {
  const frame: Record<string, unknown> = { type: "hello" };
  if (opts.token) frame.token = opts.token;
  if (opts.sessionId) frame.session_id = opts.sessionId;
  return JSON.stringify(frame);
}

export function inputFrame(token: string, text: string): string {
  return JSON.stringify({ type: "input", token, text });
}

export function resolutionFrame(
  token: string,
  requestId: string,
  kind: ResolutionKind,
  feedback = "",
): string {
  return JSON.stringify({
    type: "resolution",
    token,
    request_id: requestId,
    kind,
    feedback,
  });
}

export function abortFrame(token: string): string {
  return JSON.stringify({ type: "abort", token });
}

export function switchFrame(token: string, sessionId: string): string {
  return JSON.stringify({ type: "switch_session", token, session_id: sessionId });
}
