import { describe, expect, it } from "vitest";

import type { EngineEvent, PermissionRequest } from "../src/protocol.js";
import { parseServerFrame } from "../src/protocol.js";
import {
  applyControl,
  applyEvent,
  dismissApproval,
  initialState,
} from "../src/state.js";

const base = { v: 1 as const, session_id: "s1", agent_id: "main" };

function request(id: string): PermissionRequest {
  return {
    ...base,
    type: "permission_request",
    request_id: id,
    layer: "L1",
    summary: "edit file: f.txt",
    risk_note: "",
  };
}

describe("control frames", () => {
  it("token frame connects and stores identity", () => {
    const state = initialState();
    applyControl(state, { v: 1, type: "token", token: "t".repeat(32), session_id: "s1" });
    expect(state.connection).toBe("connected");
    expect(state.token).toHaveLength(32);
    expect(state.sessionId).toBe("s1");
    expect(state.sessions).toEqual(["s1"]);
  });

  it("input acks drive the queued badge", () => {
    const state = initialState();
    applyControl(state, { v: 1, type: "ack", op: "input", result: "started" });
    expect(state.queued).toBe(false);
    expect(state.turnRunning).toBe(true);
    applyControl(state, { v: 1, type: "ack", op: "input", result: "enqueued" });
    expect(state.queued).toBe(true);
  });

  it("control errors land in the transcript", () => {
    const state = initialState();
    applyControl(state, { v: 1, type: "error", message: "missing or wrong token" });
    expect(state.transcript).toHaveLength(1);
    expect(state.transcript[0].tone).toBe("error");
  });
});

describe("events", () => {
  it("transcript order equals event arrival order", () => {
    const state = initialState();
    const events: EngineEvent[] = [
      { ...base, type: "thinking_chunk", thinking: "hmm" },
      {
        ...base, type: "tool_call_started", call_id: "call-1",
        tool_name: "glob", args: { pattern: "*" },
      },
      {
        ...base, type: "tool_result", call_id: "call-1", tool_name: "glob",
        content: "f.txt", is_error: false, is_user_refusal: false,
      },
      { ...base, type: "text_chunk", text: "found it" },
      { ...base, type: "session_complete", status: "completed", reason: "" },
    ];
    for (const event of events) applyEvent(state, event);
    expect(state.transcript.map((t) => t.kind)).toEqual(events.map((e) => e.type));
  });

  it("an approval card exists iff its request is unresolved", () => {
    const state = initialState();
    applyEvent(state, request("req-1"));
    applyEvent(state, request("req-2"));
    expect(state.approvals.map((a) => a.request_id)).toEqual(["req-1", "req-2"]);
    dismissApproval(state, "req-1");
    expect(state.approvals.map((a) => a.request_id)).toEqual(["req-2"]);
    // the turn ending resolves everything left, one way or the other
    applyEvent(state, { ...base, type: "session_complete", status: "aborted", reason: "" });
    expect(state.approvals).toEqual([]);
    expect(state.turnRunning).toBe(false);
  });

  it("refusal results are toned as refusals", () => {
    const state = initialState();
    applyEvent(state, {
      ...base, type: "tool_result", call_id: "call-1", tool_name: "edit_file",
      content: "User rejected the operation.", is_error: true, is_user_refusal: true,
    });
    expect(state.transcript[0].tone).toBe("refusal");
  });

  it("background notifications upsert by task id", () => {
    const state = initialState();
    applyEvent(state, {
      ...base, type: "background_notification", task_id: "task-1",
      status: "completed", exit_code: 0, message: "[task-1 done]",
    });
    applyEvent(state, {
      ...base, type: "background_notification", task_id: "task-1",
      status: "completed", exit_code: 0, message: "[task-1 done again]",
    });
    expect(state.background).toHaveLength(1);
    expect(state.background[0].message).toBe("[task-1 done again]");
  });

  it("todo updates replace board state and remember the kind", () => {
    const state = initialState();
    applyEvent(state, {
      ...base, type: "todo_update", update_kind: "replace",
      todos: [{ id: "1", content: "a", state: "active" }],
    });
    expect(state.todos).toHaveLength(1);
    expect(state.lastTodoKind).toBe("replace");
  });
});

describe("frame classification", () => {
  it("separates control errors from engine error events", () => {
    const control = parseServerFrame('{"v":1,"type":"error","message":"bad"}');
    expect(control.kind).toBe("control");
    const event = parseServerFrame(
      '{"v":1,"type":"error","message":"boom","code":"internal","session_id":"s1","agent_id":"main"}',
    );
    expect(event.kind).toBe("event");
  });

  it("routes acks and tokens as control", () => {
    expect(parseServerFrame('{"v":1,"type":"ack","op":"input","result":"started"}').kind)
      .toBe("control");
    expect(
      parseServerFrame('{"v":1,"type":"token","token":"x","session_id":"s1"}').kind,
    ).toBe("control");
    expect(parseServerFrame('{"v":1,"type":"text_chunk","session_id":"s1","agent_id":"main","text":"hi"}').kind)
      .toBe("event");
  });
});
