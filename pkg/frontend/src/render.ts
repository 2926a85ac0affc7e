/**
 * DOM renderer. One skeleton built up front, then incremental region
 * updates per state change.
 *
 * The todo board is keyed on item id: a subset update reuses the existing
 * <li> and, when the content string is unchanged, leaves the text node
 * alone entirely, so nothing the user is reading flickers. A replace
 * update rebuilds the list from scratch. Approval cards are likewise keyed
 * on request_id so an open suggestion box survives unrelated renders.
 */

import type { ResolutionKind, TodoItem } from "./protocol.js";
import type { ConsoleState } from "./state.js";

export interface RendererHandlers {
  onQuery(text: string): void;
  onResolve(requestId: string, kind: ResolutionKind, feedback: string): void;
  onSwitch(sessionId: string): void;
  onAbort(): void;
}

interface TodoNodes {
  item: HTMLLIElement;
  text: Text;
  content: string;
}

const APPROVAL_BUTTONS: Array<{ label: string; kind: ResolutionKind; cls: string }> = [
  { label: "Allow once", kind: "transient_allow", cls: "allow-once" },
  { label: "Always allow", kind: "persistent_allow", cls: "always-allow" },
  { label: "Deny", kind: "reject", cls: "deny" },
  { label: "Suggest change", kind: "guided_correction", cls: "suggest" },
];

export class Renderer {
  private doc: Document;
  private status!: HTMLElement;
  private sessionLabel!: HTMLElement;
  private queuedBadge!: HTMLElement;
  private transcriptList!: HTMLUListElement;
  private approvalsBox!: HTMLElement;
  private todoList!: HTMLUListElement;
  private backgroundList!: HTMLUListElement;
  private sessionList!: HTMLUListElement;

  private transcriptCursor = 0;
  private todoNodes = new Map<string, TodoNodes>();
  private renderedTodos: TodoItem[] | null = null;
  private approvalCards = new Map<string, HTMLElement>();

  constructor(
    private root: HTMLElement,
    private handlers: RendererHandlers,
  ) {
    this.doc = root.ownerDocument;
    this.buildSkeleton();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    cls?: string,
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    if (cls) node.className = cls;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private buildSkeleton(): void {
    const header = this.el("header");
    this.status = this.el("span", "status", "connecting");
    this.sessionLabel = this.el("span", "session-label", "");
    this.queuedBadge = this.el("span", "queued-badge", "queued");
    this.queuedBadge.hidden = true;
    const abort = this.el("button", "abort", "Abort");
    abort.addEventListener("click", () => this.handlers.onAbort());

    const switchForm = this.el("span", "switch-form");
    const switchInput = this.el("input", "switch-input");
    switchInput.placeholder = "session id";
    const switchBtn = this.el("button", "switch", "Switch");
    switchBtn.addEventListener("click", () => {
      if (switchInput.value) this.handlers.onSwitch(switchInput.value);
      switchInput.value = "";
    });
    switchForm.append(switchInput, switchBtn);
    header.append(this.status, this.sessionLabel, this.queuedBadge, switchForm, abort);

    const transcript = this.el("section", "transcript");
    this.transcriptList = this.el("ul");
    transcript.append(this.transcriptList);

    this.approvalsBox = this.el("section", "approvals");

    const todos = this.el("section", "todos");
    this.todoList = this.el("ul");
    todos.append(this.el("h2", undefined, "Todos"), this.todoList);

    const background = this.el("section", "background");
    this.backgroundList = this.el("ul");
    background.append(this.el("h2", undefined, "Background"), this.backgroundList);

    const sessions = this.el("section", "sessions");
    this.sessionList = this.el("ul");
    sessions.append(this.el("h2", undefined, "Sessions"), this.sessionList);

    const footer = this.el("footer");
    const queryInput = this.el("input", "query-input");
    queryInput.placeholder = "ask the agent";
    const send = this.el("button", "send", "Send");
    const submit = () => {
      if (!queryInput.value) return;
      this.handlers.onQuery(queryInput.value);
      queryInput.value = "";
    };
    send.addEventListener("click", submit);
    queryInput.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") submit();
    });
    footer.append(queryInput, send);

    this.root.append(header, transcript, this.approvalsBox, todos, background, sessions, footer);
  }

  render(state: ConsoleState): void {
    this.status.textContent = state.connection;
    this.status.className = `status ${state.connection}`;
    this.sessionLabel.textContent = state.sessionId;
    this.queuedBadge.hidden = !state.queued;
    this.renderTranscript(state);
    this.renderApprovals(state);
    // the todos array is swapped out only by a todo_update event, so a
    // reference check keeps unrelated renders from touching the board
    if (state.todos !== this.renderedTodos) {
      this.renderTodos(state.todos, state.lastTodoKind);
      this.renderedTodos = state.todos;
    }
    this.renderBackground(state);
    this.renderSessions(state);
  }

  // transcript rows are append-only; render only what is new
  private renderTranscript(state: ConsoleState): void {
    for (; this.transcriptCursor < state.transcript.length; this.transcriptCursor++) {
      const item = state.transcript[this.transcriptCursor];
      const row = this.el("li", `row ${item.kind}${item.tone ? ` ${item.tone}` : ""}`);
      row.textContent = item.text;
      this.transcriptList.append(row);
    }
  }

  private renderApprovals(state: ConsoleState): void {
    const open = new Set(state.approvals.map((a) => a.request_id));
    for (const [id, card] of this.approvalCards) {
      if (!open.has(id)) {
        card.remove();
        this.approvalCards.delete(id);
      }
    }
    for (const request of state.approvals) {
      if (this.approvalCards.has(request.request_id)) continue;
      const card = this.el("div", "approval-card");
      card.dataset.request = request.request_id;
      card.append(
        this.el("div", "approval-summary", `${request.layer}: ${request.summary}`),
      );
      if (request.risk_note) {
        card.append(this.el("div", "approval-risk", request.risk_note));
      }
      const feedback = this.el("textarea", "suggest-text");
      feedback.placeholder = "suggested change";
      const buttons = this.el("div", "approval-buttons");
      for (const spec of APPROVAL_BUTTONS) {
        const btn = this.el("button", spec.cls, spec.label);
        btn.addEventListener("click", () => {
          this.handlers.onResolve(request.request_id, spec.kind, feedback.value);
        });
        buttons.append(btn);
      }
      card.append(buttons, feedback);
      this.approvalsBox.append(card);
      this.approvalCards.set(request.request_id, card);
    }
  }

  private renderTodos(todos: TodoItem[], kind: "replace" | "subset"): void {
    const incoming = new Set(todos.map((t) => t.id));
    const reuse =
      kind === "subset" &&
      todos.every((t) => this.todoNodes.has(t.id)) &&
      incoming.size === this.todoNodes.size;

    if (!reuse) {
      this.todoList.textContent = "";
      this.todoNodes.clear();
      for (const todo of todos) {
        const item = this.el("li", `todo-item ${todo.state}`);
        item.dataset.id = todo.id;
        const text = this.doc.createTextNode(todo.content);
        item.append(text);
        this.todoList.append(item);
        this.todoNodes.set(todo.id, { item, text, content: todo.content });
      }
      return;
    }

    for (const todo of todos) {
      const nodes = this.todoNodes.get(todo.id)!;
      nodes.item.className = `todo-item ${todo.state}`;
      if (nodes.content !== todo.content) {
        // content changed: this one item re-renders, the others do not
        nodes.text.data = todo.content;
        nodes.content = todo.content;
      }
    }
  }

  private renderBackground(state: ConsoleState): void {
    this.backgroundList.textContent = "";
    for (const task of state.background) {
      const exit = task.exitCode === null ? "" : ` exit=${task.exitCode}`;
      const row = this.el("li", `bg-task ${task.status}`, `${task.taskId}: ${task.status}${exit}`);
      row.dataset.task = task.taskId;
      this.backgroundList.append(row);
    }
  }

  private renderSessions(state: ConsoleState): void {
    this.sessionList.textContent = "";
    for (const id of state.sessions) {
      const row = this.el("li", id === state.sessionId ? "session current" : "session", id);
      this.sessionList.append(row);
    }
  }

  /** Test hook: the live content text node for a todo id, if rendered. */
  todoTextNode(id: string): Text | undefined {
    return this.todoNodes.get(id)?.text;
  }
}
