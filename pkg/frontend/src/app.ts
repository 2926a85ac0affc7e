/** Browser entry: wire the client to the renderer and go. */

import { ConsoleClient } from "./client.js";
import { Renderer } from "./render.js";

export function boot(root: HTMLElement, url?: string): ConsoleClient {
  const params = new URLSearchParams(root.ownerDocument.location?.search ?? "");
  const target =
    url ??
    params.get("url") ??
    `ws://${root.ownerDocument.location.host}/v1/session`;

  const client = new ConsoleClient({
    url: target,
    wsFactory: (u) => new WebSocket(u) as unknown as import("./client.js").WebSocketLike,
    onChange: (state) => renderer.render(state),
    sessionId: params.get("session") ?? undefined,
  });
  const renderer = new Renderer(root, {
    onQuery: (text) => client.sendQuery(text),
    onResolve: (id, kind, feedback) => client.resolve(id, kind, feedback),
    onSwitch: (sessionId) => client.switchSession(sessionId),
    onAbort: () => client.abort(),
  });
  client.connect();
  return client;
}

declare global {
  interface Window {
    semacoreConsole?: ConsoleClient;
  }
}

if (typeof window !== "undefined" && window.document?.getElementById("app")) {
  window.semacoreConsole = boot(window.document.getElementById("app")!);
}
