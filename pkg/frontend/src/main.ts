import { ApiClient } from "./api.js";
import "./components/session-view.js";

/**
 * Entry point. With ?session=<id> it mounts the annotation view; without it,
 * it lists the sessions the service knows about. ?api=<origin> points at a
 * service on another origin (defaults to same-origin).
 */
async function boot(): Promise<void> {
  const mount = document.getElementById("app");
  if (mount === null) return;
  const params = new URLSearchParams(window.location.search);
  const apiBase = params.get("api") ?? "";
  const sessionId = params.get("session");

  if (sessionId !== null) {
    const view = document.createElement("dl-session-view");
    view.setAttribute("session-id", sessionId);
    view.setAttribute("api-base", apiBase);
    mount.replaceChildren(view);
    return;
  }

  const client = new ApiClient(apiBase);
  try {
    const sessions = await client.listSessions();
    if (sessions.length === 0) {
      mount.textContent = "no sessions in the store yet";
      return;
    }
    const list = document.createElement("ul");
    for (const s of sessions) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      const query = new URLSearchParams({ session: s.session_id });
      if (apiBase) query.set("api", apiBase);
      link.href = `?${query.toString()}`;
      link.textContent = `${s.session_id} — ${s.status}, ${s.labeled_count} labeled`;
      item.append(link);
      list.append(item);
    }
    mount.replaceChildren(list);
  } catch (err) {
    mount.textContent = `cannot reach annotation service: ${err}`;
  }
}

void boot();
