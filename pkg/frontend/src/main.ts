/**
 * Page bootstrap: figure out which algorithm this page belongs to from
 * its URL (/algorithm/{id}/worker or the legacy /algorithm/generation/{id}),
 * wire the loop to the dashboard, and optionally autostart.
 */
import { Dashboard } from "./dashboard.js";
import { WorkerLoop } from "./loop.js";
import { HttpTransport } from "./protocol.js";

export function algorithmIdFromPath(pathname: string): string | null {
  const parts = pathname.split("/").filter(Boolean);
  if (parts[0] !== "algorithm" || parts.length < 2) {
    return null;
  }
  if (parts[1] === "generation") {
    return parts[2] ?? null;
  }
  return parts[1];
}

function boot(): void {
  const algorithmId = algorithmIdFromPath(window.location.pathname);
  const banner = document.getElementById("algorithm-id")!;
  if (!algorithmId) {
    banner.textContent = "no algorithm in URL";
    return;
  }
  banner.textContent = algorithmId;
  const transport = new HttpTransport(
    window.location.origin,
    algorithmId,
    "browser-worker",
  );
  let dashboard: Dashboard;
  const loop = new WorkerLoop(transport, {
    chunkSize: 50,
    onState: (state) => dashboard.render(state),
    onResults: (results) => dashboard.noteFitnesses(results),
  });
  dashboard = new Dashboard(loop, transport);
  dashboard.attach();
  if (new URLSearchParams(window.location.search).get("autostart") === "1") {
    void loop.start();
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("load", boot);
}
