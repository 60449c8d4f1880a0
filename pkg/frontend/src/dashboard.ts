/**
 * DOM layer: wires the Run / Stop / Restart controls to the loop and
 * paints state after every phase change plus a slow status poll.  Render
 * failures are swallowed so they can never take the compute loop down.
 */
import type { WorkerLoop, WorkerState } from "./loop.js";
import type { AlgorithmStatus, Transport } from "./protocol.js";

const STATUS_POLL_MS = 2000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function fmt(value: number | null | undefined, digits = 4): string {
  return value === null || value === undefined ? "-" : value.toFixed(digits);
}

export class Dashboard {
  private individualRows = new Map<string, number | null>();
  private pollTimer: number | undefined;

  constructor(
    private loop: WorkerLoop,
    private transport: Transport,
  ) {}

  attach(): void {
    el<HTMLButtonElement>("run").addEventListener("click", () => {
      void this.loop.start();
    });
    el<HTMLButtonElement>("stop").addEventListener("click", () => {
      this.loop.stop();
    });
    el<HTMLButtonElement>("restart").addEventListener("click", () => {
      void this.restart();
    });
    this.pollTimer = window.setInterval(() => {
      void this.refreshServerStatus();
    }, STATUS_POLL_MS);
    void this.refreshServerStatus();
  }

  detach(): void {
    if (this.pollTimer !== undefined) {
      window.clearInterval(this.pollTimer);
    }
  }

  private async restart(): Promise<void> {
    const overrides: Record<string, unknown> = {};
    const packetSize = el<HTMLInputElement>("packet-size").value.trim();
    if (packetSize) {
      overrides.packet_size = Number(packetSize);
    }
    const crossover = el<HTMLInputElement>("crossover-share").value.trim();
    if (crossover) {
      overrides.operators = {
        crossover_share: Number(crossover),
        mutation_share: 1 - Number(crossover),
      };
    }
    try {
      await this.loop.restart(overrides);
      this.individualRows.clear();
      this.renderIndividuals();
      await this.refreshServerStatus();
    } catch (err) {
      el("error").textContent = err instanceof Error ? err.message : String(err);
    }
  }

  /** Called by the loop on every state change. */
  render(state: WorkerState): void {
    try {
      el("phase").textContent = state.phase;
      el("evaluated").textContent = String(state.evaluatedTotal);
      el("packets").textContent = String(state.packetsCompleted);
      el("local-rate").textContent = fmt(state.localRate, 1);
      el("best-seen").textContent = fmt(state.bestSeen, 6);
      el("error").textContent = state.lastError ?? "";
      if (state.currentPacket) {
        for (const [id] of state.currentPacket.individuals) {
          if (!this.individualRows.has(id)) {
            this.individualRows.set(id, null);
          }
        }
      }
      if (state.phase === "submitting" || state.phase === "finished") {
        // fitnesses just computed for the current packet
        this.renderIndividuals();
      }
      if (state.currentPacket) {
        this.renderPacket(state);
      }
    } catch {
      // rendering must never interrupt the compute loop
    }
  }

  noteFitnesses(results: [string, number][]): void {
    for (const [id, fitness] of results) {
      this.individualRows.set(id, fitness);
    }
  }

  private renderPacket(state: WorkerState): void {
    const packet = state.currentPacket;
    el("packet-id").textContent = packet ? packet.packet_id : "-";
    el("packet-count").textContent = packet
      ? String(packet.individuals.length)
      : "-";
  }

  private renderIndividuals(): void {
    const tbody = el<HTMLTableSectionElement>("individuals");
    const rows: string[] = [];
    let shown = 0;
    for (const [id, fitness] of [...this.individualRows.entries()].reverse()) {
      if (shown++ >= 20) {
        break;
      }
      rows.push(
        `<tr><td>${id}</td><td>${fitness === null ? "evaluating" : fitness.toPrecision(9)}</td></tr>`,
      );
    }
    tbody.innerHTML = rows.join("");
  }

  private async refreshServerStatus(): Promise<void> {
    try {
      const status: AlgorithmStatus = await this.transport.status();
      el("server-state").textContent = status.state;
      el("server-evaluated").textContent = String(status.evaluated_count);
      el("server-best").textContent = fmt(status.best_fitness, 6);
      el("server-rate").textContent = fmt(status.eval_rate, 1);
      el("server-clients").textContent = String(
        Object.keys(status.per_client).length,
      );
    } catch {
      el("server-state").textContent = "unreachable";
    }
  }
}
