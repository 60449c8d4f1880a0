/**
 * The worker's asynchronous run loop and its state machine:
 *
 *   idle -> fetching -> evaluating -> submitting -> fetching | finished
 *
 * error is reachable from any phase; Stop halts after the current chunk
 * and never submits a partial packet.  No packet is submitted twice from
 * the same page session.
 */
import { evaluatePacket } from "./evaluate.js";
import {
  LEASE_EXPIRED,
  NO_WORK,
  ServerError,
  type LoopReply,
  type Packet,
  type RunSummary,
  type Transport,
} from "./protocol.js";

export type Phase =
  | "idle"
  | "fetching"
  | "evaluating"
  | "submitting"
  | "finished"
  | "error";

export interface WorkerState {
  phase: Phase;
  currentPacket: Packet | null;
  evaluatedTotal: number;
  packetsCompleted: number;
  localRate: number; // chromosomes/second this session
  bestSeen: number | null;
  lastError: string | null;
  runSummary: RunSummary | null;
  skippedTotal: number;
}

export interface LoopOptions {
  chunkSize?: number;
  onState?: (state: WorkerState) => void;
  /** fires with each counted packet's (id, fitness) pairs */
  onResults?: (results: [string, number][]) => void;
  yieldToPage?: () => Promise<void>;
  /** pause between retries / no-work polls, injectable for tests */
  pauseMs?: number;
  retries?: number;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class WorkerLoop {
  readonly state: WorkerState = {
    phase: "idle",
    currentPacket: null,
    evaluatedTotal: 0,
    packetsCompleted: 0,
    localRate: 0,
    bestSeen: null,
    lastError: null,
    runSummary: null,
    skippedTotal: 0,
  };

  private stopRequested = false;
  private running = false;
  private startedAt = 0;
  private submittedPackets = new Set<string>();

  constructor(
    private transport: Transport,
    private options: LoopOptions = {},
  ) {}

  private emit(): void {
    this.options.onState?.(this.state);
  }

  private setPhase(phase: Phase): void {
    this.state.phase = phase;
    this.emit();
  }

  private minimize(): boolean {
    return this.state.currentPacket?.problem.objective_sense !== "maximize";
  }

  private noteFitness(values: number[]): void {
    for (const value of values) {
      if (
        this.state.bestSeen === null ||
        (this.minimize() ? value < this.state.bestSeen : value > this.state.bestSeen)
      ) {
        this.state.bestSeen = value;
      }
    }
  }

  /** Run until the server says finished, Stop is pressed, or retries die. */
  async start(): Promise<void> {
    if (this.running) {
      return;
    }
    this.running = true;
    this.stopRequested = false;
    this.state.lastError = null;
    this.startedAt = Date.now();
    try {
      await this.runLoop();
    } finally {
      this.running = false;
    }
  }

  /** Halt after the current evaluation chunk; nothing partial is sent. */
  stop(): void {
    this.stopRequested = true;
  }

  /** Restart the algorithm server-side and reset session counters. */
  async restart(overrides?: Record<string, unknown>): Promise<void> {
    this.stop();
    await this.transport.restart(overrides);
    this.state.evaluatedTotal = 0;
    this.state.packetsCompleted = 0;
    this.state.localRate = 0;
    this.state.bestSeen = null;
    this.state.runSummary = null;
    this.state.currentPacket = null;
    this.state.skippedTotal = 0;
    this.setPhase("idle");
  }

  get isRunning(): boolean {
    return this.running;
  }

  private async runLoop(): Promise<void> {
    let reply: LoopReply | null = null;
    try {
      reply = await this.withRetries(() => this.fetchFresh());
      while (reply.status === "continue" && !this.stopRequested) {
        const packet = reply.next_packet!;
        this.state.currentPacket = packet;
        this.setPhase("evaluating");
        const evaluation = await evaluatePacket(
          packet,
          this.options.chunkSize ?? 50,
          this.options.yieldToPage,
          () => this.stopRequested,
        );
        if (evaluation === null) {
          break; // stopped mid-packet: do not submit
        }
        this.state.skippedTotal += evaluation.skipped.length;
        this.setPhase("submitting");
        reply = await this.submitOnce(evaluation.submission);
        if (reply === null) {
          reply = await this.withRetries(() => this.fetchFresh());
          continue;
        }
        if (this.counted(reply)) {
          this.state.evaluatedTotal += evaluation.submission.results.length;
          this.state.packetsCompleted += 1;
          this.noteFitness(evaluation.submission.results.map(([, f]) => f));
          const seconds = (Date.now() - this.startedAt) / 1000;
          this.state.localRate = seconds > 0 ? this.state.evaluatedTotal / seconds : 0;
          this.options.onResults?.(evaluation.submission.results);
        }
        this.emit();
      }
      if (reply !== null && reply.status === "finished") {
        this.state.runSummary = reply.run_summary ?? null;
        this.state.currentPacket = null;
        this.setPhase("finished");
      } else {
        this.state.currentPacket = null;
        this.setPhase("idle"); // stopped by the user
      }
    } catch (err) {
      this.state.lastError = err instanceof Error ? err.message : String(err);
      this.setPhase("error");
    }
  }

  private counted(reply: LoopReply): boolean {
    if (reply.duplicate) {
      return false;
    }
    if (reply.status === "finished" && reply.run_summary?.ingested === false) {
      return false;
    }
    return true;
  }

  private async fetchFresh(): Promise<LoopReply> {
    this.setPhase("fetching");
    return this.transport.fetchPacket();
  }

  /**
   * One submission attempt per packet, ever.  A dead lease (409) yields
   * null so the caller refetches; 503 after ingestion means the results
   * were taken but no next packet exists yet, so poll the fetch endpoint
   * rather than resubmitting.
   */
  private async submitOnce(submission: {
    packet_id: string;
    results: [string, number][];
  }): Promise<LoopReply | null> {
    if (this.submittedPackets.has(submission.packet_id)) {
      return null;
    }
    this.submittedPackets.add(submission.packet_id);
    try {
      return await this.transport.submitResults(submission);
    } catch (err) {
      if (err instanceof ServerError && err.kind === LEASE_EXPIRED) {
        return null;
      }
      if (err instanceof ServerError && err.kind === NO_WORK) {
        return null; // ingested; the follow-up fetch finds the next packet
      }
      throw err;
    }
  }

  private async withRetries(call: () => Promise<LoopReply>): Promise<LoopReply> {
    const retries = this.options.retries ?? 3;
    const pause = this.options.pauseMs ?? 250;
    let lastError: unknown = null;
    let attempt = 0;
    let noWorkPolls = 0;
    while (attempt < retries) {
      try {
        return await call();
      } catch (err) {
        if (err instanceof ServerError && err.kind === NO_WORK) {
          // not a failure, just nothing dispatchable yet; poll, bounded
          if (++noWorkPolls > 240 || this.stopRequested) {
            throw err;
          }
          await sleep(pause);
          continue;
        }
        lastError = err;
        attempt++;
        await sleep(pause * Math.pow(2, attempt - 1));
      }
    }
    throw lastError instanceof Error
      ? lastError
      : new Error(String(lastError ?? "request failed"));
  }
}
