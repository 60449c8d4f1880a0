/**
 * Wire types and the HTTP transport for the fetch-evaluate-submit loop.
 * Mirrors docs/protocol.md: chromosomes are '0'/'1' strings, individuals
 * travel as [id, chromosome] pairs, results as [id, fitness] pairs.
 */

export interface ProblemDescriptor {
  kind: "griewank_standard" | "griewank_as_printed" | "onemax";
  dimensions: number;
  bits_per_gene: number;
  range_min: number;
  range_max: number;
  objective_sense: "minimize" | "maximize";
}

export interface Packet {
  packet_id: string;
  algorithm_id: string;
  individuals: [string, string][];
  problem: ProblemDescriptor;
  lease_seconds: number;
}

export interface ResultSubmission {
  packet_id: string;
  results: [string, number][];
}

export interface RunSummary {
  evaluated_count: number;
  best_fitness: number | null;
  ingested?: boolean;
}

export interface LoopReply {
  status: "continue" | "finished";
  next_packet?: Packet;
  run_summary?: RunSummary;
  duplicate?: boolean;
}

export interface AlgorithmStatus {
  algorithm_id: string;
  state: string;
  evaluated_count: number;
  best_fitness: number | null;
  eval_rate: number;
  elapsed_seconds: number;
  per_client: Record<string, number>;
  config: { packet_size: number; [key: string]: unknown };
  [key: string]: unknown;
}

export class ServerError extends Error {
  constructor(
    message: string,
    public httpStatus: number,
    public kind: string,
  ) {
    super(message);
  }
}

/** Thrown on 503: nothing dispatchable yet, back off and refetch. */
export const NO_WORK = "no_work";
/** Thrown on 409: our lease died, refetch and move on. */
export const LEASE_EXPIRED = "lease_expired";

async function errorFrom(response: Response): Promise<ServerError> {
  let kind = `http_${response.status}`;
  let detail = "";
  try {
    const body = await response.json();
    kind = body.error ?? kind;
    detail = body.detail ?? "";
  } catch {
    // non-JSON error body; keep the status-based kind
  }
  return new ServerError(`${kind} ${detail}`.trim(), response.status, kind);
}

export interface Transport {
  fetchPacket(): Promise<LoopReply>;
  submitResults(submission: ResultSubmission): Promise<LoopReply>;
  restart(overrides?: Record<string, unknown>): Promise<void>;
  status(): Promise<AlgorithmStatus>;
}

/** Talks to one algorithm on one server. */
export class HttpTransport implements Transport {
  constructor(
    private base: string,
    private algorithmId: string,
    private label = "browser",
  ) {}

  private headers(): Record<string, string> {
    return { "X-Client-Label": this.label };
  }

  private async checked(response: Response): Promise<LoopReply> {
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return (await response.json()) as LoopReply;
  }

  async fetchPacket(): Promise<LoopReply> {
    const response = await fetch(
      `${this.base}/algorithm/${this.algorithmId}/packet`,
      { headers: this.headers() },
    );
    return this.checked(response);
  }

  async submitResults(submission: ResultSubmission): Promise<LoopReply> {
    const response = await fetch(
      `${this.base}/algorithm/${this.algorithmId}/results`,
      {
        method: "POST",
        headers: { ...this.headers(), "Content-Type": "application/json" },
        body: JSON.stringify(submission),
      },
    );
    return this.checked(response);
  }

  async restart(overrides?: Record<string, unknown>): Promise<void> {
    const response = await fetch(
      `${this.base}/algorithm/${this.algorithmId}/restart`,
      {
        method: "POST",
        headers: { ...this.headers(), "Content-Type": "application/json" },
        body: JSON.stringify(overrides ?? {}),
      },
    );
    if (!response.ok) {
      throw await errorFrom(response);
    }
  }

  async status(): Promise<AlgorithmStatus> {
    const response = await fetch(
      `${this.base}/algorithm/${this.algorithmId}/status`,
      { headers: this.headers() },
    );
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return (await response.json()) as AlgorithmStatus;
  }
}
