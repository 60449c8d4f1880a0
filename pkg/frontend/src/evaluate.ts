/**
 * In-page fitness evaluation, numerically pinned to the server's
 * implementation (golden/fitness_vectors.json holds the shared vectors;
 * agreement is required to 1e-9 relative).
 */
import type { Packet, ProblemDescriptor, ResultSubmission } from "./protocol.js";

export class EncodingError extends Error {}

export function decodeGene(
  code: number,
  bitsPerGene: number,
  rangeMin: number,
  rangeMax: number,
): number {
  const maxCode = Math.pow(2, bitsPerGene) - 1;
  if (code < 0 || code > maxCode) {
    throw new EncodingError(`gene code ${code} outside [0, ${maxCode}]`);
  }
  // same operation order as the server, so endpoints land exactly
  return ((rangeMax - rangeMin) * code) / maxCode + rangeMin;
}

export function decodeChromosome(
  chromosome: string,
  problem: ProblemDescriptor,
): number[] {
  const expected = problem.dimensions * problem.bits_per_gene;
  if (chromosome.length !== expected) {
    throw new EncodingError(
      `chromosome length ${chromosome.length} != expected ${expected}`,
    );
  }
  if (/[^01]/.test(chromosome)) {
    throw new EncodingError("chromosome may contain only '0' and '1'");
  }
  const xs: number[] = [];
  for (let i = 0; i < problem.dimensions; i++) {
    const bits = chromosome.slice(
      i * problem.bits_per_gene,
      (i + 1) * problem.bits_per_gene,
    );
    xs.push(
      decodeGene(
        parseInt(bits, 2), // most significant bit first
        problem.bits_per_gene,
        problem.range_min,
        problem.range_max,
      ),
    );
  }
  return xs;
}

export function griewankStandard(xs: number[]): number {
  let quad = 0;
  let trig = 1;
  for (let i = 0; i < xs.length; i++) {
    quad += (xs[i] * xs[i]) / 4000;
    trig *= Math.cos(xs[i] / Math.sqrt(i + 1));
  }
  return quad - trig + 1;
}

export function griewankAsPrinted(xs: number[]): number {
  let quad = 0;
  let trig = 1;
  for (let i = 0; i < xs.length; i++) {
    quad += (xs[i] * xs[i]) / 4000;
    trig *= Math.cos(xs[i] / Math.sqrt(i + 1));
  }
  return quad + trig + 1;
}

export function evaluateChromosome(
  chromosome: string,
  problem: ProblemDescriptor,
): number {
  if (problem.kind === "onemax") {
    const expected = problem.dimensions * problem.bits_per_gene;
    if (chromosome.length !== expected || /[^01]/.test(chromosome)) {
      throw new EncodingError("malformed onemax chromosome");
    }
    let ones = 0;
    for (const bit of chromosome) {
      if (bit === "1") ones++;
    }
    return ones;
  }
  const xs = decodeChromosome(chromosome, problem);
  return problem.kind === "griewank_standard"
    ? griewankStandard(xs)
    : griewankAsPrinted(xs);
}

export interface PacketEvaluation {
  submission: ResultSubmission;
  skipped: [string, string][]; // (individual_id, reason)
}

const defaultYield = () => new Promise<void>((resolve) => setTimeout(resolve, 0));

/**
 * Evaluate a whole packet in cooperative slices so the page stays
 * responsive; malformed chromosomes are skipped and reported, never fatal.
 * Returns null if shouldStop() turns true between chunks (clean stop: an
 * interrupted packet is never submitted).
 */
export async function evaluatePacket(
  packet: Packet,
  chunkSize = 50,
  yieldToPage: () => Promise<void> = defaultYield,
  shouldStop: () => boolean = () => false,
): Promise<PacketEvaluation | null> {
  const results: [string, number][] = [];
  const skipped: [string, string][] = [];
  for (let start = 0; start < packet.individuals.length; start += chunkSize) {
    if (start > 0) {
      await yieldToPage();
      if (shouldStop()) {
        return null;
      }
    }
    for (const [id, chromosome] of packet.individuals.slice(
      start,
      start + chunkSize,
    )) {
      try {
        results.push([id, evaluateChromosome(chromosome, packet.problem)]);
      } catch (err) {
        skipped.push([id, err instanceof Error ? err.message : String(err)]);
      }
    }
  }
  return {
    submission: { packet_id: packet.packet_id, results },
    skipped,
  };
}
