/**
 * Vocabulary projection: fold an external model's distribution onto the
 * local id space. Alignment is exact string match only; any external token
 * without a local entry contributes its probability mass to UNK. Splitting
 * or merging subword pieces is deliberately out of scope.
 */

import { Vocabulary } from "./vocabulary.js";

/** Per-external-token target ids, built once per endpoint vocabulary. */
export function buildProjection(local: Vocabulary, externalTokens: string[]): Int32Array {
  const targets = new Int32Array(externalTokens.length);
  for (let i = 0; i < externalTokens.length; i++) {
    targets[i] = local.id(externalTokens[i]);
  }
  return targets;
}

/**
 * Apply a projection to an external probability vector. The output sums to
 * the same total as the input (up to float addition order), so a normalized
 * endpoint distribution stays normalized.
 */
export function projectDist(targets: Int32Array, externalProbs: number[], localSize: number): number[] {
  if (externalProbs.length !== targets.length) {
    throw new Error(`endpoint returned ${externalProbs.length} probs for ${targets.length} vocabulary tokens`);
  }
  const out = new Array<number>(localSize).fill(0);
  for (let i = 0; i < externalProbs.length; i++) {
    const p = externalProbs[i];
    if (typeof p !== "number" || !Number.isFinite(p) || p < 0) {
      throw new Error(`endpoint probability at index ${i} is not a finite non-negative number`);
    }
    out[targets[i]] += p;
  }
  return out;
}
