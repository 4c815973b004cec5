/**
 * Local vocabulary files: one token string per line, reserved ids first.
 */

import { readFileSync } from "node:fs";

export const BOS = 0;
export const EOS = 1;
export const UNK = 2;
export const CTXPAD = 3;

export const RESERVED_TOKENS = ["<bos>", "<eos>", "<unk>", "<ctxpad>"] as const;

export class Vocabulary {
  readonly entries: string[];
  private readonly index: Map<string, number>;

  constructor(entries: string[]) {
    if (entries.length < RESERVED_TOKENS.length) {
      throw new Error(`vocabulary needs at least the ${RESERVED_TOKENS.length} reserved tokens`);
    }
    for (let i = 0; i < RESERVED_TOKENS.length; i++) {
      if (entries[i] !== RESERVED_TOKENS[i]) {
        throw new Error(`vocabulary must start with ${RESERVED_TOKENS.join(", ")}`);
      }
    }
    this.entries = [...entries];
    this.index = new Map();
    // later duplicates win, same as the reference loader
    for (let i = 0; i < this.entries.length; i++) {
      this.index.set(this.entries[i], i);
    }
  }

  get size(): number {
    return this.entries.length;
  }

  /** Local id for a token string, UNK when the string is not in the file. */
  id(token: string): number {
    return this.index.get(token) ?? UNK;
  }

  token(tokenId: number): string {
    if (!Number.isInteger(tokenId) || tokenId < 0 || tokenId >= this.entries.length) {
      throw new Error(`token id ${tokenId} out of range`);
    }
    return this.entries[tokenId];
  }

  static load(path: string): Vocabulary {
    const lines = readFileSync(path, "utf-8").split("\n");
    return new Vocabulary(lines.filter((ln) => ln !== ""));
  }
}
