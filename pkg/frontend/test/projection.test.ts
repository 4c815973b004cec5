import { describe, expect, it } from "vitest";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { buildProjection, projectDist } from "../src/projection.js";
import { RESERVED_TOKENS, UNK, Vocabulary } from "../src/vocabulary.js";

function demoVocab(extra: string[]): Vocabulary {
  return new Vocabulary([...RESERVED_TOKENS, ...extra]);
}

describe("Vocabulary", () => {
  it("loads a one-token-per-line file and skips blank lines", () => {
    const dir = mkdtempSync(join(tmpdir(), "vocab-"));
    const path = join(dir, "vocab.txt");
    writeFileSync(path, [...RESERVED_TOKENS, "alpha", "", "beta"].join("\n") + "\n");
    const vocab = Vocabulary.load(path);
    expect(vocab.size).toBe(6);
    expect(vocab.id("beta")).toBe(5);
    expect(vocab.token(4)).toBe("alpha");
  });

  it("rejects files that do not start with the reserved tokens", () => {
    expect(() => new Vocabulary(["a", "b", "c", "d"])).toThrow(/must start with/);
    expect(() => new Vocabulary(["<bos>", "<eos>"])).toThrow(/reserved/);
  });

  it("falls back to UNK for unknown strings", () => {
    const vocab = demoVocab(["alpha"]);
    expect(vocab.id("alpha")).toBe(4);
    expect(vocab.id("missing")).toBe(UNK);
  });

  it("rejects out-of-range and fractional ids", () => {
    const vocab = demoVocab(["alpha"]);
    expect(() => vocab.token(5)).toThrow(/out of range/);
    expect(() => vocab.token(-1)).toThrow(/out of range/);
    expect(() => vocab.token(1.5)).toThrow(/out of range/);
  });
});

describe("projection", () => {
  it("maps by exact string match and folds unknowns into UNK", () => {
    const vocab = demoVocab(["alpha", "beta"]);
    const targets = buildProjection(vocab, ["beta", "gamma", "alpha", "delta"]);
    expect([...targets]).toEqual([5, UNK, 4, UNK]);
    const probs = projectDist(targets, [0.4, 0.3, 0.2, 0.1], vocab.size);
    expect(probs[5]).toBeCloseTo(0.4, 15);
    expect(probs[4]).toBeCloseTo(0.2, 15);
    expect(probs[UNK]).toBeCloseTo(0.4, 15);
    expect(probs[0]).toBe(0);
  });

  it("sums duplicate external tokens into one local slot", () => {
    const vocab = demoVocab(["alpha"]);
    const targets = buildProjection(vocab, ["alpha", "alpha"]);
    const probs = projectDist(targets, [0.25, 0.75], vocab.size);
    expect(probs[4]).toBe(1);
  });

  it("preserves total mass across random vocabularies", () => {
    // deterministic LCG so the property run is reproducible
    let state = 12345;
    const rand = () => {
      state = (state * 1103515245 + 12345) % 2147483648;
      return state / 2147483648;
    };
    const local = demoVocab(Array.from({ length: 60 }, (_, i) => `w${i + 4}`));
    for (let trial = 0; trial < 300; trial++) {
      const external: string[] = [];
      const n = 1 + Math.floor(rand() * 80);
      for (let i = 0; i < n; i++) {
        external.push(rand() < 0.7 ? `w${4 + Math.floor(rand() * 70)}` : `oov${i}`);
      }
      const raw = Array.from({ length: n }, () => rand());
      const total = raw.reduce((a, b) => a + b, 0);
      const probs = raw.map((x) => x / total);
      const targets = buildProjection(local, external);
      const projected = projectDist(targets, probs, local.size);
      const sumIn = probs.reduce((a, b) => a + b, 0);
      const sumOut = projected.reduce((a, b) => a + b, 0);
      expect(Math.abs(sumOut - sumIn)).toBeLessThanOrEqual(1e-12);
      expect(projected).toHaveLength(local.size);
    }
  });

  it("rejects length mismatches and bad probabilities", () => {
    const vocab = demoVocab(["alpha"]);
    const targets = buildProjection(vocab, ["alpha", "beta"]);
    expect(() => projectDist(targets, [1.0], vocab.size)).toThrow(/2 vocabulary tokens/);
    expect(() => projectDist(targets, [0.5, Number.NaN], vocab.size)).toThrow(/finite/);
    expect(() => projectDist(targets, [0.5, -0.5], vocab.size)).toThrow(/finite non-negative/);
  });
});
