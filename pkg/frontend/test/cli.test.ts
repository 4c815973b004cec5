import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer, type Server } from "node:http";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { BridgeRequester } from "../src/requester.js";
import { RESERVED_TOKENS } from "../src/vocabulary.js";

const CLI = join(__dirname, "..", "dist", "cli.js");

let vocabPath: string;

beforeAll(() => {
  const dir = mkdtempSync(join(tmpdir(), "bridge-cli-"));
  vocabPath = join(dir, "vocab.txt");
  const entries = [...RESERVED_TOKENS, ...Array.from({ length: 60 }, (_, i) => `w${i + 4}`)];
  writeFileSync(vocabPath, entries.join("\n") + "\n");
});

interface CliRun {
  code: number;
  stdout: string;
  stderr: string;
}

function runCli(args: string[], stdin: string): Promise<CliRun> {
  return new Promise((resolve, reject) => {
    const child = spawn("node", [CLI, ...args], { stdio: ["pipe", "pipe", "pipe"] });
    const out: Buffer[] = [];
    const err: Buffer[] = [];
    child.stdout.on("data", (c: Buffer) => out.push(c));
    child.stderr.on("data", (c: Buffer) => err.push(c));
    child.on("error", reject);
    child.on("close", (code) => {
      resolve({
        code: code ?? -1,
        stdout: Buffer.concat(out).toString("utf-8"),
        stderr: Buffer.concat(err).toString("utf-8"),
      });
    });
    child.stdin.end(stdin);
  });
}

describe("command line", () => {
  it("exits 1 with usage when --vocab is missing", async () => {
    const run = await runCli([], "");
    expect(run.code).toBe(1);
    expect(run.stderr).toContain("usage:");
  });

  it("exits 1 on unknown flags and bad endpoint specs", async () => {
    expect((await runCli(["--vocab", vocabPath, "--frobnicate"], "")).code).toBe(1);
    expect((await runCli(["--vocab", vocabPath, "--endpoint", "gopher://x"], "")).code).toBe(1);
    expect((await runCli(["--vocab", vocabPath, "--port", "x"], "")).code).toBe(1);
  });

  it("exits 2 when the vocabulary file does not exist", async () => {
    const run = await runCli(["--vocab", "/nonexistent/vocab.txt"], "");
    expect(run.code).toBe(2);
    expect(run.stderr).toContain("error:");
  });

  it("serves a stdio session and reports the count on stderr", async () => {
    const stdin = ['{"id":1,"context":[4,5]}', "oops", '{"id":2,"context":[]}'].join("\n") + "\n";
    const run = await runCli(["--vocab", vocabPath, "--order-hint", "2"], stdin);
    expect(run.code).toBe(0);
    const lines = run.stdout.split("\n").filter((ln) => ln !== "");
    expect(lines[0]).toBe('{"hello":1,"V":64,"order_hint":2}');
    expect(JSON.parse(lines[1]).id).toBe(1);
    expect(lines[2]).toBe('{"id":null,"error":"malformed request"}');
    expect(JSON.parse(lines[3]).id).toBe(2);
    expect(run.stderr).toContain("served 2 requests");
  });

  it("serves one TCP session on an ephemeral port and exits", async () => {
    const child = spawn("node", [CLI, "--vocab", vocabPath, "--port", "0"], {
      stdio: ["ignore", "ignore", "pipe"],
    });
    const port = await new Promise<number>((resolve, reject) => {
      let buffered = "";
      child.stderr.on("data", (chunk: Buffer) => {
        buffered += chunk.toString("utf-8");
        const m = buffered.match(/listening on 127\.0\.0\.1:(\d+)/);
        if (m) {
          resolve(Number(m[1]));
        }
      });
      child.on("error", reject);
      setTimeout(() => reject(new Error("no listening line")), 20000);
    });
    const requester = await BridgeRequester.connectTcp("127.0.0.1", port);
    const probs = await requester.request([4, 5, 6]);
    expect(probs).toHaveLength(64);
    requester.close();
    const code = await new Promise<number>((resolve) => child.on("close", (c) => resolve(c ?? -1)));
    expect(code).toBe(0);
  });
});

describe("http endpoint", () => {
  let server: Server;
  let baseUrl: string;
  let nextCalls = 0;

  beforeAll(async () => {
    // minimal model stand-in: /vocab advertises strings, /next answers a
    // fixed skewed distribution, and every third call fails on purpose
    const tokens = ["w4", "w5", "mystery"];
    server = createServer((req, res) => {
      if (req.method === "GET" && req.url === "/vocab") {
        res.setHeader("content-type", "application/json");
        res.end(JSON.stringify({ tokens }));
        return;
      }
      if (req.method === "POST" && req.url === "/next") {
        nextCalls += 1;
        if (nextCalls % 3 === 0) {
          res.statusCode = 500;
          res.end("boom");
          return;
        }
        res.setHeader("content-type", "application/json");
        res.end(JSON.stringify({ probs: [0.5, 0.25, 0.25] }));
        return;
      }
      res.statusCode = 404;
      res.end();
    });
    await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
    const addr = server.address();
    if (addr === null || typeof addr !== "object") {
      throw new Error("no address");
    }
    baseUrl = `http://127.0.0.1:${addr.port}`;
  });

  afterAll(() => {
    server.close();
  });

  it("projects the remote vocabulary and survives endpoint failures", async () => {
    const stdin =
      ['{"id":1,"context":[4]}', '{"id":2,"context":[5]}', '{"id":3,"context":[6]}'].join("\n") + "\n";
    const run = await runCli(["--vocab", vocabPath, "--endpoint", baseUrl], stdin);
    expect(run.code).toBe(0);
    const lines = run.stdout.split("\n").filter((ln) => ln !== "");
    const first = JSON.parse(lines[1]);
    expect(first.probs[4]).toBeCloseTo(0.5, 12);
    expect(first.probs[5]).toBeCloseTo(0.25, 12);
    // "mystery" has no local entry, so its mass lands on UNK
    expect(first.probs[2]).toBeCloseTo(0.25, 12);
    const failed = JSON.parse(lines[3]);
    expect(failed.id).toBe(3);
    expect(failed.error).toContain("status 500");
    expect(run.stderr).toContain("served 2 requests");
  });
});
