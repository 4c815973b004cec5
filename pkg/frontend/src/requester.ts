/**
 * Protocol requester: the consuming side of the wire, used to talk to any
 * server speaking the protocol (the local one here or a remote peer). Kept
 * deliberately strict so conformance failures surface as typed errors.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { connect, type Socket } from "node:net";
import { createInterface, type Interface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import { MAX_VOCAB, NORMALIZATION_TOLERANCE, PROTOCOL_VERSION } from "./protocol.js";

const DEFAULT_TIMEOUT_MS = 30000;

export class BridgeRequester {
  readonly vocabSize: number;
  readonly orderHint: number;
  private readonly output: Writable;
  private readonly lines: AsyncIterator<string>;
  private readonly reader: Interface;
  private readonly timeoutMs: number;
  private readonly closers: Array<() => void>;
  private nextId = 0;

  private constructor(
    vocabSize: number,
    orderHint: number,
    output: Writable,
    reader: Interface,
    lines: AsyncIterator<string>,
    timeoutMs: number,
    closers: Array<() => void>,
  ) {
    this.vocabSize = vocabSize;
    this.orderHint = orderHint;
    this.output = output;
    this.reader = reader;
    this.lines = lines;
    this.timeoutMs = timeoutMs;
    this.closers = closers;
  }

  /** Launch a serving subprocess and speak the protocol over its stdio. */
  static async spawnProcess(command: string, args: string[], timeoutMs = DEFAULT_TIMEOUT_MS): Promise<BridgeRequester> {
    const child: ChildProcess = spawn(command, args, { stdio: ["pipe", "pipe", "inherit"] });
    if (child.stdin === null || child.stdout === null) {
      throw new Error("child process has no stdio pipes");
    }
    const closers = [() => child.stdin?.end(), () => child.kill()];
    return BridgeRequester.open(child.stdout, child.stdin, timeoutMs, closers);
  }

  static async connectTcp(host: string, port: number, timeoutMs = DEFAULT_TIMEOUT_MS): Promise<BridgeRequester> {
    const socket: Socket = await new Promise((resolve, reject) => {
      const s = connect(port, host, () => resolve(s));
      s.on("error", reject);
    });
    return BridgeRequester.open(socket, socket, timeoutMs, [() => socket.end()]);
  }

  static async open(
    input: Readable,
    output: Writable,
    timeoutMs = DEFAULT_TIMEOUT_MS,
    closers: Array<() => void> = [],
  ): Promise<BridgeRequester> {
    const reader = createInterface({ input, crlfDelay: Infinity });
    const lines = reader[Symbol.asyncIterator]();
    const hello = await readJsonLine(lines, timeoutMs);
    if (hello.hello !== PROTOCOL_VERSION) {
      throw new Error(`bad handshake: ${JSON.stringify(hello)}`);
    }
    const v = hello.V;
    if (typeof v !== "number" || !Number.isInteger(v) || v < 1 || v > MAX_VOCAB) {
      throw new Error(`handshake vocab size ${String(v)} out of range`);
    }
    const orderHint = typeof hello.order_hint === "number" ? hello.order_hint : 0;
    return new BridgeRequester(v, orderHint, output, reader, lines, timeoutMs, closers);
  }

  /** One round trip: send a context, validate and return normalized probs. */
  async request(context: number[]): Promise<number[]> {
    const id = this.nextId;
    this.nextId += 1;
    this.output.write(JSON.stringify({ id, context }) + "\n");
    const msg = await readJsonLine(this.lines, this.timeoutMs);
    if ("error" in msg) {
      throw new Error(`remote error: ${String(msg.error)}`);
    }
    if (msg.id !== id) {
      throw new Error(`sent id ${id}, got ${JSON.stringify(msg.id)}`);
    }
    const probs = msg.probs;
    if (!Array.isArray(probs) || probs.length !== this.vocabSize) {
      throw new Error(`probs must hold exactly ${this.vocabSize} reals`);
    }
    let sum = 0;
    for (const p of probs) {
      if (typeof p !== "number" || !Number.isFinite(p) || p < 0) {
        throw new Error("probs must be finite and non-negative");
      }
      sum += p;
    }
    if (Math.abs(sum - 1) > NORMALIZATION_TOLERANCE) {
      throw new Error(`probs sum to ${sum}, outside tolerance`);
    }
    return probs.map((p) => p / sum);
  }

  close(): void {
    this.reader.close();
    for (const closer of this.closers) {
      try {
        closer();
      } catch {
        // best effort teardown
      }
    }
  }
}

async function readJsonLine(lines: AsyncIterator<string>, timeoutMs: number): Promise<Record<string, unknown>> {
  const timer = new Promise<never>((_, reject) => {
    const t = setTimeout(() => reject(new Error(`no line within ${timeoutMs} ms`)), timeoutMs);
    t.unref?.();
  });
  const result = await Promise.race([lines.next(), timer]);
  if (result.done) {
    throw new Error("stream closed by peer");
  }
  let msg: unknown;
  try {
    msg = JSON.parse(result.value);
  } catch {
    throw new Error(`malformed JSON line: ${result.value.slice(0, 200)}`);
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new Error(`expected a JSON object, got ${typeof msg}`);
  }
  return msg as Record<string, unknown>;
}
