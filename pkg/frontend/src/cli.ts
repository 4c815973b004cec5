#!/usr/bin/env node
/**
 * Command line: serve an inference endpoint over the wire protocol.
 *
 *   wmlab-bridge --vocab vocab.txt                        stdio session
 *   wmlab-bridge --vocab vocab.txt --port 7331            TCP listener
 *   wmlab-bridge --vocab vocab.txt --endpoint http://...  real model server
 *
 * Exit codes: 0 success, 1 usage error, 2 runtime failure.
 */

import { parseArgs } from "node:util";
import process from "node:process";

import { HttpEndpoint, UniformEndpoint, type InferenceEndpoint } from "./endpoint.js";
import { serveSession, serveTcp } from "./server.js";
import { Vocabulary } from "./vocabulary.js";

const USAGE = `usage: wmlab-bridge --vocab FILE [--endpoint uniform|URL] [--port N]
                    [--host HOST] [--order-hint K] [--max-sessions N]`;

class UsageError extends Error {}

interface CliConfig {
  vocabPath: string;
  endpointSpec: string;
  port: number | null;
  host: string;
  orderHint: number;
  maxSessions: number | null;
}

export function parseCli(argv: string[]): CliConfig {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        vocab: { type: "string" },
        endpoint: { type: "string", default: "uniform" },
        port: { type: "string" },
        host: { type: "string", default: "127.0.0.1" },
        "order-hint": { type: "string", default: "0" },
        "max-sessions": { type: "string", default: "1" },
        help: { type: "boolean", default: false },
      },
      allowPositionals: false,
    });
  } catch (err) {
    throw new UsageError(err instanceof Error ? err.message : String(err));
  }
  const values = parsed.values;
  if (values.help) {
    throw new UsageError("");
  }
  if (values.vocab === undefined) {
    throw new UsageError("--vocab is required");
  }
  const port = values.port === undefined ? null : parseIntArg("--port", values.port);
  const orderHint = parseIntArg("--order-hint", values["order-hint"]);
  const rawSessions = parseIntArg("--max-sessions", values["max-sessions"]);
  return {
    vocabPath: values.vocab,
    endpointSpec: values.endpoint,
    port,
    host: values.host,
    orderHint,
    // 0 means serve until killed
    maxSessions: rawSessions === 0 ? null : rawSessions,
  };
}

function parseIntArg(name: string, raw: string): number {
  const value = Number(raw);
  if (!Number.isInteger(value) || value < 0) {
    throw new UsageError(`${name} expects a non-negative integer, got ${raw}`);
  }
  return value;
}

async function openEndpoint(spec: string, vocab: Vocabulary): Promise<InferenceEndpoint> {
  if (spec === "uniform") {
    return new UniformEndpoint(vocab.entries);
  }
  if (spec.startsWith("http://") || spec.startsWith("https://")) {
    return HttpEndpoint.open(spec);
  }
  throw new UsageError(`--endpoint expects "uniform" or an http(s) URL, got ${spec}`);
}

export async function main(argv: string[]): Promise<number> {
  let config: CliConfig;
  try {
    config = parseCli(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      if (err.message !== "") {
        process.stderr.write(`error: ${err.message}\n`);
      }
      process.stderr.write(USAGE + "\n");
      return 1;
    }
    throw err;
  }
  try {
    const vocab = Vocabulary.load(config.vocabPath);
    const endpoint = await openEndpoint(config.endpointSpec, vocab);
    const options = { orderHint: config.orderHint };
    if (config.port !== null) {
      await serveTcp(endpoint, vocab, config.port, {
        ...options,
        host: config.host,
        maxSessions: config.maxSessions,
        onListening: (port) => process.stderr.write(`listening on ${config.host}:${port}\n`),
        onSessionEnd: (served) => process.stderr.write(`served ${served} requests\n`),
      });
    } else {
      const served = await serveSession(endpoint, vocab, process.stdin, process.stdout, options);
      process.stderr.write(`served ${served} requests\n`);
    }
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`error: ${err.message}\n${USAGE}\n`);
      return 1;
    }
    process.stderr.write(`error: ${err instanceof Error ? err.message : String(err)}\n`);
    return 2;
  }
}

// Run only as an entry point, not when imported by tests.
const isEntry = process.argv[1] !== undefined && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (isEntry) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      process.stderr.write(`error: ${err instanceof Error ? err.message : String(err)}\n`);
      process.exit(2);
    },
  );
}
