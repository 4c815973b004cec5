/**
 * Protocol server: bridges one inference endpoint into the wire protocol.
 * One request is in flight per session; lines are answered in order.
 */

import { createInterface } from "node:readline";
import { createServer } from "node:net";
import type { Readable, Writable } from "node:stream";

import { InferenceEndpoint } from "./endpoint.js";
import { buildProjection, projectDist } from "./projection.js";
import { MAX_VOCAB, encodeError, encodeHello, encodeProbs, parseRequest } from "./protocol.js";
import { Vocabulary } from "./vocabulary.js";

export interface ServeOptions {
  /** Context-length hint advertised in the handshake; 0 when unknown. */
  orderHint?: number;
}

/**
 * Serve one session: emit the handshake, answer request lines until the
 * peer closes the input. Returns the number of successful responses.
 *
 * Failures stay request-local. A line that does not parse as a request is
 * answered with a null-id error; a request whose context ids are out of
 * range, or whose endpoint call fails, is answered with an error carrying
 * the request id. The session continues after both.
 */
export async function serveSession(
  endpoint: InferenceEndpoint,
  vocab: Vocabulary,
  input: Readable,
  output: Writable,
  options: ServeOptions = {},
): Promise<number> {
  if (vocab.size > MAX_VOCAB) {
    throw new Error(`vocab size ${vocab.size} exceeds protocol cap ${MAX_VOCAB}`);
  }
  const targets = buildProjection(vocab, endpoint.vocab);
  // The callback already reports write failures; the listener only stops
  // node from treating the mirrored 'error' event as unhandled.
  const swallow = () => {};
  output.on("error", swallow);
  // false means the peer hung up; the session ends without a fuss.
  const write = async (line: string): Promise<boolean> => {
    try {
      await new Promise<void>((resolve, reject) => {
        output.write(line + "\n", (err) => (err ? reject(err) : resolve()));
      });
      return true;
    } catch {
      return false;
    }
  };

  let served = 0;
  try {
    if (!(await write(encodeHello(vocab.size, options.orderHint ?? 0)))) {
      return 0;
    }
    const lines = createInterface({ input, crlfDelay: Infinity });
    for await (const line of lines) {
      const request = parseRequest(line);
      if (request === null) {
        if (!(await write(encodeError(null, "malformed request")))) {
          return served;
        }
        continue;
      }
      try {
        const context = request.context.map((id) => vocab.token(id));
        const external = await endpoint.nextDist(context);
        const probs = projectDist(targets, external, vocab.size);
        if (!(await write(encodeProbs(request.id, probs)))) {
          return served;
        }
        served += 1;
      } catch (err) {
        if (!(await write(encodeError(request.id, err instanceof Error ? err.message : String(err))))) {
          return served;
        }
      }
    }
    return served;
  } finally {
    output.off("error", swallow);
  }
}

export interface TcpOptions extends ServeOptions {
  host?: string;
  /** Sessions to serve before the listener closes; null means run until killed. */
  maxSessions?: number | null;
  onListening?: (port: number) => void;
  onSessionEnd?: (served: number) => void;
}

/**
 * Accept TCP sessions one at a time. Connections arriving while a session
 * is active wait their turn; their handshake is emitted when serving starts.
 */
export function serveTcp(endpoint: InferenceEndpoint, vocab: Vocabulary, port: number, options: TcpOptions = {}): Promise<void> {
  const maxSessions = options.maxSessions === undefined ? 1 : options.maxSessions;
  return new Promise((resolve, reject) => {
    let sessions = 0;
    let chain: Promise<void> = Promise.resolve();
    const server = createServer((socket) => {
      chain = chain.then(async () => {
        if (maxSessions !== null && sessions >= maxSessions) {
          socket.destroy();
          return;
        }
        try {
          const served = await serveSession(endpoint, vocab, socket, socket, options);
          options.onSessionEnd?.(served);
        } catch (err) {
          socket.destroy();
          options.onSessionEnd?.(0);
        } finally {
          socket.end();
          sessions += 1;
          if (maxSessions !== null && sessions >= maxSessions) {
            server.close();
          }
        }
      });
    });
    server.on("error", reject);
    server.on("close", resolve);
    server.listen(port, options.host ?? "127.0.0.1", () => {
      const addr = server.address();
      if (addr !== null && typeof addr === "object") {
        options.onListening?.(addr.port);
      }
    });
  });
}
