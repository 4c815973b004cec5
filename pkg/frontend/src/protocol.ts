/**
 * Wire protocol: newline-delimited JSON over a byte stream.
 *
 * The serving side opens with {"hello":1,"V":...,"order_hint":...} and then
 * answers each {"id":...,"context":[...]} line with {"id":...,"probs":[...]}.
 * A line that cannot be parsed as a request gets {"id":null,"error":"..."}
 * and the session keeps going. Field order and the absence of whitespace in
 * the encoded lines match the reference server byte for byte.
 */

export const PROTOCOL_VERSION = 1;

/** Hard cap on vocabulary size; larger handshakes are rejected by peers. */
export const MAX_VOCAB = 65536;

/** A probability vector is accepted when |sum - 1| is within this bound. */
export const NORMALIZATION_TOLERANCE = 1e-6;

export interface HelloLine {
  hello: number;
  V: number;
  order_hint: number;
}

export interface ProbsRequest {
  id: unknown;
  context: number[];
}

export function encodeHello(vocabSize: number, orderHint: number): string {
  const hello: HelloLine = { hello: PROTOCOL_VERSION, V: vocabSize, order_hint: orderHint };
  return JSON.stringify(hello);
}

export function encodeProbs(id: unknown, probs: number[]): string {
  return JSON.stringify({ id, probs });
}

export function encodeError(id: unknown, message: string): string {
  return JSON.stringify({ id: id ?? null, error: message });
}

/**
 * Parse one request line. Returns null when the line is not a JSON object
 * carrying an "id" and an integer-array "context"; the caller answers such
 * lines with a malformed-request error instead of dropping the session.
 */
export function parseRequest(line: string): ProbsRequest | null {
  let msg: unknown;
  try {
    msg = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    return null;
  }
  const rec = msg as Record<string, unknown>;
  if (!("id" in rec) || !Array.isArray(rec.context)) {
    return null;
  }
  const context: number[] = [];
  for (const t of rec.context) {
    if (typeof t !== "number" || !Number.isInteger(t)) {
      return null;
    }
    context.push(t);
  }
  return { id: rec.id, context };
}
