/**
 * Inference endpoints: anything that can report its vocabulary once and then
 * answer next-token distributions over it. The endpoint speaks its own token
 * strings; projection onto local ids happens in the server.
 */

export interface InferenceEndpoint {
  /** Token strings of the endpoint's vocabulary, in distribution order. */
  readonly vocab: string[];
  /** Next-token probabilities over `vocab` given the context token strings. */
  nextDist(context: string[]): Promise<number[]>;
}

/** Context-free stub that answers 1/n everywhere; the conformance baseline. */
export class UniformEndpoint implements InferenceEndpoint {
  readonly vocab: string[];
  private readonly dist: number[];

  constructor(vocab: string[]) {
    if (vocab.length === 0) {
      throw new Error("uniform endpoint needs a non-empty vocabulary");
    }
    this.vocab = [...vocab];
    this.dist = new Array<number>(vocab.length).fill(1 / vocab.length);
  }

  async nextDist(): Promise<number[]> {
    return [...this.dist];
  }
}

interface VocabReply {
  tokens: string[];
}

interface NextReply {
  probs: number[];
}

/**
 * HTTP adapter for a real model server. Expects two JSON routes under the
 * base URL: GET /vocab returning {"tokens": [...]}, and POST /next taking
 * {"context": [...]} and returning {"probs": [...]} over those tokens.
 */
export class HttpEndpoint implements InferenceEndpoint {
  readonly vocab: string[];
  private readonly nextUrl: string;

  private constructor(vocab: string[], nextUrl: string) {
    this.vocab = vocab;
    this.nextUrl = nextUrl;
  }

  static async open(baseUrl: string): Promise<HttpEndpoint> {
    const base = baseUrl.replace(/\/+$/, "");
    const reply = await fetchJson<VocabReply>(`${base}/vocab`, undefined);
    if (!Array.isArray(reply.tokens) || reply.tokens.some((t) => typeof t !== "string")) {
      throw new Error(`endpoint ${base}/vocab did not return a token string list`);
    }
    return new HttpEndpoint(reply.tokens, `${base}/next`);
  }

  async nextDist(context: string[]): Promise<number[]> {
    const reply = await fetchJson<NextReply>(this.nextUrl, { context });
    if (!Array.isArray(reply.probs)) {
      throw new Error(`endpoint ${this.nextUrl} did not return a probs list`);
    }
    return reply.probs;
  }
}

async function fetchJson<T>(url: string, body: object | undefined): Promise<T> {
  const init: RequestInit =
    body === undefined
      ? { method: "GET" }
      : { method: "POST", headers: { "content-type": "application/json" }, body: JSON.stringify(body) };
  const resp = await fetch(url, init);
  if (!resp.ok) {
    throw new Error(`endpoint request ${url} failed with status ${resp.status}`);
  }
  return (await resp.json()) as T;
}
