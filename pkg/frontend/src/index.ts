export { PROTOCOL_VERSION, MAX_VOCAB, NORMALIZATION_TOLERANCE, encodeHello, encodeProbs, encodeError, parseRequest } from "./protocol.js";
export type { HelloLine, ProbsRequest } from "./protocol.js";
export { Vocabulary, BOS, EOS, UNK, CTXPAD, RESERVED_TOKENS } from "./vocabulary.js";
export { buildProjection, projectDist } from "./projection.js";
export { UniformEndpoint, HttpEndpoint } from "./endpoint.js";
export type { InferenceEndpoint } from "./endpoint.js";
export { serveSession, serveTcp } from "./server.js";
export type { ServeOptions, TcpOptions } from "./server.js";
export { BridgeRequester } from "./requester.js";
