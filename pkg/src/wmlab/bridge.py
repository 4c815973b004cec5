"""Newline-delimited JSON bridge to an external next-token model.

The protocol is symmetric about one stream pair (pipe or TCP): the serving
side opens with {"hello":1,"V":...,"order_hint":...} and then answers each
{"id":...,"context":[...]} with {"id":...,"probs":[...]} carrying exactly V
reals. Either side may close the stream at any time. The client validates
ids, lengths, and normalization, and maps each failure mode to a distinct
exception so callers can tell a slow model from a broken one.
"""

from __future__ import annotations

import json
import os
import selectors
import socket
import subprocess
import time
from typing import Sequence

import numpy as np

MAX_VOCAB = 65536
DEFAULT_TIMEOUT = 30.0
NORMALIZATION_TOLERANCE = 1e-6
PROTOCOL_VERSION = 1


class BridgeError(Exception):
    """Base class for everything the bridge can raise."""


class BridgeTimeout(BridgeError):
    pass


class BridgeProtocolError(BridgeError):
    """Malformed JSON, missing fields, bad handshake, or closed stream."""


class BridgeIdMismatch(BridgeError):
    pass


class BridgeNormalizationError(BridgeError):
    pass


class BridgeRemoteError(BridgeError):
    """The remote answered with an explicit error payload."""


class _LineChannel:
    """Buffered line reader/writer over raw file descriptors with timeouts."""

    def __init__(self, read_fd: int, write_fd: int, owns_fds: bool = False) -> None:
        self._read_fd = read_fd
        self._write_fd = write_fd
        self._buf = b""
        self._owns_fds = owns_fds
        self._closed = False
        os.set_blocking(read_fd, False)
        self._sel = selectors.DefaultSelector()
        self._sel.register(read_fd, selectors.EVENT_READ)

    def read_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BridgeTimeout(f"no line within {timeout:.3f}s")
            if not self._sel.select(remaining):
                raise BridgeTimeout(f"no line within {timeout:.3f}s")
            chunk = os.read(self._read_fd, 65536)
            if chunk == b"":
                raise BridgeProtocolError("stream closed by peer")
            self._buf += chunk

    def write_line(self, payload: bytes) -> None:
        data = payload + b"\n"
        while data:
            n = os.write(self._write_fd, data)
            data = data[n:]

    def close(self) -> None:
        # Closing owned fds is what signals EOF to the peer; sockets and
        # subprocess pipes stay owned by their wrapping objects instead.
        if self._closed:
            return
        self._closed = True
        self._sel.close()
        if self._owns_fds:
            for fd in {self._read_fd, self._write_fd}:
                try:
                    os.close(fd)
                except OSError:
                    pass


class BridgeConnection:
    """Client side of the protocol; one in-flight request at a time."""

    def __init__(self, channel: _LineChannel, timeout: float = DEFAULT_TIMEOUT) -> None:
        self._channel = channel
        self.timeout = timeout
        self._next_id = 0
        self._closers: list = []
        hello = self._read_json()
        if hello.get("hello") != PROTOCOL_VERSION:
            raise BridgeProtocolError(f"bad handshake: {hello!r}")
        v = hello.get("V")
        if not isinstance(v, int) or not 1 <= v <= MAX_VOCAB:
            raise BridgeProtocolError(f"handshake vocab size out of range: {v!r}")
        self.vocab_size: int = v
        self.order_hint: int = int(hello.get("order_hint", 0))

    @classmethod
    def open_tcp(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> "BridgeConnection":
        sock = socket.create_connection((host, port), timeout=timeout)
        channel = _LineChannel(sock.fileno(), sock.fileno())
        conn = cls(channel, timeout)
        conn._closers.append(sock.close)
        return conn

    @classmethod
    def spawn(cls, cmd: Sequence[str], timeout: float = DEFAULT_TIMEOUT) -> "BridgeConnection":
        """Launch a serving subprocess and bridge over its stdio."""
        proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        assert proc.stdin is not None and proc.stdout is not None
        channel = _LineChannel(proc.stdout.fileno(), proc.stdin.fileno())
        conn = cls(channel, timeout)
        conn._closers.append(proc.stdin.close)
        conn._closers.append(lambda: proc.wait(timeout=5))
        conn._closers.append(proc.stdout.close)
        return conn

    def _read_json(self) -> dict:
        line = self._channel.read_line(self.timeout)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed JSON line: {line[:200]!r}") from exc
        if not isinstance(msg, dict):
            raise BridgeProtocolError(f"expected a JSON object, got {type(msg).__name__}")
        return msg

    def request(self, context: Sequence[int]) -> np.ndarray:
        """One round trip: send the context, validate and return the probs."""
        req_id = self._next_id
        self._next_id += 1
        payload = json.dumps(
            {"id": req_id, "context": [int(t) for t in context]},
            separators=(",", ":"),
        )
        self._channel.write_line(payload.encode("utf-8"))
        msg = self._read_json()
        if "error" in msg:
            raise BridgeRemoteError(str(msg["error"]))
        if msg.get("id") != req_id:
            raise BridgeIdMismatch(f"sent id {req_id}, got {msg.get('id')!r}")
        probs = msg.get("probs")
        if not isinstance(probs, list) or len(probs) != self.vocab_size:
            got = len(probs) if isinstance(probs, list) else type(probs).__name__
            raise BridgeProtocolError(f"probs must hold exactly {self.vocab_size} reals, got {got}")
        arr = np.asarray(probs, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise BridgeNormalizationError("probs must be finite and non-negative")
        s = float(arr.sum())
        if abs(s - 1.0) > NORMALIZATION_TOLERANCE:
            raise BridgeNormalizationError(f"probs sum to {s!r}, outside tolerance")
        return arr / s

    def close(self) -> None:
        self._channel.close()
        for closer in self._closers:
            try:
                closer()
            except Exception:
                pass


def remote_next_dist(conn: BridgeConnection, context: Sequence[int]) -> np.ndarray:
    return conn.request(context)


class RemoteModel:
    """Adapter so lm.generate can drive a bridged model like a local one."""

    def __init__(self, conn: BridgeConnection) -> None:
        self._conn = conn
        self.vocab_size = conn.vocab_size
        self.order = max(conn.order_hint, 1)

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        return self._conn.request(context)


def serve_forever(model, channel: _LineChannel, timeout: float = DEFAULT_TIMEOUT) -> int:
    """Answer requests over one channel until the peer closes. Returns count."""
    if model.vocab_size > MAX_VOCAB:
        raise BridgeError(f"vocab size {model.vocab_size} exceeds protocol cap {MAX_VOCAB}")
    hello = {
        "hello": PROTOCOL_VERSION,
        "V": model.vocab_size,
        "order_hint": getattr(model, "order", 0),
    }
    channel.write_line(json.dumps(hello, separators=(",", ":")).encode("utf-8"))
    served = 0
    while True:
        try:
            line = channel.read_line(timeout)
        except BridgeProtocolError:
            return served  # peer hung up
        try:
            msg = json.loads(line)
            req_id = msg["id"]
            context = [int(t) for t in msg["context"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            channel.write_line(
                json.dumps({"id": None, "error": "malformed request"}, separators=(",", ":")).encode("utf-8")
            )
            continue
        probs = model.next_dist(context)
        reply = {"id": req_id, "probs": [float(p) for p in probs]}
        channel.write_line(json.dumps(reply, separators=(",", ":")).encode("utf-8"))
        served += 1


def serve_stdio(model, timeout: float = DEFAULT_TIMEOUT) -> int:
    """Serve one session over this process's stdin/stdout."""
    channel = _LineChannel(0, 1)
    return serve_forever(model, channel, timeout)


def serve_tcp(model, host: str, port: int, max_sessions: int | None = 1,
              timeout: float = DEFAULT_TIMEOUT, ready_callback=None) -> None:
    """Accept TCP sessions sequentially; None means serve until killed."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        if ready_callback is not None:
            ready_callback(srv.getsockname()[1])
        sessions = 0
        while max_sessions is None or sessions < max_sessions:
            conn, _ = srv.accept()
            with conn:
                channel = _LineChannel(conn.fileno(), conn.fileno())
                try:
                    serve_forever(model, channel, timeout)
                finally:
                    channel.close()
            sessions += 1
