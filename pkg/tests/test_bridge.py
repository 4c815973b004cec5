"""Wire protocol: framing, handshake, error taxonomy, and serving loops."""

from __future__ import annotations

import json
import os
import socket
import sys
import threading

import numpy as np
import pytest

from conftest import make_nature_corpus
from wmlab.bridge import (
    MAX_VOCAB,
    BridgeConnection,
    BridgeNormalizationError,
    BridgeProtocolError,
    BridgeRemoteError,
    BridgeTimeout,
    RemoteModel,
    _LineChannel,
    serve_forever,
)
from wmlab.lm import GenParams, generate, train_ngram


class StubModel:
    """Uniform next-token stub standing in for a real inference endpoint."""

    def __init__(self, vocab_size: int = 16, order: int = 2):
        self.vocab_size = vocab_size
        self.order = order

    def next_dist(self, context):
        return np.full(self.vocab_size, 1.0 / self.vocab_size)


def channel_pair():
    a_r, b_w = os.pipe()
    b_r, a_w = os.pipe()
    return _LineChannel(a_r, a_w, owns_fds=True), _LineChannel(b_r, b_w, owns_fds=True)


def serve_in_thread(model, channel):
    t = threading.Thread(target=serve_forever, args=(model, channel), daemon=True)
    t.start()
    return t


def test_handshake_and_uniform_round_trip():
    client_ch, server_ch = channel_pair()
    t = serve_in_thread(StubModel(), server_ch)
    conn = BridgeConnection(client_ch, timeout=10.0)
    assert conn.vocab_size == 16
    assert conn.order_hint == 2
    dist = conn.request([4, 5])
    assert dist.shape == (16,)
    assert abs(float(dist.sum()) - 1.0) < 1e-9
    conn.close()
    t.join(timeout=5)


def test_thousand_sequential_requests():
    client_ch, server_ch = channel_pair()
    t = serve_in_thread(StubModel(), server_ch)
    conn = BridgeConnection(client_ch, timeout=10.0)
    for i in range(1000):
        dist = conn.request([i % 16])
        assert dist.shape == (16,)
    conn.close()
    t.join(timeout=5)


def test_served_model_matches_local_conditionals():
    corpus = make_nature_corpus(32, 80, 14, seed=40)
    model = train_ngram(corpus, 2, 32)
    client_ch, server_ch = channel_pair()
    t = serve_in_thread(model, server_ch)
    conn = BridgeConnection(client_ch, timeout=10.0)
    remote = RemoteModel(conn)
    assert remote.vocab_size == 32
    for ctx in ([], [5], [9, 11]):
        got = remote.next_dist(ctx)
        want = model.next_dist(ctx)
        assert np.all(np.abs(got - want) < 1e-12)
    conn.close()
    t.join(timeout=5)


def test_remote_generation_equals_local():
    corpus = make_nature_corpus(32, 80, 14, seed=40)
    model = train_ngram(corpus, 2, 32)
    client_ch, server_ch = channel_pair()
    t = serve_in_thread(model, server_ch)
    conn = BridgeConnection(client_ch, timeout=10.0)
    remote = RemoteModel(conn)
    p = GenParams(max_len=40, stop_at_eos=False, seed=17)
    assert generate(remote, [6], p) == generate(model, [6], p)
    conn.close()
    t.join(timeout=5)


# ---------------------------------------------------------------------------
# Client-side validation against a scripted fake server
# ---------------------------------------------------------------------------


class ScriptedServer:
    """Feeds canned response lines to one client connection."""

    def __init__(self, hello: dict | None, responder):
        self.hello = hello
        self.responder = responder

    def run(self, channel: _LineChannel):
        if self.hello is not None:
            channel.write_line(json.dumps(self.hello).encode())
        try:
            while True:
                line = channel.read_line(timeout=5.0)
                req = json.loads(line)
                out = self.responder(req)
                if out is None:
                    return
                channel.write_line(json.dumps(out).encode())
        except Exception:
            pass
        finally:
            channel.close()


def scripted(hello, responder):
    client_ch, server_ch = channel_pair()
    server = ScriptedServer(hello, responder)
    t = threading.Thread(target=server.run, args=(server_ch,), daemon=True)
    t.start()
    return client_ch


def uniform_hello(V=8, order=2):
    return {"hello": 1, "V": V, "order_hint": order}


def test_normalization_within_tolerance_is_renormalized():
    off = 1.0 + 5e-7
    probs = [off / 8.0] * 8

    ch = scripted(uniform_hello(), lambda req: {"id": req["id"], "probs": probs})
    conn = BridgeConnection(ch, timeout=5.0)
    dist = conn.request([1])
    assert abs(float(dist.sum()) - 1.0) < 1e-12
    conn.close()


def test_normalization_violation_raises():
    probs = [0.9 / 8.0] * 8
    ch = scripted(uniform_hello(), lambda req: {"id": req["id"], "probs": probs})
    conn = BridgeConnection(ch, timeout=5.0)
    with pytest.raises(BridgeNormalizationError):
        conn.request([1])
    conn.close()


def test_wrong_length_raises_protocol_error():
    ch = scripted(uniform_hello(), lambda req: {"id": req["id"], "probs": [0.5, 0.5]})
    conn = BridgeConnection(ch, timeout=5.0)
    with pytest.raises(BridgeProtocolError):
        conn.request([1])
    conn.close()


def test_negative_prob_rejected():
    probs = [0.3, -0.1, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1]
    ch = scripted(uniform_hello(), lambda req: {"id": req["id"], "probs": probs})
    conn = BridgeConnection(ch, timeout=5.0)
    with pytest.raises(BridgeNormalizationError):
        conn.request([1])
    conn.close()


def test_id_mismatch_raises():
    from wmlab.bridge import BridgeIdMismatch

    ch = scripted(uniform_hello(), lambda req: {"id": req["id"] + 999, "probs": [1.0 / 8] * 8})
    conn = BridgeConnection(ch, timeout=5.0)
    with pytest.raises(BridgeIdMismatch):
        conn.request([1])
    conn.close()


def test_remote_error_payload_raises():
    ch = scripted(uniform_hello(), lambda req: {"id": req["id"], "error": "endpoint down"})
    conn = BridgeConnection(ch, timeout=5.0)
    with pytest.raises(BridgeRemoteError):
        conn.request([1])
    conn.close()


def test_bad_handshake_rejected():
    ch = scripted({"hello": 7, "V": 8, "order_hint": 1}, lambda req: None)
    with pytest.raises(BridgeProtocolError):
        BridgeConnection(ch, timeout=5.0)


def test_oversized_vocab_rejected():
    ch = scripted(uniform_hello(V=MAX_VOCAB + 1), lambda req: None)
    with pytest.raises(BridgeProtocolError):
        BridgeConnection(ch, timeout=5.0)


def test_timeout_on_silent_server():
    # Server that never sends the handshake.
    client_ch, _server_ch = channel_pair()
    with pytest.raises(BridgeTimeout):
        BridgeConnection(client_ch, timeout=0.2)


def test_malformed_request_gets_error_response():
    client_ch, server_ch = channel_pair()
    t = serve_in_thread(StubModel(), server_ch)
    client_ch.read_line(timeout=5.0)
    client_ch.write_line(b"this is not json")
    out = json.loads(client_ch.read_line(timeout=5.0))
    assert out["id"] is None
    assert "error" in out
    # The server keeps serving after a malformed line.
    client_ch.write_line(json.dumps({"id": 1, "context": [2]}).encode())
    ok = json.loads(client_ch.read_line(timeout=5.0))
    assert ok["id"] == 1
    client_ch.close()
    t.join(timeout=5)


def test_serve_request_count_on_eof():
    client_ch, server_ch = channel_pair()
    result: list[int] = []

    def run():
        result.append(serve_forever(StubModel(), server_ch))

    t = threading.Thread(target=run, daemon=True)
    t.start()
    client_ch.read_line(timeout=5.0)
    for i in range(3):
        client_ch.write_line(json.dumps({"id": i, "context": []}).encode())
        client_ch.read_line(timeout=5.0)
    client_ch.close()
    t.join(timeout=5)
    assert result == [3]


# ---------------------------------------------------------------------------
# TCP transport
# ---------------------------------------------------------------------------


def test_tcp_round_trip():
    from wmlab.bridge import serve_tcp

    corpus = make_nature_corpus(32, 40, 10, seed=41)
    model = train_ngram(corpus, 2, 32)
    ready: list[int] = []
    evt = threading.Event()

    def cb(port: int):
        ready.append(port)
        evt.set()

    t = threading.Thread(
        target=serve_tcp, args=(model, "127.0.0.1", 0), kwargs={"ready_callback": cb}, daemon=True
    )
    t.start()
    assert evt.wait(timeout=5)
    conn = BridgeConnection.open_tcp("127.0.0.1", ready[0], timeout=10.0)
    dist = conn.request([5])
    assert np.all(np.abs(dist - model.next_dist([5])) < 1e-12)
    conn.close()
    t.join(timeout=5)
