"""Drive a protocol server with the wmlab consumer and report a verdict.

Usage: python3 pyclient.py -- <server command ...>
Prints one JSON object: handshake fields, response sums, and whether an
out-of-range context came back as a remote error without killing the session.
"""
import json
import sys

from wmlab.bridge import BridgeConnection, BridgeRemoteError


def main() -> int:
    cmd = sys.argv[sys.argv.index("--") + 1:]
    conn = BridgeConnection.spawn(cmd)
    verdict = {
        "V": conn.vocab_size,
        "order_hint": conn.order_hint,
        "sums": [],
        "remote_error_caught": False,
        "served_after_error": False,
    }
    for i in range(25):
        arr = conn.request([4 + (i % 7), 4 + (i % 11)])
        verdict["sums"].append(float(arr.sum()))
    try:
        conn.request([conn.vocab_size + 5])
    except BridgeRemoteError:
        verdict["remote_error_caught"] = True
    arr = conn.request([4])
    verdict["served_after_error"] = bool(abs(float(arr.sum()) - 1.0) < 1e-9)
    conn.close()
    print(json.dumps(verdict))
    return 0


if __name__ == "__main__":
    sys.exit(main())
