"""Party runtime plumbing: the communication ledger, peer/dealer channels
(in-process and TCP) and the simulated-latency model.

Every frame is length-prefixed: u32 payload length, u8 tag, u64 step
counter, then the payload (little-endian u64 ring elements or utf-8 for
control tags).  The step counter makes desynchronization fail loudly
instead of hanging.  The ledger counts payload bytes only, attributes
traffic to the innermost active scope, and one synchronous bidirectional
exchange counts as exactly one round.
"""

import json
import queue
import socket
import struct
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import shares
from .errors import ContractError, ProtocolDesyncError, TransportError

TAG_DATA = 1
TAG_CONFIG = 2
TAG_DEALER_REQ = 3
TAG_DEALER_RESP = 4
TAG_OUTPUT = 5

KNOWN_TAGS = {TAG_DATA, TAG_CONFIG, TAG_DEALER_REQ, TAG_DEALER_RESP, TAG_OUTPUT}

FUNCTION_LABELS = ("MatMul", "GeLU", "Softmax", "LayerNorm", "Other")

_HEADER = struct.Struct("<IBQ")

DEFAULT_ROUND_LATENCY = 0.0002          # seconds per round (0.2 ms)
DEFAULT_BANDWIDTH = 10e9 / 8.0          # bytes/second (10 Gb/s)
DEFAULT_OPS_RATE = 1e9                  # local ring element-ops per second


# ---------------------------------------------------------------------------
# Communication ledger
# ---------------------------------------------------------------------------


@dataclass
class ScopeCounters:
    rounds: int = 0
    bytes_sent: int = 0
    messages: int = 0
    local_ops: int = 0
    wall_time: float = 0.0

    def merge(self, other: "ScopeCounters"):
        self.rounds += other.rounds
        self.bytes_sent += other.bytes_sent
        self.messages += other.messages
        self.local_ops += other.local_ops
        self.wall_time += other.wall_time


class CommLedger:
    """Per-scope counters of rounds, payload bytes, messages and local work.

    Scopes nest; counters are attributed to the innermost scope path, so a
    parent's total is its own direct traffic plus the sum of its children.
    """

    def __init__(self):
        self._stack: list[str] = []
        self._paths: dict[tuple, ScopeCounters] = {}
        self._scope_started: list[float] = []

    def _counters(self) -> ScopeCounters:
        path = tuple(self._stack)
        if path not in self._paths:
            self._paths[path] = ScopeCounters()
        return self._paths[path]

    @contextmanager
    def scope(self, label: str):
        self._stack.append(label)
        start = time.perf_counter()
        try:
            yield self
        finally:
            self._counters().wall_time += time.perf_counter() - start
            popped = self._stack.pop()
            if popped != label:
                raise ContractError("unbalanced scope nesting")

    def record_exchange(self, payload_bytes: int):
        c = self._counters()
        c.rounds += 1
        c.messages += 1
        c.bytes_sent += payload_bytes

    def add_ops(self, n: int):
        self._counters().local_ops += int(n)

    # -- aggregation ------------------------------------------------------

    def total(self, prefix: tuple = ()) -> ScopeCounters:
        """Sum of counters over all paths under the given prefix."""
        out = ScopeCounters()
        for path, c in self._paths.items():
            if path[: len(prefix)] == prefix:
                out.merge(c)
        return out

    def by_label(self) -> dict[str, ScopeCounters]:
        """Aggregate into the report groups; traffic outside any known
        function label lands in Other."""
        out = {label: ScopeCounters() for label in FUNCTION_LABELS}
        for path, c in self._paths.items():
            label = "Other"
            for part in reversed(path):
                if part in FUNCTION_LABELS:
                    label = part
                    break
            out[label].merge(c)
        return out

    def snapshot(self) -> dict:
        return {
            "/".join(path): vars(c).copy() for path, c in sorted(self._paths.items())
        }


def simulated_latency_report(
    ledger: CommLedger,
    round_latency: float = DEFAULT_ROUND_LATENCY,
    bandwidth: float = DEFAULT_BANDWIDTH,
    ops_rate: float = DEFAULT_OPS_RATE,
) -> dict:
    """Estimate per-label execution time from counts alone.

    comm_seconds(label) = rounds * round_latency + bytes / bandwidth.
    compute_seconds uses a flat element-ops rate; it is a modeling knob
    that stands in for hardware we do not benchmark, so reports stay
    reproducible.  LayerNorm and Other are engine-chosen costs rather
    than core protocol routines, and get flagged as such.
    """
    if round_latency <= 0 or bandwidth <= 0 or ops_rate <= 0:
        raise ContractError("latency, bandwidth and ops rate must be positive")
    rows = {}
    for label, c in ledger.by_label().items():
        comm = c.rounds * round_latency + c.bytes_sent / bandwidth
        compute = c.local_ops / ops_rate
        rows[label] = {
            "rounds": c.rounds,
            "bytes_sent": c.bytes_sent,
            "messages": c.messages,
            "local_ops": c.local_ops,
            "comm_seconds": comm,
            "compute_seconds": compute,
            "total_seconds": comm + compute,
            "non_protocol_cost": label in ("LayerNorm", "Other"),
        }
    total = {
        k: sum(r[k] for r in rows.values())
        for k in ("rounds", "bytes_sent", "messages", "local_ops",
                  "comm_seconds", "compute_seconds", "total_seconds")
    }
    rows["__total__"] = total
    return rows


# ---------------------------------------------------------------------------
# Frames and channels
# ---------------------------------------------------------------------------


def encode_frame(tag: int, step: int, payload: bytes) -> bytes:
    if tag not in KNOWN_TAGS:
        raise TransportError(f"refusing to encode unknown tag {tag}")
    return _HEADER.pack(len(payload), tag, step) + payload


def decode_header(buf: bytes) -> tuple[int, int, int]:
    length, tag, step = _HEADER.unpack(buf)
    if tag not in KNOWN_TAGS:
        raise TransportError(f"unknown frame tag {tag}")
    return length, tag, step


class Channel:
    """Reliable ordered frame transport between two endpoints.

    Each endpoint tracks independent send/receive step counters; a frame
    arriving with an unexpected step aborts with diagnostics rather than
    deadlocking.
    """

    def __init__(self, record_transcript: bool = False):
        self._send_step = 0
        self._recv_step = 0
        self.transcript: list | None = [] if record_transcript else None

    def _raw_send(self, frame: bytes):
        raise NotImplementedError

    def _raw_recv(self) -> tuple[int, int, bytes]:
        raise NotImplementedError

    def send(self, tag: int, payload: bytes):
        frame = encode_frame(tag, self._send_step, payload)
        if self.transcript is not None:
            self.transcript.append(("send", tag, self._send_step, payload))
        self._send_step += 1
        self._raw_send(frame)

    def recv(self, expect_tag: int) -> bytes:
        tag, step, payload = self._raw_recv()
        if step != self._recv_step:
            raise ProtocolDesyncError(
                f"step mismatch: expected {self._recv_step}, peer sent {step}"
            )
        if tag != expect_tag:
            raise ProtocolDesyncError(
                f"tag mismatch at step {step}: expected {expect_tag}, got {tag}"
            )
        if self.transcript is not None:
            self.transcript.append(("recv", tag, step, payload))
        self._recv_step += 1
        return payload

    def close(self):
        pass


class InProcessChannel(Channel):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue,
                 timeout: float = 60.0, record_transcript: bool = False):
        super().__init__(record_transcript)
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout

    def _raw_send(self, frame: bytes):
        self._outbox.put(frame)

    def _raw_recv(self):
        try:
            frame = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise TransportError(
                f"timed out after {self._timeout}s waiting for peer frame"
            ) from None
        length, tag, step = decode_header(frame[: _HEADER.size])
        payload = frame[_HEADER.size:]
        if len(payload) != length:
            raise TransportError("frame length prefix does not match payload")
        return tag, step, payload


def channel_pair(timeout: float = 60.0, record_transcript: bool = False):
    """Matched in-process endpoints for two threads of one process."""
    q12: queue.Queue = queue.Queue()
    q21: queue.Queue = queue.Queue()
    end1 = InProcessChannel(q21, q12, timeout, record_transcript)
    end2 = InProcessChannel(q12, q21, timeout, record_transcript)
    return end1, end2


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: float = 60.0,
                 record_transcript: bool = False):
        super().__init__(record_transcript)
        self._sock = sock
        self._sock.settimeout(timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _raw_send(self, frame: bytes):
        try:
            self._sock.sendall(frame)
        except OSError as e:
            raise TransportError(f"send failed: {e}") from None

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise TransportError("timed out waiting for peer frame") from None
            except OSError as e:
                raise TransportError(f"recv failed: {e}") from None
            if not chunk:
                raise TransportError("peer disconnected mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _raw_recv(self):
        length, tag, step = decode_header(self._recv_exact(_HEADER.size))
        payload = self._recv_exact(length)
        return tag, step, payload

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_listen_one(host: str, port: int, timeout: float = 60.0) -> TcpChannel:
    """Accept exactly one peer connection."""
    srv = socket.create_server((host, port))
    srv.settimeout(timeout)
    try:
        conn, _ = srv.accept()
    except socket.timeout:
        raise TransportError(f"nobody connected to {host}:{port}") from None
    finally:
        srv.close()
    return TcpChannel(conn, timeout)


def tcp_connect(host: str, port: int, timeout: float = 60.0,
                retries: int = 50, retry_delay: float = 0.1) -> TcpChannel:
    last = None
    for _ in range(retries):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpChannel(sock, timeout)
        except OSError as e:
            last = e
            time.sleep(retry_delay)
    raise TransportError(f"could not connect to {host}:{port}: {last}")


def run_pair(fn1, fn2, timeout: float = 120.0):
    """Run the two party closures on separate threads; re-raise failures."""
    results: dict[int, object] = {}
    errors: dict[int, BaseException] = {}

    def runner(idx, fn):
        try:
            results[idx] = fn()
        except BaseException as e:  # propagated to the caller below
            errors[idx] = e

    threads = [
        threading.Thread(target=runner, args=(1, fn1), daemon=True),
        threading.Thread(target=runner, args=(2, fn2), daemon=True),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
        if t.is_alive():
            raise TransportError("party thread did not finish before timeout")
    for idx in (1, 2):
        if idx in errors:
            raise errors[idx]
    return results[1], results[2]


# ---------------------------------------------------------------------------
# Dealer endpoint over the same wire format
# ---------------------------------------------------------------------------


def _pack_arrays(named: dict) -> bytes:
    header = json.dumps(
        {name: list(arr.shape) for name, arr in sorted(named.items())},
        sort_keys=True,
    ).encode()
    blobs = b"".join(np.ascontiguousarray(named[k], dtype=np.uint64).tobytes()
                     for k in sorted(named))
    return struct.pack("<I", len(header)) + header + blobs


def _unpack_arrays(buf: bytes) -> dict:
    (hlen,) = struct.unpack_from("<I", buf, 0)
    header = json.loads(buf[4: 4 + hlen].decode())
    out = {}
    offset = 4 + hlen
    for name in sorted(header):
        shape = tuple(header[name])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out[name] = np.frombuffer(buf, dtype=np.uint64, count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    return out


def _serialize_dealer_half(kind: str, half) -> bytes:
    if kind in (shares.ELEMENTWISE_TRIPLE, shares.MATMUL_TRIPLE):
        return _pack_arrays({"a": half.a, "b": half.b, "c": half.c})
    if kind == shares.BIT_PAIR:
        return _pack_arrays({"binary": half.binary, "arith_bits": half.arith_bits})
    if kind == shares.BINARY_AND_TRIPLE:
        return _pack_arrays({"a": half.a, "b": half.b, "c": half.c})
    if kind == shares.ADDER_FRONT:
        named = {"own_mask": half.own_mask, "own_pair_mask": half.own_pair_mask}
        named.update({f"mono_{k}": v for k, v in half.mono.items()})
        return _pack_arrays(named)
    raise TransportError(f"cannot serialize dealer kind {kind}")


def _deserialize_dealer_half(kind: str, party_id: int, params: dict, buf: bytes):
    arrs = _unpack_arrays(buf)
    if kind in (shares.ELEMENTWISE_TRIPLE, shares.MATMUL_TRIPLE):
        return shares.BeaverTripleShare(party_id, arrs["a"], arrs["b"], arrs["c"])
    if kind == shares.BIT_PAIR:
        return shares.BitPairShare(party_id, int(params["nbits"]), arrs["binary"], arrs["arith_bits"])
    if kind == shares.BINARY_AND_TRIPLE:
        return shares.AndTripleShare(party_id, arrs["a"], arrs["b"], arrs["c"])
    if kind == shares.ADDER_FRONT:
        mono = {k[len("mono_"):]: v for k, v in arrs.items() if k.startswith("mono_")}
        return shares.AdderFrontShare(party_id, arrs["own_mask"], arrs["own_pair_mask"], mono)
    raise TransportError(f"cannot deserialize dealer kind {kind}")


class RemoteDealerClient(shares.DealerClient):
    """Dealer access over a TCP channel to the dealer endpoint."""

    def __init__(self, party_id: int, channel: Channel):
        super().__init__(party_id)
        self._channel = channel

    def _fetch(self, kind, params, counter):
        req = json.dumps(
            {"kind": kind, "party": self.party_id, "counter": counter,
             "params": {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}},
            sort_keys=True,
        ).encode()
        self._channel.send(TAG_DEALER_REQ, req)
        resp = self._channel.recv(TAG_DEALER_RESP)
        return _deserialize_dealer_half(kind, self.party_id, params, resp)

    def close(self):
        self._channel.close()


def serve_dealer(host: str, port: int, seed: int, n_parties: int = 2,
                 timeout: float = 120.0):
    """Run the dealer endpoint: serve correlated randomness to both parties.

    Each party connects separately; requests carry only (kind, shapes,
    counter), never protocol data.  Returns after both connections close.
    """
    srv = socket.create_server((host, port))
    srv.settimeout(timeout)

    def handle(conn):
        chan = TcpChannel(conn, timeout)
        try:
            while True:
                try:
                    req = json.loads(chan.recv(TAG_DEALER_REQ).decode())
                except TransportError:
                    return
                params = {k: tuple(v) if isinstance(v, list) else v
                          for k, v in req["params"].items()}
                pair = shares.dealer_gen(req["kind"], params, seed, req["counter"])
                half = pair[int(req["party"]) - 1]
                chan.send(TAG_DEALER_RESP, _serialize_dealer_half(req["kind"], half))
        finally:
            chan.close()

    threads = []
    try:
        for _ in range(n_parties):
            conn, _ = srv.accept()
            t = threading.Thread(target=handle, args=(conn,), daemon=True)
            t.start()
            threads.append(t)
    finally:
        srv.close()
    for t in threads:
        t.join(timeout)
