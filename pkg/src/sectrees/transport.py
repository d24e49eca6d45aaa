"""Two-party channels with length-prefixed framing and round/bit metering.

Every ``exchange`` is one communication round: each side sends a batch of
payloads and receives the peer's batch.  A frame on the wire is a 4-byte
little-endian length followed by the batch body (payload count, payload
lengths, payload bytes).
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import struct
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

from .errors import ConfigMismatch, TransportError, TransportTimeout, UsageError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
_LEN = struct.Struct("<I")


@dataclass
class Metrics:
    rounds: int = 0
    payload_bits: int = 0
    wire_bytes: int = 0

    def copy(self) -> "Metrics":
        return Metrics(self.rounds, self.payload_bits, self.wire_bytes)

    def __sub__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.rounds - other.rounds, self.payload_bits - other.payload_bits,
                       self.wire_bytes - other.wire_bytes)

    @property
    def framing_bytes(self) -> int:
        """Bytes on the wire beyond the logical payload."""
        return self.wire_bytes - (self.payload_bits + 7) // 8


def encode_batch(payloads: list[bytes]) -> bytes:
    head = _LEN.pack(len(payloads)) + b"".join(_LEN.pack(len(p)) for p in payloads)
    return head + b"".join(payloads)


def decode_batch(body: bytes) -> list[bytes]:
    try:
        (count,) = _LEN.unpack_from(body, 0)
        lens = struct.unpack_from(f"<{count}I", body, 4)
    except struct.error as exc:
        raise TransportError("malformed frame") from exc
    out, pos = [], 4 + 4 * count
    for n in lens:
        out.append(body[pos:pos + n])
        pos += n
    if pos != len(body):
        raise TransportError("frame length does not match its payload table")
    return out


class Channel:
    """Base class: subclasses move raw frames, this class meters them."""

    def __init__(self, role: str, timeout: float | None = None):
        if role not in ("A", "B"):
            raise ValueError("role must be 'A' or 'B'")
        self.role = role
        self.timeout = timeout
        self.metrics = Metrics()
        self.trace: list[tuple[int, int]] | None = None
        self._scoped = False

    # subclasses implement these two
    def _send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def exchange(self, payloads: list[bytes], bits: int | None = None, meter: bool = True) -> list[bytes]:
        """Send ``payloads`` and return the peer's batch.

        Args:
            payloads: Outgoing byte strings.
            bits: Logical payload size in bits; defaults to 8 bits per byte.
            meter: Count this exchange in ``metrics`` (handshakes are not counted).
        """
        body = encode_batch(payloads)
        frame = _LEN.pack(len(body)) + body
        self._send_frame(frame)
        incoming = decode_batch(self._recv_frame())
        if meter:
            if bits is None:
                bits = 8 * sum(len(p) for p in payloads)
            self.metrics.rounds += 1
            self.metrics.payload_bits += bits
            self.metrics.wire_bytes += len(frame)
            if self.trace is not None:
                self.trace.append((bits, len(frame)))
        return incoming

    @contextmanager
    def scoped_metrics(self):
        """Yield a ``Metrics`` object holding this scope's deltas once it closes."""
        if self._scoped:
            raise UsageError("metric scopes cannot be nested on one channel")
        self._scoped = True
        start = self.metrics.copy()
        delta = Metrics()
        try:
            yield delta
        finally:
            d = self.metrics - start
            delta.rounds, delta.payload_bits, delta.wire_bytes = d.rounds, d.payload_bits, d.wire_bytes
            self._scoped = False

    def handshake(self, info: dict) -> None:
        """Exchange session parameters and abort on any difference."""
        mine = dict(info, version=PROTOCOL_VERSION)
        (theirs,) = self.exchange([json.dumps(mine, sort_keys=True).encode()], meter=False)
        try:
            peer = json.loads(theirs)
        except ValueError as exc:
            raise TransportError("peer sent an unreadable handshake") from exc
        diff = sorted(k for k in set(mine) | set(peer) if mine.get(k) != peer.get(k))
        if diff:
            raise ConfigMismatch("handshake mismatch on " + ", ".join(
                f"{k} (ours={mine.get(k)!r}, peer={peer.get(k)!r})" for k in diff))


class LocalChannel(Channel):
    """One end of an in-process channel pair backed by queues."""

    _CLOSED = object()

    def __init__(self, role, inbox: queue.Queue, outbox: queue.Queue, timeout=None):
        super().__init__(role, timeout)
        self._inbox, self._outbox = inbox, outbox

    def _send_frame(self, frame):
        self._outbox.put(frame)

    def _recv_frame(self):
        try:
            frame = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportTimeout("no frame from peer before the deadline") from None
        if frame is self._CLOSED:
            self._inbox.put(frame)
            raise TransportError("peer closed the channel")
        (n,) = _LEN.unpack_from(frame, 0)
        return frame[4:4 + n]

    def close(self):
        self._outbox.put(self._CLOSED)


def local_pair(timeout: float | None = 600.0) -> tuple[LocalChannel, LocalChannel]:
    """Connected in-process channels for parties A and B."""
    ab, ba = queue.Queue(), queue.Queue()
    return LocalChannel("A", ba, ab, timeout), LocalChannel("B", ab, ba, timeout)


class TcpChannel(Channel):
    """Channel over a connected TCP socket.

    Frames are written by a background thread so both parties can send large
    batches at the same time without filling each other's socket buffers.
    """

    def __init__(self, role, sock: socket.socket, timeout=None):
        super().__init__(role, timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(timeout)
        self._sock = sock
        self._outq: queue.Queue = queue.Queue()
        self._send_error: BaseException | None = None
        self._sender = threading.Thread(target=self._send_loop, daemon=True)
        self._sender.start()

    @classmethod
    def listen(cls, host: str, port: int, role: str, timeout: float | None = 600.0,
               ready: threading.Event | None = None, bound: list | None = None) -> "TcpChannel":
        """Accept one peer.  ``bound`` receives the actual port when ``port`` is 0."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            srv.bind((host, port))
            srv.listen(1)
            if bound is not None:
                bound.append(srv.getsockname()[1])
            if ready is not None:
                ready.set()
            srv.settimeout(timeout)
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                raise TransportTimeout("no peer connected before the deadline") from None
            except OSError as exc:
                raise TransportError(f"accept failed: {exc}") from exc
        finally:
            srv.close()
        return cls(role, conn, timeout)

    @classmethod
    def connect(cls, host: str, port: int, role: str, timeout: float | None = 600.0,
                retry_for: float = 30.0) -> "TcpChannel":
        deadline = time.monotonic() + retry_for
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                return cls(role, sock, timeout)
            except OSError as exc:
                if time.monotonic() > deadline:
                    raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
                time.sleep(0.05)

    def _send_loop(self):
        while True:
            frame = self._outq.get()
            if frame is None:
                return
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                self._send_error = exc
                return

    def _send_frame(self, frame):
        if self._send_error is not None:
            raise TransportError(f"send failed: {self._send_error}")
        self._outq.put(frame)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(min(n - len(buf), 1 << 20))
            except socket.timeout:
                raise TransportTimeout("no frame from peer before the deadline") from None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def _recv_frame(self):
        (n,) = _LEN.unpack(self._read_exact(4))
        return self._read_exact(n)

    def close(self):
        self._outq.put(None)
        self._sender.join(timeout=5)
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_pair(host: str = "127.0.0.1", timeout: float | None = 600.0) -> tuple[TcpChannel, TcpChannel]:
    """Loopback TCP channels for A (listening) and B (connecting)."""
    ready, bound, box = threading.Event(), [], {}

    def serve():
        try:
            box["a"] = TcpChannel.listen(host, 0, "A", timeout, ready, bound)
        except BaseException as exc:  # surfaced below
            box["err"] = exc
            ready.set()

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    ready.wait()
    if "err" in box:
        raise box["err"]
    b = TcpChannel.connect(host, bound[0], "B", timeout)
    t.join()
    if "err" in box:
        raise box["err"]
    return box["a"], b
