"""Length-prefixed wire protocol and the duplex channels that carry it.

Every frame is [length:u32 BE][type:u8][payload]; the length covers type plus
payload.  The same framing runs over TCP sockets between processes and over
queue pairs inside one process, so transcripts captured in tests have the
exact shape of deployed traffic.
"""

from __future__ import annotations

import queue
import selectors
import socket
import struct
import threading
from dataclasses import dataclass, field

from .errors import (ABORT_FRAMING, ABORT_PROTOCOL, ProtocolAbort, ValidationError)

PROTOCOL_VERSION = 1

MSG_HELLO = 0x01
MSG_HELLO_ACK = 0x02
MSG_SHARE_UPLOAD = 0x03
MSG_TRIPLE_BLOCK = 0x04
MSG_MPC = 0x05
MSG_OUTPUT_SHARE = 0x06
MSG_ABORT = 0x07
MSG_BYE = 0x08

MSG_NAMES = {
    MSG_HELLO: "HELLO", MSG_HELLO_ACK: "HELLO_ACK", MSG_SHARE_UPLOAD: "SHARE_UPLOAD",
    MSG_TRIPLE_BLOCK: "TRIPLE_BLOCK", MSG_MPC: "MPC_MSG", MSG_OUTPUT_SHARE: "OUTPUT_SHARE",
    MSG_ABORT: "ABORT", MSG_BYE: "BYE",
}

MAX_FRAME = 16 * 1024 * 1024  # length field, i.e. type byte + payload
# Uploads larger than this are split across frames well below the hard cap.
UPLOAD_CHUNK = 8 * 1024 * 1024

_LEN = struct.Struct(">I")
_ROUND = struct.Struct(">Q")


@dataclass
class Recorder:
    """Captures (direction, type, length) per frame; payload capture optional."""

    label: str = ""
    keep_payloads: bool = False
    frames: list = field(default_factory=list)
    payloads: list = field(default_factory=list)

    def note(self, direction: str, ftype: int, length: int, payload: bytes = b"") -> None:
        self.frames.append((direction, ftype, length))
        if self.keep_payloads:
            self.payloads.append(payload)

    def shape(self) -> tuple:
        return tuple(self.frames)

    def sent_bytes(self) -> int:
        return sum(5 + ln for d, t, ln in self.frames if d == "send")


def encode_frame(ftype: int, payload: bytes) -> bytes:
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise ValidationError(f"frame of {length} bytes exceeds the 16 MiB cap")
    return _LEN.pack(length) + bytes([ftype]) + payload


class Channel:
    """Ordered, reliable duplex frame channel with transcript recording."""

    def __init__(self, recorder: Recorder | None = None):
        self.recorder = recorder
        self.bytes_sent = 0
        self.bytes_received = 0
        self.round = 0

    # transport hooks
    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_frame_bytes(self) -> tuple[int, bytes]:
        raise NotImplementedError

    def _exchange_bytes(self, data: bytes) -> tuple[int, bytes]:
        """Full-duplex: send `data` while receiving one frame."""
        self._send_bytes(data)
        return self._recv_frame_bytes()

    def close(self) -> None:
        pass

    # framing
    def send_frame(self, ftype: int, payload: bytes = b"") -> None:
        data = encode_frame(ftype, payload)
        if self.recorder:
            self.recorder.note("send", ftype, 1 + len(payload), payload)
        self.bytes_sent += len(data)
        self._send_bytes(data)

    def recv_frame(self) -> tuple[int, bytes]:
        ftype, payload = self._recv_frame_bytes()
        self.bytes_received += 5 + len(payload)
        if self.recorder:
            self.recorder.note("recv", ftype, 1 + len(payload), payload)
        if ftype == MSG_ABORT:
            code = payload[0] if payload else 0
            raise ProtocolAbort(code, payload[1:].decode("utf-8", "replace"))
        return ftype, payload

    def abort(self, code: int, reason: str = "") -> None:
        try:
            self.send_frame(MSG_ABORT, bytes([code]) + reason.encode())
        except Exception:
            pass

    def expect(self, ftype: int) -> bytes:
        got, payload = self.recv_frame()
        if got != ftype:
            self.abort(ABORT_PROTOCOL, f"expected {MSG_NAMES.get(ftype)}, got {MSG_NAMES.get(got)}")
            raise ProtocolAbort(ABORT_PROTOCOL, f"unexpected frame type {got:#x}")
        return payload

    def mpc_exchange(self, body: bytes) -> bytes:
        """One compute round: both sides send MPC_MSG r and receive the peer's."""
        payload = _ROUND.pack(self.round) + body
        data = encode_frame(MSG_MPC, payload)
        if self.recorder:
            self.recorder.note("send", MSG_MPC, 1 + len(payload), payload)
        self.bytes_sent += len(data)
        ftype, peer = self._exchange_bytes(data)
        self.bytes_received += 5 + len(peer)
        if self.recorder:
            self.recorder.note("recv", ftype, 1 + len(peer), peer)
        if ftype == MSG_ABORT:
            raise ProtocolAbort(peer[0] if peer else 0, peer[1:].decode("utf-8", "replace"))
        if ftype != MSG_MPC:
            self.abort(ABORT_PROTOCOL, "expected MPC_MSG")
            raise ProtocolAbort(ABORT_PROTOCOL, f"unexpected frame type {ftype:#x} in round")
        peer_round = _ROUND.unpack_from(peer)[0]
        if peer_round != self.round:
            self.abort(ABORT_PROTOCOL, f"round {peer_round} != {self.round}")
            raise ProtocolAbort(ABORT_PROTOCOL, "out-of-order round")
        self.round += 1
        return peer[_ROUND.size:]


class QueueChannel(Channel):
    """In-process channel over a pair of unbounded queues."""

    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue",
                 recorder: Recorder | None = None, timeout: float = 120.0):
        super().__init__(recorder)
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout

    def _send_bytes(self, data: bytes) -> None:
        self._outbox.put(data)

    def _recv_frame_bytes(self) -> tuple[int, bytes]:
        try:
            data = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise ProtocolAbort(ABORT_FRAMING, "channel timed out") from None
        if data is None:
            raise ProtocolAbort(ABORT_FRAMING, "channel closed")
        return data[4], data[5:]

    def close(self) -> None:
        self._outbox.put(None)


def queue_pair(recorder1: Recorder | None = None, recorder2: Recorder | None = None,
               timeout: float = 120.0) -> tuple[QueueChannel, QueueChannel]:
    q12: queue.Queue = queue.Queue()
    q21: queue.Queue = queue.Queue()
    return (QueueChannel(q21, q12, recorder1, timeout),
            QueueChannel(q12, q21, recorder2, timeout))


class SocketChannel(Channel):
    """Channel over a connected TCP socket.

    mpc_exchange pumps send and receive concurrently so that two peers
    emitting large same-round messages cannot deadlock on full kernel buffers.
    """

    # frames at or below this size go through plain blocking send-then-recv;
    # the enlarged kernel buffers absorb both directions without deadlock
    FAST_EXCHANGE = 256 * 1024

    def __init__(self, sock: socket.socket, recorder: Recorder | None = None,
                 timeout: float = 120.0):
        super().__init__(recorder)
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        for opt in (socket.SO_SNDBUF, socket.SO_RCVBUF):
            try:
                self.sock.setsockopt(socket.SOL_SOCKET, opt, 4 * 1024 * 1024)
            except OSError:
                pass
        self.sock.settimeout(timeout)
        self._timeout = timeout
        self._buf = bytearray()

    def _send_bytes(self, data: bytes) -> None:
        self.sock.sendall(data)

    def _read_more(self) -> None:
        chunk = self.sock.recv(1 << 18)
        if not chunk:
            raise ProtocolAbort(ABORT_FRAMING, "connection closed mid-frame")
        self._buf += chunk

    def _recv_frame_bytes(self) -> tuple[int, bytes]:
        while len(self._buf) < 4:
            self._read_more()
        length = _LEN.unpack_from(self._buf)[0]
        if length < 1 or length > MAX_FRAME:
            raise ProtocolAbort(ABORT_FRAMING, f"bad frame length {length}")
        while len(self._buf) < 4 + length:
            self._read_more()
        ftype = self._buf[4]
        payload = bytes(self._buf[5:4 + length])
        del self._buf[:4 + length]
        return ftype, payload

    def _exchange_bytes(self, data: bytes) -> tuple[int, bytes]:
        if len(data) <= self.FAST_EXCHANGE:
            self.sock.sendall(data)
            return self._recv_frame_bytes()
        self.sock.setblocking(False)
        sel = selectors.DefaultSelector()
        sel.register(self.sock, selectors.EVENT_READ | selectors.EVENT_WRITE)
        sent = 0
        try:
            while True:
                # stop once everything is sent and one full frame is buffered
                have_frame = (
                    len(self._buf) >= 4
                    and len(self._buf) >= 4 + _LEN.unpack_from(self._buf)[0]
                )
                if sent == len(data) and have_frame:
                    break
                events = sel.select(timeout=self._timeout)
                if not events:
                    raise ProtocolAbort(ABORT_FRAMING, "exchange timed out")
                for _, mask in events:
                    if mask & selectors.EVENT_WRITE and sent < len(data):
                        try:
                            sent += self.sock.send(data[sent:sent + (1 << 18)])
                        except BlockingIOError:
                            pass
                    if mask & selectors.EVENT_READ:
                        try:
                            chunk = self.sock.recv(1 << 18)
                        except BlockingIOError:
                            continue
                        if not chunk:
                            raise ProtocolAbort(ABORT_FRAMING, "connection closed mid-round")
                        self._buf += chunk
        finally:
            sel.close()
            self.sock.settimeout(self._timeout)
        return self._recv_frame_bytes()

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect_channel(host: str, port: int, recorder: Recorder | None = None,
                    timeout: float = 120.0, retry_for: float = 0.0) -> SocketChannel:
    import time

    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return SocketChannel(sock, recorder, timeout)
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
