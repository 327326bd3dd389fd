"""Ordered, reliable point-to-point channels between protocol roles.

Every ordered ``sender -> receiver`` pair is its own FIFO channel with a
per-channel sequence counter. Receivers verify that sequence numbers strictly
increase and surface any delivery problem as :class:`ChannelFailure`.
Every delivered message is appended to the receiver's inbox log, which the
audit helpers inspect.
"""

from __future__ import annotations

import queue
import socket
import threading
from collections import defaultdict

from ..errors import ChannelFailure, HandshakeMismatch
from .messages import (
    Handshake,
    HandshakeAck,
    Message,
    decode_frame,
    encode_handshake,
    encode_message,
    read_frame,
)

DEFAULT_TIMEOUT = 300.0


class Transport:
    """Shared bookkeeping for concrete transports."""

    def __init__(self, session_id: str = "session", timeout: float = DEFAULT_TIMEOUT):
        self.session_id = session_id
        self.timeout = timeout
        self._lock = threading.Lock()
        self._queues: dict[tuple[str, str], queue.Queue] = defaultdict(queue.Queue)
        self._next_seq: dict[tuple[str, str], int] = defaultdict(int)
        self._last_seen: dict[tuple[str, str], int] = {}
        self._failed: dict[tuple[str, str], str] = {}
        self.inbox: dict[str, list[Message]] = defaultdict(list)
        self.bytes_sent = 0

    def _queue(self, sender: str, receiver: str) -> queue.Queue:
        with self._lock:
            return self._queues[(sender, receiver)]

    def _stamp(self, sender: str, receiver: str, payload) -> Message:
        with self._lock:
            seq = self._next_seq[(sender, receiver)]
            self._next_seq[(sender, receiver)] = seq + 1
        return Message(self.session_id, seq, sender, receiver, payload)

    def _deliver(self, msg: Message):
        with self._lock:
            self.inbox[msg.receiver].append(msg)
        self._queue(msg.sender, msg.receiver).put(msg)

    def fail_channel(self, sender: str, receiver: str, reason: str = "link down"):
        """Mark a channel dead; later sends and receives on it raise."""
        with self._lock:
            self._failed[(sender, receiver)] = reason
        self._queue(sender, receiver).put(None)

    def send(self, sender: str, receiver: str, payload) -> Message:
        raise NotImplementedError

    def recv(self, receiver: str, sender: str, timeout: float | None = None) -> Message:
        key = (sender, receiver)
        if key in self._failed:
            raise ChannelFailure(f"{sender}->{receiver}: {self._failed[key]}")
        try:
            msg = self._queue(sender, receiver).get(timeout=self.timeout if timeout is None else timeout)
        except queue.Empty:
            raise ChannelFailure(f"timed out waiting for {sender}->{receiver}") from None
        if msg is None:
            raise ChannelFailure(f"{sender}->{receiver}: {self._failed.get(key, 'closed')}")
        if msg.session_id != self.session_id:
            raise ChannelFailure(f"message from foreign session {msg.session_id!r}")
        last = self._last_seen.get(key, -1)
        if msg.sequence_no <= last:
            raise ChannelFailure(f"{sender}->{receiver}: sequence {msg.sequence_no} after {last}")
        self._last_seen[key] = msg.sequence_no
        return msg

    def close(self):
        pass


class InProcTransport(Transport):
    """Queue-backed channels inside one process.

    With ``wire_check=True`` every message is serialised to its TCP frame and
    decoded again before delivery, exercising the wire codec end to end.
    """

    def __init__(self, session_id: str = "session", timeout: float = DEFAULT_TIMEOUT, wire_check: bool = False):
        super().__init__(session_id, timeout)
        self.wire_check = wire_check

    def send(self, sender, receiver, payload) -> Message:
        if (sender, receiver) in self._failed:
            raise ChannelFailure(f"{sender}->{receiver}: {self._failed[(sender, receiver)]}")
        msg = self._stamp(sender, receiver, payload)
        if self.wire_check:
            frame = encode_message(msg)
            self.bytes_sent += len(frame)
            msg = decode_frame(frame)
        self._deliver(msg)
        return msg


class TcpTransport(Transport):
    """Length-prefixed frames over TCP, one listening socket per local role.

    Each outbound connection opens with a :class:`Handshake` (session id,
    claimed role, ring bits, fractional bits, config hash); the listener
    answers with a :class:`HandshakeAck` and drops the connection on any
    mismatch. Several transports (for example one per process) are wired
    together with :meth:`connect_peers`.
    """

    def __init__(
        self,
        local_roles,
        session_id: str,
        ring_bits: int,
        frac_bits: int,
        config_hash: bytes,
        host: str = "127.0.0.1",
        timeout: float = DEFAULT_TIMEOUT,
    ):
        super().__init__(session_id, timeout)
        self.handshake = Handshake(session_id, "", ring_bits, frac_bits, config_hash)
        self.addresses: dict[str, tuple[str, int]] = {}
        self.rejections: list[str] = []
        self._servers = []
        self._conns: dict[tuple[str, str], socket.socket] = {}
        self._send_locks: dict[tuple[str, str], threading.Lock] = defaultdict(threading.Lock)
        self._closing = False
        for role in local_roles:
            srv = socket.create_server((host, 0))
            self.addresses[role] = srv.getsockname()[:2]
            self._servers.append(srv)
            threading.Thread(target=self._accept_loop, args=(role, srv), daemon=True).start()

    def connect_peers(self, addresses: dict[str, tuple[str, int]]):
        self.addresses.update(addresses)

    # -- listener side ------------------------------------------------------

    def _accept_loop(self, role: str, srv: socket.socket):
        while not self._closing:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(role, conn), daemon=True).start()

    def _serve(self, role: str, conn: socket.socket):
        with conn:
            try:
                hello = decode_frame(read_frame(conn) or b"")
            except ChannelFailure:
                return
            reason = self._check_handshake(hello)
            if reason:
                self.rejections.append(reason)
            conn.sendall(encode_handshake(HandshakeAck(reason == "", reason)))
            if reason:
                return
            peer = hello.role
            while True:
                try:
                    frame = read_frame(conn)
                except (ChannelFailure, OSError) as exc:
                    if not self._closing:
                        self.fail_channel(peer, role, str(exc))
                    return
                if frame is None:
                    return
                try:
                    msg = decode_frame(frame)
                except ChannelFailure as exc:
                    self.fail_channel(peer, role, str(exc))
                    return
                if msg.sender != peer or msg.receiver != role:
                    self.fail_channel(peer, role, "message routed on the wrong connection")
                    return
                self._deliver(msg)

    def _check_handshake(self, hello) -> str:
        mine = self.handshake
        if not isinstance(hello, Handshake):
            return "expected handshake"
        if hello.session_id != mine.session_id:
            return f"session id mismatch ({hello.session_id!r})"
        if (hello.ring_bits, hello.frac_bits) != (mine.ring_bits, mine.frac_bits):
            return f"ring parameter mismatch (L={hello.ring_bits}, B={hello.frac_bits})"
        if hello.config_hash != mine.config_hash:
            return "config hash mismatch"
        if not hello.role:
            return "missing role claim"
        return ""

    # -- sender side ----------------------------------------------------------

    def _connection(self, sender: str, receiver: str) -> socket.socket:
        key = (sender, receiver)
        conn = self._conns.get(key)
        if conn is not None:
            return conn
        if receiver not in self.addresses:
            raise ChannelFailure(f"no address for role {receiver!r}")
        try:
            conn = socket.create_connection(self.addresses[receiver], timeout=self.timeout)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            hs = Handshake(
                self.handshake.session_id, sender, self.handshake.ring_bits,
                self.handshake.frac_bits, self.handshake.config_hash,
            )
            conn.sendall(encode_handshake(hs))
            ack = decode_frame(read_frame(conn) or b"")
        except OSError as exc:
            raise ChannelFailure(f"cannot reach {receiver}: {exc}") from exc
        if not isinstance(ack, HandshakeAck) or not ack.ok:
            conn.close()
            reason = ack.reason if isinstance(ack, HandshakeAck) else "bad reply"
            raise HandshakeMismatch(f"{receiver} rejected session: {reason}")
        self._conns[key] = conn
        return conn

    def send(self, sender, receiver, payload) -> Message:
        key = (sender, receiver)
        if key in self._failed:
            raise ChannelFailure(f"{sender}->{receiver}: {self._failed[key]}")
        with self._send_locks[key]:
            conn = self._connection(sender, receiver)
            msg = self._stamp(sender, receiver, payload)
            frame = encode_message(msg)
            try:
                conn.sendall(frame)
            except OSError as exc:
                raise ChannelFailure(f"send {sender}->{receiver} failed: {exc}") from exc
            self.bytes_sent += len(frame)
        return msg

    def close(self):
        self._closing = True
        for srv in self._servers:
            srv.close()
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
