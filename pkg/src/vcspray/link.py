"""Message transports: an in-memory pair for tests and a TCP stream link.

A link is anything with ``send(msg)`` and ``recv(timeout) -> Message | None``.
Both transports push real encoded frames through the wire codec.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from typing import Callable

from .wire import FrameParser, Message, decode_frame, encode_frame


class _Endpoint:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, sysid: int, compid: int,
                 drop: Callable[[Message], bool] | None):
        self._inbox = inbox
        self._outbox = outbox
        self._seq = 0
        self._drop = drop
        self.sysid = sysid
        self.compid = compid
        self.sent: list[Message] = []

    def send(self, msg: Message) -> None:
        msg = Message(msg.name, dict(msg.fields), self._seq, self.sysid, self.compid)
        self._seq = (self._seq + 1) & 0xFF
        self.sent.append(msg)
        if self._drop is not None and self._drop(msg):
            return
        self._outbox.put(encode_frame(msg))

    def recv(self, timeout: float | None = None) -> Message | None:
        try:
            return decode_frame(self._inbox.get(timeout=timeout))
        except queue.Empty:
            return None


def link_pair(drop_a: Callable[[Message], bool] | None = None,
              drop_b: Callable[[Message], bool] | None = None,
              ids_a: tuple[int, int] = (255, 190), ids_b: tuple[int, int] = (1, 1)):
    """Two connected endpoints. ``drop_a`` filters messages sent *by* endpoint a
    (return True to lose the message), likewise ``drop_b``."""
    q_ab: queue.Queue = queue.Queue()
    q_ba: queue.Queue = queue.Queue()
    a = _Endpoint(q_ba, q_ab, *ids_a, drop_a)
    b = _Endpoint(q_ab, q_ba, *ids_b, drop_b)
    return a, b


class StreamLink:
    """Frames over a connected stream socket (single owner)."""

    def __init__(self, sock: socket.socket, sysid: int = 255, compid: int = 190):
        self.sock = sock
        self.sysid = sysid
        self.compid = compid
        self._seq = 0
        self._parser = FrameParser()
        self._pending: list[Message] = []
        self._lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0, **kw) -> StreamLink:
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, **kw)

    @property
    def dropped(self) -> int:
        return self._parser.dropped

    def send(self, msg: Message) -> None:
        with self._lock:
            out = Message(msg.name, dict(msg.fields), self._seq, self.sysid, self.compid)
            self._seq = (self._seq + 1) & 0xFF
            self.sock.sendall(encode_frame(out))

    def recv(self, timeout: float | None = None) -> Message | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._pending:
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not data:
                raise ConnectionError("link closed by peer")
            self._pending.extend(self._parser.feed(data))
        return self._pending.pop(0)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
