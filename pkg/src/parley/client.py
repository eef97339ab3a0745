"""Client SDK: session management, request correlation, and the mention loop.

A Session owns one TCP connection authenticated as one agent. ``call`` is
thread-safe; any number of requests may be in flight, matched by id, so a
long wait_for_mentions does not block other calls. Reconnection is never
automatic: a lost connection fails all pending calls with CONNECTION_LOST
and the caller decides what to do.

``InProcessClient`` exposes the same call surface directly against a
Switchboard for embedded use (the deterministic harness, unit tests).
"""

from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from . import wire
from .errors import (
    CONNECT_FAILED,
    CONNECTION_LOST,
    ProtocolError,
)
from .hub import Switchboard
from .model import Message, message_from_wire

log = logging.getLogger("parley.client")


@dataclass(frozen=True)
class Outbound:
    """One send a mention handler wants performed after it returns."""

    thread: str
    kind: str
    body: str
    mentions: tuple[str, ...] = ()


class Session:
    """One authenticated connection to a coordination server."""

    def __init__(self, sock: socket.socket, agent: str) -> None:
        self.agent = agent
        self._sock = sock
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._next_id = 1
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- connection management ---------------------------------------------------

    @classmethod
    def connect(
        cls,
        endpoint: tuple[str, int] | str,
        agent: str,
        *,
        description: str | None = None,
        role: str | None = None,
        observer: bool = False,
        timeout: float = 10.0,
    ) -> "Session":
        """Dial, perform the hello, and return a live session.

        With ``description`` set the hello carries a registration payload
        (auto-register); without it the agent must already be registered or
        the server answers HELLO_REJECTED.
        """
        if isinstance(endpoint, str):
            host, _, port = endpoint.rpartition(":")
            endpoint = (host, int(port))
        try:
            sock = socket.create_connection(endpoint, timeout=timeout)
        except OSError as exc:
            raise ProtocolError(CONNECT_FAILED, f"{endpoint}: {exc}") from None
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        session = cls(sock, agent)
        params: dict[str, Any] = {"agent": agent}
        if description is not None:
            params["description"] = description
            params["role"] = role or "worker"
        if observer:
            params["observer"] = True
        try:
            session.call("hello", params)
        except ProtocolError:
            session.close()
            raise
        return session

    def close(self) -> None:
        with self._state_lock:
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass

    def _read_loop(self) -> None:
        buf = b""
        try:
            while True:
                chunk = self._sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if line.strip():
                        self._dispatch_frame(line)
        except OSError:
            pass
        self._fail_pending()

    def _dispatch_frame(self, line: bytes) -> None:
        try:
            frame = wire.decode_frame(line)
        except ProtocolError:
            log.warning("dropping malformed frame from server")
            return
        slot = None
        with self._state_lock:
            slot = self._pending.pop(frame.get("id"), None)
        if slot is None:
            log.warning("response for unknown request id %r", frame.get("id"))
            return
        slot["frame"] = frame
        slot["event"].set()

    def _fail_pending(self) -> None:
        with self._state_lock:
            self._closed = True
            pending = list(self._pending.values())
            self._pending.clear()
        for slot in pending:
            slot["frame"] = None
            slot["event"].set()

    # -- calls --------------------------------------------------------------------

    def call(self, op: str, params: Mapping[str, Any] | None = None) -> Any:
        """Issue one request and block for its response.

        Server error codes are re-raised verbatim as ProtocolError; transport
        failure raises CONNECTION_LOST.
        """
        slot = {"event": threading.Event(), "frame": None}
        with self._state_lock:
            if self._closed:
                raise ProtocolError(CONNECTION_LOST, "session is closed")
            req_id = self._next_id
            self._next_id += 1
            self._pending[req_id] = slot
        data = wire.encode_frame({"id": req_id, "op": op, "params": dict(params or {})})
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            with self._state_lock:
                self._pending.pop(req_id, None)
            self._fail_pending()
            raise ProtocolError(CONNECTION_LOST, str(exc)) from None
        slot["event"].wait()
        frame = slot["frame"]
        if frame is None:
            raise ProtocolError(CONNECTION_LOST, "connection lost mid-call")
        if frame.get("ok"):
            return frame.get("result")
        err = frame.get("error") or {}
        raise ProtocolError(err.get("code", "BAD_REQUEST"), err.get("message", ""))

    # -- convenience wrappers -------------------------------------------------------

    def send(
        self, thread: str, kind: str, body: str, mentions: Iterable[str] = ()
    ) -> Message:
        result = self.call(
            "send_message",
            {"thread": thread, "kind": kind, "body": body, "mentions": list(mentions)},
        )
        return message_from_wire(result)

    def wait_for_mentions(
        self, *, thread: str | None = None, timeout_ms: int | None = None
    ) -> list[Message]:
        params: dict[str, Any] = {}
        if thread is not None:
            params["thread"] = thread
        if timeout_ms is not None:
            params["timeout_ms"] = timeout_ms
        return [message_from_wire(m) for m in self.call("wait_for_mentions", params)]


class InProcessClient:
    """Session-shaped facade over a Switchboard, no sockets involved."""

    def __init__(self, hub: Switchboard, agent: str) -> None:
        self.hub = hub
        self.agent = agent

    def call(self, op: str, params: Mapping[str, Any] | None = None) -> Any:
        return wire.dispatch(self.hub, self.agent, op, dict(params or {}))

    def send(
        self, thread: str, kind: str, body: str, mentions: Iterable[str] = ()
    ) -> Message:
        return self.hub.send_message(thread, self.agent, kind, body, list(mentions))

    def close(self) -> None:  # interface parity
        pass


Client = Session | InProcessClient

HANDLER_ERROR_PREFIX = "handler-error: "


class MentionLoop:
    """Repeatedly wait for mentions and hand each to a handler, in order.

    The handler receives one Message and returns an iterable of Outbound
    sends, all performed before the next wait. A handler exception is caught,
    logged, and reported to the originating thread as a system message
    ("handler-error: ..."), when that thread is still open. ``stop`` makes
    the loop exit within one idle timeout.
    """

    def __init__(
        self,
        session: Session,
        handler: Callable[[Message], Iterable[Outbound] | None],
        *,
        idle_timeout_ms: int = 1000,
        thread_filter: str | None = None,
    ) -> None:
        self.session = session
        self.handler = handler
        self.idle_timeout_ms = idle_timeout_ms
        self.thread_filter = thread_filter
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "MentionLoop":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                batch = self.session.wait_for_mentions(
                    thread=self.thread_filter, timeout_ms=self.idle_timeout_ms
                )
            except ProtocolError as exc:
                if exc.code == CONNECTION_LOST:
                    log.info("mention loop for %s: connection lost", self.session.agent)
                    return
                raise
            for msg in batch:
                self._handle_one(msg)

    def _handle_one(self, msg: Message) -> None:
        try:
            outs = self.handler(msg) or ()
        except Exception as exc:
            log.warning(
                "handler error for %s on %s#%d: %s",
                self.session.agent, msg.thread, msg.seq, exc,
            )
            try:
                self.session.send(
                    msg.thread, "system", f"{HANDLER_ERROR_PREFIX}{exc}"
                )
            except ProtocolError:
                pass  # thread closed or otherwise unreportable
            return
        for out in outs:
            self.session.send(out.thread, out.kind, out.body, out.mentions)
