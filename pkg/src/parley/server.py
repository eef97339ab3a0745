"""TCP server: one connection per session, newline-delimited JSON frames.

A session is bound to one agent identity by its hello frame. Ordinary
operations are served inline on the session's reader thread;
wait_for_mentions runs on its own thread so responses can overtake it,
matched by request id. Writes share a per-session lock.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import Any

from . import wire
from .errors import (
    BAD_REQUEST,
    HELLO_REJECTED,
    ProtocolError,
)
from .hub import Switchboard

log = logging.getLogger("parley.server")


class _Session:
    def __init__(self, server: "ParleyServer", sock: socket.socket, peer: str) -> None:
        self.server = server
        self.sock = sock
        self.peer = peer
        self.agent: str | None = None
        self.observer = False
        self.write_lock = threading.Lock()
        self.alive = True

    def send_bytes(self, data: bytes) -> None:
        with self.write_lock:
            try:
                self.sock.sendall(data)
            except OSError:
                self.alive = False

    def run(self) -> None:
        hub = self.server.hub
        try:
            buf = b""
            while self.alive and not self.server.closing:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                if len(buf) > wire.MAX_FRAME_BYTES:
                    self.send_bytes(wire.error_frame(0, BAD_REQUEST, "frame too large"))
                    break
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    self.handle_line(hub, line)
        except OSError:
            pass
        finally:
            self.alive = False
            try:
                self.sock.close()
            except OSError:
                pass
            log.info("session closed %s (agent=%s)", self.peer, self.agent)

    def handle_line(self, hub: Switchboard, line: bytes) -> None:
        req_id = 0
        try:
            frame = wire.decode_frame(line)
            raw_id = frame.get("id", 0)
            if not isinstance(raw_id, int) or isinstance(raw_id, bool) or raw_id < 0:
                raise ProtocolError(BAD_REQUEST, "id must be a non-negative integer")
            req_id = raw_id
            op = frame.get("op")
            if not isinstance(op, str):
                raise ProtocolError(BAD_REQUEST, "op must be a string")
            params = frame.get("params", {})
            if not isinstance(params, dict):
                raise ProtocolError(BAD_REQUEST, "params must be an object")

            if self.agent is None:
                if op != "hello":
                    raise ProtocolError(BAD_REQUEST, "first frame must be hello")
                self.handle_hello(hub, req_id, params)
                return
            if op == "hello":
                raise ProtocolError(BAD_REQUEST, "hello already completed")
            if op not in wire.OPS:
                raise ProtocolError(BAD_REQUEST, f"unknown op {op!r}")
            if self.observer and op not in wire.READ_ONLY_OPS:
                raise ProtocolError(
                    BAD_REQUEST, f"observer sessions may not call {op!r}"
                )

            if op == "wait_for_mentions":
                agent = self.agent
                threading.Thread(
                    target=self._serve_wait,
                    args=(hub, req_id, agent, dict(params)),
                    daemon=True,
                ).start()
                return
            result = wire.dispatch(hub, self.agent, op, params)
            self.send_bytes(wire.ok_frame(req_id, result))
        except ProtocolError as exc:
            self.send_bytes(wire.error_frame(req_id, exc.code, exc.message))
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("internal error serving %s", self.peer)
            self.send_bytes(wire.error_frame(req_id, BAD_REQUEST, f"internal: {exc}"))

    def _serve_wait(self, hub: Switchboard, req_id: int, agent: str, params: dict) -> None:
        try:
            result = wire.dispatch(hub, agent, "wait_for_mentions", params)
            self.send_bytes(wire.ok_frame(req_id, result))
        except ProtocolError as exc:
            self.send_bytes(wire.error_frame(req_id, exc.code, exc.message))

    def handle_hello(self, hub: Switchboard, req_id: int, params: dict) -> None:
        agent = params.get("agent")
        if not isinstance(agent, str):
            raise ProtocolError(BAD_REQUEST, "hello requires an agent id")
        observer = params.get("observer") is True
        description = params.get("description")
        role = params.get("role")
        if observer:
            # Read-only operator session; identity is not registered.
            self.agent = agent
            self.observer = True
        elif hub.is_registered(agent):
            if description is not None:
                # A registration payload for an existing id is a duplicate
                # registration attempt, not a reconnect.
                hub.register_agent(agent, description, role or "worker")
            self.agent = agent
        elif description is not None:
            hub.register_agent(
                agent,
                description if isinstance(description, str) else "",
                role if isinstance(role, str) else "worker",
            )
            self.agent = agent
        else:
            raise ProtocolError(HELLO_REJECTED, f"unknown agent {agent!r}")
        self.send_bytes(wire.ok_frame(req_id, {"agent": agent}))
        log.info("session %s bound to agent %s%s", self.peer, agent,
                 " (observer)" if observer else "")


class ParleyServer:
    """Accept loop plus session threads around a Switchboard."""

    def __init__(
        self,
        hub: Switchboard | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self.hub = hub or Switchboard()
        self.host = host
        self.port = port
        self.closing = False
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(64)
        self.port = listener.getsockname()[1]
        self._listener = listener
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        log.info("listening on %s:%d", self.host, self.port)

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self.closing:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            peer = f"{addr[0]}:{addr[1]}"
            log.info("accepted session %s", peer)
            session = _Session(self, sock, peer)
            threading.Thread(target=session.run, daemon=True).start()

    def stop(self) -> None:
        self.closing = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        self.hub.shutdown()

    def serve_forever(self) -> None:  # pragma: no cover - exercised via CLI
        assert self._accept_thread is not None
        try:
            while self._accept_thread.is_alive():
                self._accept_thread.join(timeout=0.5)
        except KeyboardInterrupt:
            log.info("shutting down")
        finally:
            self.stop()
