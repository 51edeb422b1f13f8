"""Live pub/sub broadcast over newline-delimited JSON on TCP.

Wire contract:
  client -> server, first line:  {"type":"subscribe","topics":[...]}
                                 (plus "token" when the server requires one)
  server -> client, per message: {"topic":...,"t":<us>,"payload":...}
  server -> client, on error:    {"type":"error","code":<string>}
One JSON document per line, UTF-8, no pretty-printing. Topic patterns use
shell-style wildcards ("face.*"). Subscribers that fall behind their
bounded queue are disconnected rather than slowing publishers down.
"""

from __future__ import annotations

import fnmatch
import json
import queue
import socket
import threading

from .sinks import sanitize

DEFAULT_QUEUE_CAPACITY = 1024
MAX_SUBSCRIBE_BYTES = 65536
SUBSCRIBE_TIMEOUT_S = 10.0


class NotServing(RuntimeError):
    """publish() was called while the server is not accepting clients."""


class SchemaViolation(ValueError):
    """Publish to an unregistered topic or with an invalid payload."""


class _Client:
    __slots__ = ("sock", "patterns", "queue", "alive")

    def __init__(self, sock, patterns, capacity):
        self.sock = sock
        self.patterns = patterns
        self.queue: queue.Queue = queue.Queue(maxsize=capacity)
        self.alive = True

    def matches(self, topic: str) -> bool:
        return any(fnmatch.fnmatchcase(topic, p) for p in self.patterns)


def _error_line(code: str) -> bytes:
    return (json.dumps({"type": "error", "code": code},
                       sort_keys=True, separators=(",", ":")) + "\n").encode()


class BusServer:
    """Broadcasts registered topics to socket subscribers exactly once each.

    Topics must be registered before anything publishes to them; an
    optional per-topic validator vets payloads. Dict payloads are run
    through the strict sanitizer so raw data cannot leave on the wire.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 token: str | None = None,
                 queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.host = host
        self.port = port
        self.token = token
        self.queue_capacity = queue_capacity
        self._topics: dict[str, object] = {}
        self._clients: list[_Client] = []
        self._lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._serving = False
        self.published = 0
        self.disconnected_slow = 0

    def register_topic(self, topic: str, validator=None) -> None:
        self._topics[topic] = validator

    @property
    def topics(self) -> tuple[str, ...]:
        return tuple(self._topics)

    @property
    def address(self) -> tuple[str, int]:
        if self._listener is None:
            raise NotServing("server not started")
        return self._listener.getsockname()[:2]

    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def start(self) -> tuple[str, int]:
        if self._serving:
            raise RuntimeError("already serving")
        listener = socket.create_server((self.host, self.port))
        listener.settimeout(0.2)
        self._listener = listener
        self._serving = True
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="bus-accept", daemon=True)
        self._accept_thread.start()
        return self.address

    def stop(self) -> None:
        self._serving = False
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5.0)
            self._accept_thread = None
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        with self._lock:
            clients, self._clients = self._clients, []
        for client in clients:
            self._shutdown_client(client)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
        return False

    def publish(self, topic: str, payload, t: int) -> None:
        if not self._serving:
            raise NotServing("bus server is not running")
        if topic not in self._topics:
            raise SchemaViolation(f"topic {topic!r} is not registered")
        validator = self._topics[topic]
        if validator is not None and not validator(payload):
            raise SchemaViolation(f"payload rejected for topic {topic!r}")
        if isinstance(payload, dict):
            payload = sanitize(payload, mode="strict")
        try:
            line = (json.dumps({"topic": topic, "t": int(t),
                                "payload": payload},
                               sort_keys=True, separators=(",", ":"))
                    + "\n").encode()
        except (TypeError, ValueError) as err:
            raise SchemaViolation(
                f"payload for {topic!r} is not JSON: {err}") from err
        with self._lock:
            self.published += 1
            slow = []
            for client in self._clients:
                if not client.matches(topic):
                    continue
                try:
                    client.queue.put_nowait(line)
                except queue.Full:
                    slow.append(client)
            for client in slow:
                self._clients.remove(client)
                self.disconnected_slow += 1
        for client in slow:
            self._shutdown_client(client)

    # ── connection handling ──────────────────────────────────────────────

    def _accept_loop(self) -> None:
        while self._serving:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._handshake, args=(sock,),
                             name="bus-handshake", daemon=True).start()

    def _handshake(self, sock: socket.socket) -> None:
        sock.settimeout(SUBSCRIBE_TIMEOUT_S)
        try:
            line = self._read_line(sock)
            request = json.loads(line)
            if (not isinstance(request, dict)
                    or request.get("type") != "subscribe"
                    or not isinstance(request.get("topics"), list)
                    or not request["topics"]
                    or not all(isinstance(p, str)
                               for p in request["topics"])):
                raise ValueError("malformed subscribe")
        except (ValueError, OSError):
            self._refuse(sock, "bad_subscribe")
            return
        if self.token is not None and request.get("token") != self.token:
            self._refuse(sock, "auth_rejected")
            return
        sock.settimeout(None)
        client = _Client(sock, tuple(request["topics"]), self.queue_capacity)
        with self._lock:
            if not self._serving:
                self._refuse(sock, "not_serving")
                return
            self._clients.append(client)
        threading.Thread(target=self._writer_loop, args=(client,),
                         name="bus-writer", daemon=True).start()

    @staticmethod
    def _read_line(sock: socket.socket) -> bytes:
        chunks = bytearray()
        while b"\n" not in chunks:
            if len(chunks) > MAX_SUBSCRIBE_BYTES:
                raise ValueError("subscribe line too long")
            data = sock.recv(4096)
            if not data:
                raise ValueError("connection closed during subscribe")
            chunks.extend(data)
        return bytes(chunks.split(b"\n", 1)[0])

    @staticmethod
    def _refuse(sock: socket.socket, code: str) -> None:
        try:
            sock.sendall(_error_line(code))
        except OSError:
            pass
        finally:
            sock.close()

    def _writer_loop(self, client: _Client) -> None:
        while True:
            line = client.queue.get()
            if line is None or not client.alive:
                break
            try:
                client.sock.sendall(line)
            except OSError:
                break
        self._drop_client(client)

    def _drop_client(self, client: _Client) -> None:
        with self._lock:
            if client in self._clients:
                self._clients.remove(client)
        client.alive = False
        client.sock.close()

    def _shutdown_client(self, client: _Client) -> None:
        client.alive = False
        try:
            client.queue.put_nowait(None)
        except queue.Full:
            pass
        try:
            client.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        client.sock.close()
