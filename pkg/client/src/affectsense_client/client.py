"""Subscriber side of the metrics bus wire protocol.

The protocol is newline-delimited JSON over plain TCP. The client sends
exactly one subscribe line and then only reads; every server line is one
message carrying topic, originating time, and payload. Decoding is plain
json.loads, so a payload survives the wire value-identically.

One connection per ClientSubscription; any number of subscriptions can
run in one process. A dropped connection is retried with exponential
backoff before ConnectionLost surfaces.
"""

from __future__ import annotations

import json
import socket
import time
from fnmatch import fnmatchcase
from typing import Any, Callable, Iterator, NamedTuple


class AuthRejected(ConnectionError):
    """The server refused the subscribe token."""


class ConnectionLost(ConnectionError):
    """The connection dropped and every reconnect attempt failed."""


class ProtocolError(ConnectionError):
    """The server sent something outside the documented protocol."""


class BusMessage(NamedTuple):
    """One decoded message; unpacks as (topic, originating_time, payload)."""

    topic: str
    originating_time: int
    payload: Any


def _parse_url(url: str) -> tuple[str, int]:
    if url.startswith("tcp://"):
        url = url[len("tcp://"):]
    host, _, port = url.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port or tcp://host:port, got {url!r}")
    return host, int(port)


class ClientSubscription:
    """One live subscription: a URL, topic patterns, and a message feed.

    Iterate it (or call messages()) to pull BusMessage triples in arrival
    order; alternatively pass on_message and call run() to pump them into
    a callback. close() ends iteration cleanly from any thread.
    """

    def __init__(self, url: str, topics: list[str], token: str | None = None,
                 *, on_message: Callable[[BusMessage], None] | None = None,
                 max_retries: int = 5, initial_backoff: float = 0.2,
                 max_backoff: float = 5.0, connect_timeout: float = 5.0,
                 sleep: Callable[[float], None] = time.sleep):
        if not topics:
            raise ValueError("subscribe to at least one topic pattern")
        self.url = url
        self.topics = list(topics)
        self.token = token
        self.on_message = on_message
        self.max_retries = max_retries
        self.initial_backoff = initial_backoff
        self.max_backoff = max_backoff
        self.connect_timeout = connect_timeout
        self._sleep = sleep
        self._sock: socket.socket | None = None
        self._file = None
        self._closed = False
        self._ever_connected = False
        self._retry_budget = max_retries
        self._backoff_now = initial_backoff

    # ── connection handling ─────────────────────────────────────────────

    def _connect_once(self) -> None:
        host, port = _parse_url(self.url)
        sock = socket.create_connection((host, port),
                                        timeout=self.connect_timeout)
        sock.settimeout(None)
        request: dict[str, Any] = {"type": "subscribe",
                                   "topics": self.topics}
        if self.token is not None:
            request["token"] = self.token
        sock.sendall((json.dumps(request) + "\n").encode("utf-8"))
        self._sock = sock
        self._file = sock.makefile("rb")
        self._ever_connected = True

    def _connect_with_retry(self) -> None:
        backoff = self.initial_backoff
        attempts = 0
        while True:
            try:
                self._connect_once()
                return
            except OSError as err:
                self._teardown()
                if attempts >= self.max_retries:
                    raise ConnectionLost(
                        f"could not reach {self.url} after "
                        f"{attempts} retries") from err
                attempts += 1
                self._sleep(backoff)
                backoff = min(backoff * 2.0, self.max_backoff)

    def _teardown(self) -> None:
        if self._file is not None:
            try:
                self._file.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._file = None
        self._sock = None

    def close(self) -> None:
        """Stop the feed; a blocked or future next() raises StopIteration."""
        self._closed = True
        self._teardown()

    # ── message feed ────────────────────────────────────────────────────

    def _decode(self, line: bytes) -> BusMessage:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise ProtocolError(f"undecodable line: {line[:80]!r}") from err
        if obj.get("type") == "error":
            code = obj.get("code")
            if code == "auth_rejected":
                raise AuthRejected("server rejected the subscribe token")
            raise ProtocolError(f"server error: {code}")
        if not {"topic", "t", "payload"} <= obj.keys():
            raise ProtocolError(f"malformed message: {line[:80]!r}")
        topic = obj["topic"]
        if not any(fnmatchcase(topic, pattern) for pattern in self.topics):
            raise ProtocolError(
                f"message topic {topic!r} matches no subscribed pattern")
        return BusMessage(topic, int(obj["t"]), obj["payload"])

    def __iter__(self) -> Iterator[BusMessage]:
        return self

    def __next__(self) -> BusMessage:
        while True:
            if self._closed:
                raise StopIteration
            if self._file is None and not self._ever_connected:
                self._connect_with_retry()
            if self._file is not None:
                try:
                    line = self._file.readline()
                except (OSError, ValueError):
                    line = b""
                if self._closed:
                    raise StopIteration
                if line:
                    # a delivered message restores the reconnect budget
                    self._retry_budget = self.max_retries
                    self._backoff_now = self.initial_backoff
                    return self._decode(line)
                # EOF: the server hung up, or dropped us as a slow consumer
                self._teardown()
            if self._retry_budget <= 0:
                raise ConnectionLost(
                    f"lost {self.url} and exhausted "
                    f"{self.max_retries} reconnect attempts")
            self._retry_budget -= 1
            self._sleep(self._backoff_now)
            self._backoff_now = min(self._backoff_now * 2.0,
                                    self.max_backoff)
            try:
                self._connect_once()
            except OSError:
                self._teardown()

    def messages(self) -> Iterator[BusMessage]:
        return iter(self)

    def run(self) -> None:
        """Pump the feed into on_message until closed or the server goes."""
        if self.on_message is None:
            raise ValueError("run() needs an on_message callback")
        for message in self:
            self.on_message(message)


def connect_and_subscribe(url: str, topics: list[str],
                          token: str | None = None,
                          **options) -> ClientSubscription:
    """Connect, send the subscribe line, and return the message iterator.

    The subscription yields BusMessage triples (topic, originating_time,
    payload) in arrival order, reconnecting with backoff on drops.
    Raises AuthRejected for a bad token, ConnectionLost when the server
    stays unreachable.
    """
    subscription = ClientSubscription(url, topics, token, **options)
    subscription._connect_with_retry()
    return subscription
