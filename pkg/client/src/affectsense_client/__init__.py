"""Python subscriber for the affectsense metrics bus."""

from .client import (
    AuthRejected,
    BusMessage,
    ClientSubscription,
    ConnectionLost,
    ProtocolError,
    connect_and_subscribe,
)

__all__ = [
    "AuthRejected",
    "BusMessage",
    "ClientSubscription",
    "ConnectionLost",
    "ProtocolError",
    "connect_and_subscribe",
]
