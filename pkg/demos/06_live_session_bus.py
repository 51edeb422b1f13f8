"""
A full session with a live metrics bus
======================================

Everything at once: synthetic camera and microphone, the analysis graph,
per-second row aggregation, an NDJSON log, and the TCP bus another
process would subscribe to. Here the subscriber is just a thread with a
socket speaking the line protocol.
"""

import json
import socket
import tempfile
import threading

from affectsense.bus import BusServer
from affectsense.cli import render_metrics
from affectsense.session import Session
from affectsense.synth import SyntheticAudioSource, SyntheticVideoSource

bus = BusServer()
bus.start()
print(f"bus listening on {bus.address[0]}:{bus.address[1]}")

received = []


def subscriber():
    sock = socket.create_connection(bus.address)
    sock.sendall(b'{"type": "subscribe", "topics": ["*"]}\n')
    with sock.makefile("rb") as fh:
        for line in fh:
            received.append(json.loads(line))


listener = threading.Thread(target=subscriber)
listener.start()

log = tempfile.NamedTemporaryFile(suffix=".ndjson", delete=False)
session = Session(
    duration_s=6.0,
    video=SyntheticVideoSource(duration_s=6.0),
    audio=SyntheticAudioSource(duration_s=6.0,
                               bursts=((1.0, 2.2, 200.0),)),
    store_path=log.name,
    bus=bus)
result = session.run()
bus.stop()
listener.join()

print(f"session wrote {len(result.rows)} rows to {log.name}")
print(f"bus published {bus.published} messages; "
      f"subscriber saw {len(received)}")

by_topic = {}
for message in received:
    by_topic[message["topic"]] = by_topic.get(message["topic"], 0) + 1
print("messages per topic:")
for topic, count in sorted(by_topic.items()):
    print(f"  {topic:<18} {count}")

print("\nlast row rendered for a console:")
print(render_metrics(result.rows[-1]))
