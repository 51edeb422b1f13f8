"""Tail live emotion metrics from a running daemon.

Usage: python3 tail_metrics.py [host:port] [token]

Start a session with the bus enabled, then point this at it:

    affectd run --config session.json
    python3 tail_metrics.py 127.0.0.1:7310
"""

import sys

from affectsense_client import ConnectionLost, connect_and_subscribe

url = sys.argv[1] if len(sys.argv) > 1 else "127.0.0.1:7310"
token = sys.argv[2] if len(sys.argv) > 2 else None

feed = connect_and_subscribe(url, ["metrics.row", "face.*"], token)
print(f"subscribed to {url}; ctrl-c to stop")
try:
    for topic, t, payload in feed:
        seconds = t / 1_000_000
        if topic == "metrics.row":
            faces = payload.get("faces", [])
            hr = next((f["hr_bpm"] for f in faces if "hr_bpm" in f), None)
            print(f"{seconds:8.2f}s  row: faces={payload.get('face_count', 0)}"
                  f"  vad={payload.get('vad_fraction', 0.0):.2f}"
                  + (f"  hr={hr:.1f} bpm" if hr is not None else ""))
        elif topic == "face.expression":
            probs = payload["expression"]
            print(f"{seconds:8.2f}s  face {payload['id']}: "
                  f"max expression p={max(probs):.2f}")
        else:
            print(f"{seconds:8.2f}s  {topic}: {payload}")
except KeyboardInterrupt:
    feed.close()
except ConnectionLost:
    print("daemon went away; done")
