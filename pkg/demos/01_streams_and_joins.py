"""
Streams, joins, and windows
===========================

The engine moves timestamped messages between components. This script
builds the smallest interesting graph: two sources at different rates,
a nearest-neighbour join, and a one-second window over the faster one.
"""

from affectsense.streamcore import Pipeline, WindowSpec

pipeline = Pipeline()

# A 10 Hz "sensor" and a 4 Hz "sensor". Times are integer microseconds.
fast = pipeline.create_stream("demo.fast", "raw_event")
slow = pipeline.create_stream("demo.slow", "raw_event")

pipeline.add_source(
    "fast-sensor",
    ((fast, float(i), i * 100_000) for i in range(30)),
    outputs=[fast])
pipeline.add_source(
    "slow-sensor",
    ((slow, float(100 + i), i * 250_000) for i in range(12)),
    outputs=[slow])

# join: every fast message picks the nearest slow message within 150 ms.
# The joined message keeps the left (fast) timestamp.
paired = pipeline.join(fast, slow, tolerance=150_000, name="demo.paired")
pairs = pipeline.collect(paired, name="pair-collect")

# window: the fast stream bucketed into half-open 1 s windows.
windowed = pipeline.window(fast, WindowSpec(length=1_000_000,
                                            hop=1_000_000),
                           name="demo.windows")
buckets = pipeline.collect(windowed, name="window-collect")

report = pipeline.run()

print("first five joined pairs (fast value, slow value):")
for (f, s), t in pairs[:5]:
    print(f"  t={t:>9} us   fast={f:<6} slow={s}")

# windows are emitted when they close, stamped with their end time
print("windowed means of the fast stream:")
for values, t in buckets:
    mean = sum(values) / len(values) if values else float("nan")
    print(f"  window closing {t:>9} us   n={len(values):<3} mean={mean}")

print("per-stream accounting:")
for name, counts in sorted(report.streams.items()):
    print(f"  {name:<14} emitted={counts.emitted:<3} "
          f"delivered={counts.delivered}")
