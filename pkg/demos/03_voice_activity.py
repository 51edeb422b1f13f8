"""
Voice activity and speech segments
==================================

The gate compares each 20 ms frame's energy against an adaptive noise
floor; a hangover keeps it open briefly after speech stops so trailing
consonants survive. Active frames are then fused into speech segments.
"""

from affectsense.audio import EnergyVad, SpeechSegmenter
from affectsense.synth import SyntheticAudioSource

# Three tone bursts over near-silence. The frames in between exercise
# the floor adaptation.
source = SyntheticAudioSource(
    duration_s=8.0,
    bursts=((0.8, 1.9, 180.0), (3.2, 3.35, 240.0), (5.0, 6.4, 150.0)))

vad = EnergyVad()
segmenter = SpeechSegmenter()

timeline = []
segments = []
for _, buf, t in source.buffers():
    flag = vad.process(buf.samples, t)
    timeline.append(flag.active)
    segments += segmenter.push(buf.samples, flag.active, t)
segments += segmenter.flush()

# One character per 20 ms frame: '#' speaking, '.' silent.
print("VAD timeline (100 ms per group):")
line = "".join("#" if a else "." for a in timeline)
for i in range(0, len(line), 50):
    print(f"  {i * 20 / 1000.0:5.2f} s  {line[i:i + 50]}")

print(f"{sum(timeline)} of {len(timeline)} frames active")

# The hangover stretches even the 150 ms middle burst past the 200 ms
# minimum, so all three bursts emit segments; runs that still end up
# shorter are dropped and accounted for in dropped_short_us.
print("segments:")
for seg in segments:
    length = (seg.end_time - seg.start_time) / 1_000_000
    print(f"  {seg.start_time / 1e6:5.2f} .. {seg.end_time / 1e6:5.2f} s "
          f"({length:.2f} s, {len(seg.samples)} samples)")
print(f"dropped-as-too-short: {segmenter.dropped_short_us / 1e6:.2f} s")
