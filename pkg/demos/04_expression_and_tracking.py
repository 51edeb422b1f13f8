"""
Face tracking and expression scores
===================================

The tracker matches detections to existing tracks by centroid distance,
so identities survive motion and brief dropouts without any appearance
model. Expression scoring runs per track on the cropped patch; the mock
classifier stands in for the proprietary model with a deterministic
eight-way distribution.
"""

import numpy as np

from affectsense.synth import SyntheticVideoSource
from affectsense.vision import (
    EMOTION_CLASSES,
    FaceDetection,
    FaceTracker,
    MarkerFaceDetector,
    MockExpressionClassifier,
    crop,
)

# Part one: identity under motion. Two synthetic faces drift toward each
# other, never closer than the match threshold allows.
tracker = FaceTracker()
rng = np.random.default_rng(1)


def detection(x, y):
    return FaceDetection(bbox=(int(x), int(y), 24, 24),
                         landmarks=np.zeros((15, 2)), confidence=1.0)


print("two drifting faces, one dropout at frame 10:")
a, b = np.array([20.0, 30.0]), np.array([120.0, 50.0])
for i in range(20):
    a += rng.uniform(-4, 6, 2)
    b += rng.uniform(-6, 4, 2)
    detections = [detection(*a), detection(*b)]
    if i == 10:
        detections = [detection(*b)]       # face A misses one frame
    tracks = tracker.update(detections)
    ids = {tuple(t.detection.bbox[:2]): t.id for t in tracks}
    print(f"  frame {i:>2}  " + "  ".join(
        f"id{tid}@{pos}" for pos, tid in sorted(ids.items())))

# Part two: expression scores on the synthetic marker face.
source = SyntheticVideoSource(duration_s=2.0)
detector = MarkerFaceDetector()
classifier = MockExpressionClassifier()

print("per-frame top expression for the marker face:")
for _, frame, t in list(source.frames())[:10]:
    face = detector.detect(frame)[0]
    scores = classifier.classify(crop(frame, face.bbox))
    top = max(range(8), key=scores.probabilities.__getitem__)
    print(f"  t={t:>8} us  {EMOTION_CLASSES[top]:<10} "
          f"p={scores.probabilities[top]:.3f} "
          f"(sum {sum(scores.probabilities):.6f})")
