"""Camera-path types and providers: detection, tracking, expression, pose.

Heavy models live behind provider interfaces. The in-tree implementations
are deterministic stand-ins that work on synthetic frames: the detector
finds uniform-colour rectangular markers on a black background, the
expression classifier keys its distribution on patch mean colour, and
embeddings hash the patch bytes. Identity continuity across frames comes
from a greedy nearest-centroid tracker.
"""

from __future__ import annotations

import base64
import hashlib
from collections import deque
from dataclasses import dataclass

import numpy as np

from .providers import ProviderUnavailable, http_post_json, map_with_deadline

N_LANDMARKS = 15

EMOTION_CLASSES = ("neutral", "happiness", "surprise", "sadness",
                   "anger", "disgust", "fear", "contempt")

COCO_JOINTS = ("nose", "left_eye", "right_eye", "left_ear", "right_ear",
               "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
               "left_wrist", "right_wrist", "left_hip", "right_hip",
               "left_knee", "right_knee", "left_ankle", "right_ankle")


@dataclass
class VideoFrame:
    """One RGB frame; pixels are row-major (height, width, 3) uint8."""

    width: int
    height: int
    pixels: np.ndarray
    originating_time: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixels shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3")


@dataclass
class FaceDetection:
    """Axis-aligned face box with exactly 15 landmark points."""

    bbox: tuple[int, int, int, int]
    landmarks: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        self.bbox = tuple(int(v) for v in self.bbox)
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError("bbox must have positive size")
        self.landmarks = np.asarray(self.landmarks, dtype=float)
        if self.landmarks.shape != (N_LANDMARKS, 2):
            raise ValueError(f"need exactly {N_LANDMARKS} landmarks")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence outside [0, 1]")

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


@dataclass
class FaceTrack:
    detection: FaceDetection
    id: int


@dataclass
class FaceEmbedding:
    """Unit-L2 identity vector."""

    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float).ravel()
        norm = np.linalg.norm(self.vector)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding norm {norm:.8f} is not 1")


@dataclass
class EmotionScores:
    """Expression distribution over the eight classes in EMOTION_CLASSES."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if p.size != len(EMOTION_CLASSES):
            raise ValueError(f"need {len(EMOTION_CLASSES)} probabilities")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        total = p.sum()
        if abs(total - 1.0) > 1e-3:
            raise ValueError(f"probabilities sum to {total:.5f}")
        self.probabilities = p / total

    def top(self) -> str:
        return EMOTION_CLASSES[int(np.argmax(self.probabilities))]


@dataclass
class PoseKeypoints:
    """17 body joints in COCO order, each (x, y, confidence)."""

    keypoints: np.ndarray

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float)
        if self.keypoints.shape != (len(COCO_JOINTS), 3):
            raise ValueError(f"need {len(COCO_JOINTS)} (x, y, conf) joints")
        conf = self.keypoints[:, 2]
        if np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("joint confidence outside [0, 1]")


def crop(frame: VideoFrame, bbox: tuple[int, int, int, int]) -> VideoFrame:
    """Exact pixel copy of the bbox region, clipped to the frame."""
    x, y, w, h = (int(v) for v in bbox)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, frame.width), min(y + h, frame.height)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"bbox {bbox} outside the frame")
    pixels = frame.pixels[y0:y1, x0:x1, :].copy()
    return VideoFrame(x1 - x0, y1 - y0, pixels, frame.originating_time)


# ── providers ─────────────────────────────────────────────────────────────


class FaceDetector:
    def detect(self, frame: VideoFrame) -> list[FaceDetection]:
        raise NotImplementedError


class MarkerFaceDetector(FaceDetector):
    """Finds uniform-colour rectangular markers on a black background.

    Connected components of non-black pixels (4-connectivity) become
    detections, ordered left to right; landmarks are a fixed 5x3 grid
    inside the box. Deterministic by construction.
    """

    def detect(self, frame: VideoFrame) -> list[FaceDetection]:
        mask = np.any(frame.pixels != 0, axis=2)
        boxes = _connected_component_boxes(mask)
        boxes.sort(key=lambda b: (b[0], b[1]))
        return [FaceDetection(bbox=b, landmarks=_grid_landmarks(b))
                for b in boxes]


def _connected_component_boxes(mask: np.ndarray) -> list[tuple[int, int, int, int]]:
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    boxes = []
    for sy, sx in zip(*np.nonzero(mask)):
        if seen[sy, sx]:
            continue
        queue = deque([(sy, sx)])
        seen[sy, sx] = True
        x0 = x1 = sx
        y0 = y1 = sy
        while queue:
            cy, cx = queue.popleft()
            x0, x1 = min(x0, cx), max(x1, cx)
            y0, y1 = min(y0, cy), max(y1, cy)
            for ny, nx in ((cy - 1, cx), (cy + 1, cx),
                           (cy, cx - 1), (cy, cx + 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((ny, nx))
        boxes.append((int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1)))
    return boxes


def _grid_landmarks(bbox: tuple[int, int, int, int]) -> np.ndarray:
    x, y, w, h = bbox
    points = [(x + w * (c + 1) / 6.0, y + h * (r + 1) / 4.0)
              for r in range(3) for c in range(5)]
    return np.asarray(points)


class HttpFaceDetector(FaceDetector):
    """Remote detector over HTTP JSON.

    Request: {"width": int, "height": int, "pixels_b64": base64 RGB bytes}
    Response: {"detections": [{"bbox": [x, y, w, h],
                               "landmarks": [[x, y] * 15],
                               "confidence": float}]}
    """

    def __init__(self, endpoint: str, token: str | None = None,
                 timeout_s: float = 5.0):
        if not endpoint:
            raise ProviderUnavailable("no detector endpoint configured")
        self.endpoint = endpoint
        self.token = token
        self.timeout_s = timeout_s

    def detect(self, frame: VideoFrame) -> list[FaceDetection]:
        reply = http_post_json(
            self.endpoint,
            {"width": frame.width, "height": frame.height,
             "pixels_b64": base64.b64encode(frame.pixels.tobytes()).decode("ascii")},
            timeout_s=self.timeout_s, token=self.token)
        detections = []
        for item in reply.get("detections", []):
            detections.append(FaceDetection(
                bbox=tuple(item["bbox"]),
                landmarks=np.asarray(item["landmarks"], dtype=float),
                confidence=float(item.get("confidence", 1.0))))
        return detections


class ExpressionProvider:
    def classify(self, patch: VideoFrame) -> EmotionScores:
        raise NotImplementedError


class MockExpressionClassifier(ExpressionProvider):
    """Distribution keyed on the patch's mean colour.

    Scores are a fixed linear map of the mean colour's deviation from its
    own grey level, pushed through softmax; an all-grey patch (zero
    deviation) therefore yields the exact uniform distribution.
    """

    _COEFFS = 0.05 * np.array([
        [1.0, -0.5, -0.5],
        [-0.5, 1.0, -0.5],
        [-0.5, -0.5, 1.0],
        [0.7, 0.7, -1.4],
        [-1.4, 0.7, 0.7],
        [0.7, -1.4, 0.7],
        [0.4, -0.4, 0.0],
        [0.0, 0.4, -0.4],
    ])

    def classify(self, patch: VideoFrame) -> EmotionScores:
        mean_rgb = patch.pixels.reshape(-1, 3).astype(float).mean(axis=0)
        deviation = mean_rgb - mean_rgb.mean()
        scores = self._COEFFS @ deviation
        scores -= scores.max()
        expo = np.exp(scores)
        return EmotionScores(expo / expo.sum())


class EmbeddingProvider:
    def embed(self, patch: VideoFrame) -> FaceEmbedding:
        raise NotImplementedError


class MockEmbeddingProvider(EmbeddingProvider):
    """Unit vector seeded by a hash of the patch bytes; repeatable."""

    def __init__(self, dim: int = 128):
        self.dim = dim

    def embed(self, patch: VideoFrame) -> FaceEmbedding:
        digest = hashlib.sha256(patch.pixels.tobytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vector = rng.standard_normal(self.dim)
        return FaceEmbedding(vector / np.linalg.norm(vector))


def match_identity(embedding: FaceEmbedding,
                   gallery: dict[object, FaceEmbedding],
                   threshold: float = 0.5):
    """Best gallery id by cosine similarity, or None below the threshold."""
    best_id = None
    best_sim = threshold
    for identity, candidate in gallery.items():
        sim = float(np.dot(embedding.vector, candidate.vector))
        if sim >= best_sim:
            best_id, best_sim = identity, sim
    return best_id


class PoseEstimator:
    def estimate(self, frame: VideoFrame) -> list[PoseKeypoints]:
        raise NotImplementedError


class MockPoseEstimator(PoseEstimator):
    """One fixed skeleton per marker, scaled to the marker box."""

    # (dx, dy) in face-box units, y growing downward from the box top
    _LAYOUT = np.array([
        (0.5, 0.5), (0.35, 0.35), (0.65, 0.35), (0.2, 0.45), (0.8, 0.45),
        (0.0, 1.3), (1.0, 1.3), (-0.3, 2.2), (1.3, 2.2),
        (-0.4, 3.0), (1.4, 3.0), (0.15, 3.2), (0.85, 3.2),
        (0.1, 4.4), (0.9, 4.4), (0.1, 5.6), (0.9, 5.6),
    ])
    _CONFIDENCE = np.array([0.95, 0.9, 0.9, 0.85, 0.85, 0.8, 0.8, 0.75, 0.75,
                            0.7, 0.7, 0.65, 0.65, 0.6, 0.6, 0.55, 0.55])

    def __init__(self, detector: FaceDetector | None = None):
        self._detector = detector or MarkerFaceDetector()

    def estimate(self, frame: VideoFrame) -> list[PoseKeypoints]:
        out = []
        for det in self._detector.detect(frame):
            x, y, w, h = det.bbox
            pts = np.column_stack([
                x + self._LAYOUT[:, 0] * w,
                y + self._LAYOUT[:, 1] * h,
                self._CONFIDENCE,
            ])
            out.append(PoseKeypoints(pts))
        return out


def classify_faces(frame: VideoFrame, tracks: list[FaceTrack],
                   provider: ExpressionProvider,
                   deadline_s: float = 0.2) -> list[tuple[int, EmotionScores]]:
    """Classify every tracked face; results come back in track order.

    Provider calls for distinct faces run concurrently under the per-call
    deadline; a timed-out or failed call simply yields nothing for that
    face on this frame.
    """
    patches = [crop(frame, t.detection.bbox) for t in tracks]
    scores = map_with_deadline(provider.classify, patches, deadline_s)
    return [(track.id, s) for track, s in zip(tracks, scores) if s is not None]


# ── tracking ──────────────────────────────────────────────────────────────


@dataclass
class TrackerParams:
    """Greedy centroid matcher settings.

    A detection matches a track when their centroid distance is at most
    distance_factor * max(bbox w, h) per frame of gap; tracks survive
    max_gap missed frames before retirement. Ids are never reused.
    """

    distance_factor: float = 0.5
    max_gap: int = 8


@dataclass
class _TrackState:
    detection: FaceDetection
    last_frame: int


class FaceTracker:
    """Assigns stable ids to detections frame over frame."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self._tracks: dict[int, _TrackState] = {}
        self._frame = -1
        self._next_id = 0

    def update(self, detections: list[FaceDetection]) -> list[FaceTrack]:
        self._frame += 1
        assignments = _greedy_match(
            detections,
            {tid: (st.detection, self._frame - st.last_frame)
             for tid, st in self._tracks.items()},
            self.params.distance_factor)
        result: list[FaceTrack] = []
        for idx, det in enumerate(detections):
            tid = assignments.get(idx)
            if tid is None:
                tid = self._next_id
                self._next_id += 1
            self._tracks[tid] = _TrackState(det, self._frame)
            result.append(FaceTrack(det, tid))
        retired = [tid for tid, st in self._tracks.items()
                   if self._frame - st.last_frame > self.params.max_gap]
        for tid in retired:
            del self._tracks[tid]
        return result


def _greedy_match(detections, tracks, distance_factor):
    """Greedy ascending-distance matching; deterministic tie order."""
    candidates = []
    for idx, det in enumerate(detections):
        cx, cy = det.centroid
        for tid, (prev, gap) in tracks.items():
            px, py = prev.centroid
            dist = float(np.hypot(cx - px, cy - py))
            limit = distance_factor * max(prev.bbox[2], prev.bbox[3]) * max(gap, 1)
            if dist <= limit:
                candidates.append((dist, idx, tid))
    candidates.sort()
    taken_dets: set[int] = set()
    taken_tracks: set[int] = set()
    assignments: dict[int, int] = {}
    for dist, idx, tid in candidates:
        if idx in taken_dets or tid in taken_tracks:
            continue
        assignments[idx] = tid
        taken_dets.add(idx)
        taken_tracks.add(tid)
    return assignments


def assign_track_ids(current: list[FaceDetection],
                     previous: list[FaceTrack],
                     params: TrackerParams | None = None) -> list[FaceTrack]:
    """Single-step functional matcher against the previous frame's tracks.

    Unmatched detections get fresh ids above every id seen so far. The
    stateful FaceTracker is the strict-never-reuse variant; use it when
    tracks can disappear and return.
    """
    params = params or TrackerParams()
    assignments = _greedy_match(
        current, {t.id: (t.detection, 1) for t in previous},
        params.distance_factor)
    next_id = max((t.id for t in previous), default=-1) + 1
    result = []
    for idx, det in enumerate(current):
        tid = assignments.get(idx)
        if tid is None:
            tid = next_id
            next_id += 1
        result.append(FaceTrack(det, tid))
    return result
