import numpy as np
import pytest
import scipy.ndimage

from affectsense.vision import (
    COCO_JOINTS,
    EMOTION_CLASSES,
    EmotionScores,
    FaceDetection,
    FaceEmbedding,
    FaceTracker,
    MarkerFaceDetector,
    MockEmbeddingProvider,
    MockExpressionClassifier,
    MockPoseEstimator,
    TrackerParams,
    VideoFrame,
    assign_track_ids,
    classify_faces,
    crop,
    match_identity,
)


def marker_frame(markers, width=160, height=120, t=0):
    """markers: list of (x, y, w, h, (r, g, b)) uniform rectangles."""
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    for x, y, w, h, color in markers:
        pixels[y:y + h, x:x + w, :] = color
    return VideoFrame(width, height, pixels, t)


def detection_at(x, y, w, h):
    frame = marker_frame([(x, y, w, h, (200, 120, 90))])
    dets = MarkerFaceDetector().detect(frame)
    assert len(dets) == 1
    return dets[0]


def test_video_frame_validates_shape():
    with pytest.raises(ValueError):
        VideoFrame(10, 10, np.zeros((5, 10, 3), dtype=np.uint8))


def test_detector_finds_marker_bbox():
    frame = marker_frame([(10, 10, 40, 40, (200, 120, 90))])
    dets = MarkerFaceDetector().detect(frame)
    assert len(dets) == 1
    assert dets[0].bbox == (10, 10, 40, 40)
    assert dets[0].landmarks.shape == (15, 2)
    x, y, w, h = dets[0].bbox
    assert np.all(dets[0].landmarks[:, 0] >= x)
    assert np.all(dets[0].landmarks[:, 0] <= x + w)
    assert np.all(dets[0].landmarks[:, 1] >= y)
    assert np.all(dets[0].landmarks[:, 1] <= y + h)


def test_detector_orders_left_to_right():
    frame = marker_frame([(100, 30, 20, 20, (10, 200, 30)),
                          (20, 50, 24, 24, (200, 10, 30))])
    dets = MarkerFaceDetector().detect(frame)
    assert [d.bbox[0] for d in dets] == [20, 100]


def test_detector_matches_connected_component_oracle():
    rng = np.random.default_rng(12)
    for trial in range(5):
        pixels = np.zeros((60, 80, 3), dtype=np.uint8)
        for _ in range(4):
            x, y = rng.integers(0, 60), rng.integers(0, 40)
            w, h = rng.integers(3, 12), rng.integers(3, 12)
            color = tuple(int(c) for c in rng.integers(40, 255, 3))
            pixels[y:y + h, x:x + w, :] = color
        frame = VideoFrame(80, 60, pixels)
        dets = MarkerFaceDetector().detect(frame)
        mask = np.any(pixels != 0, axis=2)
        labels, count = scipy.ndimage.label(
            mask, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        slices = scipy.ndimage.find_objects(labels)
        oracle = sorted(
            (s[1].start, s[0].start,
             s[1].stop - s[1].start, s[0].stop - s[0].start)
            for s in slices)
        assert sorted(d.bbox for d in dets) == oracle, f"trial {trial}"


def test_crop_is_exact_pixel_copy():
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 255, (40, 50, 3), dtype=np.uint8)
    frame = VideoFrame(50, 40, pixels, 77)
    patch = crop(frame, (5, 8, 12, 9))
    assert patch.width == 12 and patch.height == 9
    assert np.array_equal(patch.pixels, pixels[8:17, 5:17, :])
    assert patch.originating_time == 77


def test_emotion_scores_renormalize_within_tolerance():
    raw = np.full(8, 0.1249)  # sums to 0.9992, inside the 1e-3 band
    scores = EmotionScores(raw)
    assert scores.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def test_emotion_scores_reject_bad_sum():
    with pytest.raises(ValueError):
        EmotionScores(np.full(8, 0.12))  # sums to 0.96
    with pytest.raises(ValueError):
        EmotionScores(np.full(4, 0.25))  # wrong arity


def test_mock_expression_gray_is_uniform():
    patch = VideoFrame(8, 8, np.full((8, 8, 3), 128, dtype=np.uint8))
    scores = MockExpressionClassifier().classify(patch)
    assert np.allclose(scores.probabilities, 0.125, atol=1e-12)


def test_mock_expression_deterministic_and_color_keyed():
    clf = MockExpressionClassifier()
    red = VideoFrame(4, 4, np.full((4, 4, 3), (200, 40, 40), dtype=np.uint8))
    blue = VideoFrame(4, 4, np.full((4, 4, 3), (40, 40, 200), dtype=np.uint8))
    a = clf.classify(red)
    b = clf.classify(red)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert not np.array_equal(a.probabilities,
                              clf.classify(blue).probabilities)
    assert len(EMOTION_CLASSES) == 8


def test_mock_embedding_unit_norm_and_repeatable():
    provider = MockEmbeddingProvider()
    patch = VideoFrame(6, 6, np.full((6, 6, 3), 77, dtype=np.uint8))
    e1 = provider.embed(patch)
    e2 = provider.embed(patch)
    assert e1.vector.shape == (128,)
    assert abs(np.linalg.norm(e1.vector) - 1.0) <= 1e-6
    assert np.array_equal(e1.vector, e2.vector)


def test_face_embedding_rejects_unnormalized():
    with pytest.raises(ValueError):
        FaceEmbedding(np.ones(128))


def test_match_identity_threshold():
    provider = MockEmbeddingProvider()
    alice = provider.embed(VideoFrame(4, 4, np.full((4, 4, 3), 10, dtype=np.uint8)))
    bob = provider.embed(VideoFrame(4, 4, np.full((4, 4, 3), 240, dtype=np.uint8)))
    gallery = {"alice": alice, "bob": bob}
    assert match_identity(alice, gallery, threshold=0.5) == "alice"
    stranger = provider.embed(VideoFrame(4, 4, np.full((4, 4, 3), 99, dtype=np.uint8)))
    assert match_identity(stranger, gallery, threshold=0.5) is None


def test_mock_pose_joints_and_determinism():
    frame = marker_frame([(30, 20, 20, 24, (150, 90, 60))])
    est = MockPoseEstimator()
    poses = est.estimate(frame)
    assert len(poses) == 1
    assert poses[0].keypoints.shape == (17, 3)
    assert len(COCO_JOINTS) == 17
    conf = poses[0].keypoints[:, 2]
    assert np.all(conf >= 0) and np.all(conf <= 1)
    again = est.estimate(frame)
    assert np.array_equal(poses[0].keypoints, again[0].keypoints)


def test_classify_faces_keeps_detection_order():
    frame = marker_frame([(10, 10, 16, 16, (250, 20, 20)),
                          (60, 40, 16, 16, (20, 250, 20)),
                          (120, 60, 16, 16, (20, 20, 250))])
    tracker = FaceTracker()
    tracks = tracker.update(MarkerFaceDetector().detect(frame))
    results = classify_faces(frame, tracks, MockExpressionClassifier())
    assert [tid for tid, _ in results] == [t.id for t in tracks]
    for _, scores in results:
        assert scores.probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_tracker_stationary_face_keeps_id():
    tracker = FaceTracker()
    det = detection_at(10, 10, 30, 30)
    first = tracker.update([det])
    second = tracker.update([detection_at(10, 10, 30, 30)])
    assert first[0].id == second[0].id == 0


def test_tracker_follows_small_motion():
    tracker = FaceTracker()
    tracker.update([detection_at(10, 10, 30, 30)])
    # centroid moves 8 px, threshold is 0.5 * 30 = 15
    moved = tracker.update([detection_at(18, 10, 30, 30)])
    assert moved[0].id == 0


def test_tracker_survives_dropout_within_max_gap():
    tracker = FaceTracker(TrackerParams(max_gap=8))
    tracker.update([detection_at(40, 40, 20, 20)])
    for _ in range(3):
        assert tracker.update([]) == []
    back = tracker.update([detection_at(42, 40, 20, 20)])
    assert back[0].id == 0


def test_tracker_new_id_after_long_gap():
    tracker = FaceTracker(TrackerParams(max_gap=2))
    tracker.update([detection_at(40, 40, 20, 20)])
    for _ in range(5):
        tracker.update([])
    back = tracker.update([detection_at(40, 40, 20, 20)])
    assert back[0].id == 1


def test_tracker_never_reuses_ids():
    tracker = FaceTracker(TrackerParams(max_gap=1))
    tracker.update([detection_at(10, 10, 10, 10),
                    detection_at(100, 10, 10, 10)])
    for _ in range(4):
        tracker.update([])
    fresh = tracker.update([detection_at(10, 10, 10, 10)])
    assert fresh[0].id == 2


def test_tracker_two_faces_never_swap():
    tracker = FaceTracker()
    rng = np.random.default_rng(5)
    ax, bx = 20.0, 120.0
    ids = None
    for _ in range(100):
        ax += float(rng.uniform(-2, 2))
        bx += float(rng.uniform(-2, 2))
        tracks = tracker.update([detection_at(int(ax), 30, 16, 16),
                                 detection_at(int(bx), 70, 16, 16)])
        by_pos = sorted(tracks, key=lambda t: t.detection.bbox[0])
        if ids is None:
            ids = [t.id for t in by_pos]
        assert [t.id for t in by_pos] == ids


def test_assign_track_ids_functional_step():
    prev_frame_tracks = FaceTracker().update([detection_at(10, 10, 30, 30)])
    stepped = assign_track_ids(
        [detection_at(14, 10, 30, 30), detection_at(120, 80, 20, 20)],
        prev_frame_tracks)
    assert stepped[0].id == prev_frame_tracks[0].id
    assert stepped[1].id == max(t.id for t in prev_frame_tracks) + 1


def test_face_detection_requires_15_landmarks():
    with pytest.raises(ValueError):
        FaceDetection((0, 0, 4, 4), np.zeros((10, 2)))
