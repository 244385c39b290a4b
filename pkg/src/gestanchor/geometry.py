"""Similarity-frame normalization of 68-point facial landmark tracks.

Each frame is mapped by one similarity transform (rotation, uniform
scale, translation) into a canonical frame: the two eye centroids sit on
the x-axis at distance 1, their midpoint at the origin, and the mouth
centroid below the eye line. The transform group excludes reflections,
so mirrored faces normalize to different outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFace, MalformedInput, NotNormalized

N_LANDMARKS = 68
LEFT_EYE = slice(36, 42)
RIGHT_EYE = slice(42, 48)
MOUTH = slice(48, 60)
N_MOUTH = 12
MIN_PUPIL_DIST = 1e-12


@dataclass(frozen=True)
class LandmarkSequence:
    """A fixed-rate track of 68-point 2-D face landmarks."""

    frames: np.ndarray  # (T, 68, 2)
    frame_rate_hz: float
    speaker_id: str = ""
    utterance_id: str = ""
    normalized: bool = False

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (N_LANDMARKS, 2):
            raise MalformedInput(
                f"expected a (T, {N_LANDMARKS}, 2) landmark array, got {frames.shape}"
            )
        if frames.shape[0] == 0:
            raise MalformedInput("landmark sequence has no frames")
        if not np.isfinite(frames).all():
            raise MalformedInput("landmark coordinates must be finite")
        if not (np.isfinite(self.frame_rate_hz) and self.frame_rate_hz > 0):
            raise MalformedInput(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class MouthSequence:
    """The 12 outer-mouth landmarks (48..59) of a normalized sequence."""

    frames: np.ndarray  # (T, 12, 2)
    frame_rate_hz: float
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (N_MOUTH, 2):
            raise MalformedInput(f"expected a (T, {N_MOUTH}, 2) mouth array, got {frames.shape}")
        if not np.isfinite(frames).all():
            raise MalformedInput("mouth coordinates must be finite")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]


def eye_centroids(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pupil proxies: centroids of the two 6-point eye contours."""
    return frames[:, LEFT_EYE].mean(axis=1), frames[:, RIGHT_EYE].mean(axis=1)


def normalize_sequence(seq: LandmarkSequence) -> LandmarkSequence:
    """Map every frame into the canonical eye-anchored frame.

    The left-eye contour centroid (indices 36..41) is sent to (-1/2, 0)
    and the right one to (+1/2, 0); if the mouth centroid then lies above
    the eye line the frame is rotated by 180 degrees, which keeps the
    mouth at negative y regardless of the input's orientation.
    """
    frames = seq.frames
    eye_a, eye_b = eye_centroids(frames)
    u = eye_b - eye_a
    dist = np.hypot(u[:, 0], u[:, 1])
    if np.any(dist < MIN_PUPIL_DIST):
        bad = int(np.argmax(dist < MIN_PUPIL_DIST))
        raise DegenerateFace(f"inter-pupil distance below {MIN_PUPIL_DIST} at frame {bad}")

    mid = 0.5 * (eye_a + eye_b)
    cos = u[:, 0] / dist
    sin = u[:, 1] / dist
    shifted = frames - mid[:, None, :]
    x = shifted[..., 0]
    y = shifted[..., 1]
    nx = (cos[:, None] * x + sin[:, None] * y) / dist[:, None]
    ny = (-sin[:, None] * x + cos[:, None] * y) / dist[:, None]
    out = np.stack([nx, ny], axis=-1)

    flip = out[:, MOUTH, 1].mean(axis=1) > 0
    out[flip] *= -1.0

    return LandmarkSequence(
        out,
        frame_rate_hz=seq.frame_rate_hz,
        speaker_id=seq.speaker_id,
        utterance_id=seq.utterance_id,
        normalized=True,
    )


def extract_mouth(seq: LandmarkSequence) -> MouthSequence:
    """Project a normalized sequence onto the 12 outer-mouth landmarks."""
    if not seq.normalized:
        raise NotNormalized("extract_mouth requires a sequence produced by normalize_sequence")
    return MouthSequence(
        seq.frames[:, MOUTH].copy(),
        frame_rate_hz=seq.frame_rate_hz,
        speaker_id=seq.speaker_id,
        utterance_id=seq.utterance_id,
    )
