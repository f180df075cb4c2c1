"""Golden-angle radial directions and retrospective assignment of spokes to frames."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# 111.246 degrees; successive spoke orientations (mod pi) step by this amount.
GOLDEN_ANGLE = math.pi * (math.sqrt(5.0) - 1.0) / 2.0

BINNING_MODES = ("sequential", "interleaved")


class InvalidScheduleError(ValueError):
    pass


class SpokeEntry(NamedTuple):
    spoke_index: int
    angle: float
    frame_index: int
    cardiac_phase: float


@dataclass(frozen=True)
class SpokeSchedule:
    """Acquisition-ordered spokes with their angle and cardiac frame.

    ``angles[k]`` and ``frames[k]`` describe spoke ``k``. Frame ``f`` (0-based)
    is reconstructed at cardiac phase ``(f + 1) / n_frames``.
    """

    n_frames: int
    spokes_per_frame: int
    angles: np.ndarray
    frames: np.ndarray
    binning: str = "sequential"

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        frames = np.asarray(self.frames, dtype=np.int64)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "frames", frames)
        if angles.shape != frames.shape or angles.ndim != 1:
            raise InvalidScheduleError("angles and frames must be 1-D and of equal length")
        if len(angles) != self.n_frames * self.spokes_per_frame:
            raise InvalidScheduleError(
                f"{len(angles)} spokes cannot fill {self.n_frames} frames "
                f"of {self.spokes_per_frame} spokes"
            )
        if np.any((angles < 0) | (angles >= math.pi)):
            raise InvalidScheduleError("angles must lie in [0, pi)")
        if np.any((frames < 0) | (frames >= self.n_frames)):
            raise InvalidScheduleError("frame index out of range")
        counts = np.bincount(frames, minlength=self.n_frames)
        if np.any(counts != self.spokes_per_frame):
            raise InvalidScheduleError("every frame must hold exactly spokes_per_frame spokes")

    @property
    def n_spokes(self) -> int:
        return len(self.angles)

    def phase(self, frame_index) -> np.ndarray | float:
        return (np.asarray(frame_index) + 1) / self.n_frames

    @property
    def phases(self) -> np.ndarray:
        return (self.frames + 1) / self.n_frames

    @property
    def entries(self) -> list[SpokeEntry]:
        return [
            SpokeEntry(k, float(a), int(f), (int(f) + 1) / self.n_frames)
            for k, (a, f) in enumerate(zip(self.angles, self.frames))
        ]

    def spokes_in_frame(self, frame_index: int) -> np.ndarray:
        return np.flatnonzero(self.frames == frame_index)

    def to_records(self) -> list[dict]:
        return [
            {"index": k, "angle_rad": float(a), "frame": int(f)}
            for k, (a, f) in enumerate(zip(self.angles, self.frames))
        ]

    @classmethod
    def from_records(cls, records, n_frames, spokes_per_frame, binning="sequential"):
        records = sorted(records, key=lambda r: r["index"])
        if [r["index"] for r in records] != list(range(len(records))):
            raise InvalidScheduleError("spoke indices must be 0..n-1")
        return cls(
            n_frames=n_frames,
            spokes_per_frame=spokes_per_frame,
            angles=np.array([r["angle_rad"] for r in records], dtype=np.float64),
            frames=np.array([r["frame"] for r in records], dtype=np.int64),
            binning=binning,
        )


def golden_angle_sequence(n_spokes: int, start_angle: float = 0.0) -> np.ndarray:
    """Angles ``(start_angle + k * GOLDEN_ANGLE) mod pi`` for ``k = 0 .. n_spokes-1``."""
    if n_spokes < 1:
        raise ValueError("n_spokes must be >= 1")
    k = np.arange(n_spokes, dtype=np.float64)
    angles = np.mod(start_angle + k * GOLDEN_ANGLE, math.pi)
    # fmod can round up to exactly pi for values just below a multiple of pi
    angles[angles >= math.pi] = 0.0
    return angles


def bin_spokes(angles, n_frames: int, spokes_per_frame: int,
               binning: str = "sequential") -> SpokeSchedule:
    """Assign acquisition-ordered spokes to cardiac frames.

    ``sequential`` puts spoke ``k`` in frame ``k // spokes_per_frame``;
    ``interleaved`` puts it in frame ``k % n_frames``.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.ndim != 1 or len(angles) != n_frames * spokes_per_frame:
        raise InvalidScheduleError(
            f"expected {n_frames * spokes_per_frame} angles, got {angles.size}"
        )
    k = np.arange(len(angles))
    if binning == "sequential":
        frames = k // spokes_per_frame
    elif binning == "interleaved":
        frames = k % n_frames
    else:
        raise InvalidScheduleError(f"unknown binning mode {binning!r}")
    return SpokeSchedule(n_frames, spokes_per_frame, angles, frames, binning)


def golden_angle_schedule(n_frames: int, spokes_per_frame: int, start_angle: float = 0.0,
                          binning: str = "sequential") -> SpokeSchedule:
    angles = golden_angle_sequence(n_frames * spokes_per_frame, start_angle)
    return bin_spokes(angles, n_frames, spokes_per_frame, binning)


def orientation_gaps(angles) -> np.ndarray:
    """Gaps between sorted spoke orientations on the circle of period pi."""
    a = np.sort(np.mod(np.asarray(angles, dtype=np.float64), math.pi))
    return np.diff(np.concatenate([a, [a[0] + math.pi]]))
