"""Ego-frame alignment, coordinate standardization, and context selection."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "AgentClass",
    "Trajectory",
    "Pose2",
    "ContextSet",
    "Standardizer",
    "normalize_angle",
    "rotation",
    "ego_transform",
    "ego_inverse",
    "ego_align_windows",
    "pose_from_history",
    "select_context",
    "context_features",
    "fit_standardizer",
]

HEADING_EPS = 1e-6


class AgentClass(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    CYCLIST = "cyclist"


def _finite_points(points, what: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"{what} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contain non-finite values")
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped 2-D positions of a single agent.

    ``times`` are integer frame indices with a constant positive stride.
    """

    agent_id: str
    times: np.ndarray
    positions: np.ndarray
    agent_class: AgentClass = AgentClass.PEDESTRIAN

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        pos = _finite_points(self.positions, f"positions of agent {self.agent_id}")
        if times.ndim != 1 or len(times) != len(pos):
            raise DataError(f"agent {self.agent_id}: times/positions length mismatch")
        if len(times) < 2:
            raise DataError(f"agent {self.agent_id}: trajectory needs at least 2 steps")
        steps = np.diff(times)
        if steps[0] <= 0 or np.any(steps != steps[0]):
            raise DataError(f"agent {self.agent_id}: times must increase with a constant stride")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "agent_class", AgentClass(self.agent_class))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def stride(self) -> int:
        return int(self.times[1] - self.times[0])


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return float(np.pi - np.mod(np.pi - theta, 2.0 * np.pi))


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    position: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(2)
        if not (np.all(np.isfinite(p)) and np.isfinite(self.heading)):
            raise DataError("pose must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def R(self) -> np.ndarray:
        return rotation(self.heading)


def ego_transform(pose: Pose2, points) -> np.ndarray:
    """Map world points into the ego frame of ``pose``: ``R^T (q - p)``."""
    pts = _finite_points(points)
    # row-vector form of R^T (q - p)
    return (pts - pose.position) @ pose.R


def ego_inverse(pose: Pose2, points) -> np.ndarray:
    """Map ego-frame points back to the world frame: ``R q + p``."""
    pts = _finite_points(points)
    return pts @ pose.R.T + pose.position


def pose_from_history(history) -> Pose2:
    """Pose at the newest history sample.

    Heading follows the last displacement; a displacement shorter than
    ``HEADING_EPS`` gives heading 0.
    """
    h = _finite_points(history, "history")
    if len(h) < 2:
        return Pose2(h[-1], 0.0)
    step = h[-1] - h[-2]
    heading = float(np.arctan2(step[1], step[0])) if np.hypot(*step) >= HEADING_EPS else 0.0
    return Pose2(h[-1], heading)


def ego_align_windows(windows, newest: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ego alignment of ``(n, L, 2)`` windows.

    Each window is expressed in the frame of its sample ``newest`` with the
    heading of the step ``newest - 1 -> newest``. Returns the aligned
    windows, the origins ``(n, 2)`` and the headings ``(n,)``.
    """
    w = np.asarray(windows, dtype=float)
    origin = w[:, newest]
    if newest >= 1:
        step = origin - w[:, newest - 1]
        heading = np.where(np.hypot(step[:, 0], step[:, 1]) >= HEADING_EPS,
                           np.arctan2(step[:, 1], step[:, 0]), 0.0)
    else:
        heading = np.zeros(len(w))
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    rel = w - origin[:, None, :]
    aligned = np.stack([c * rel[..., 0] + s * rel[..., 1],
                        -s * rel[..., 0] + c * rel[..., 1]], axis=-1)
    return aligned, origin, heading


@dataclass(frozen=True)
class ContextSet:
    """At most ``capacity`` points within ``radius`` of a query, nearest first."""

    points: np.ndarray
    radius: float
    capacity: int
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def count(self) -> int:
        return len(self.points)


def select_context(query, candidates, r: float, N: int) -> ContextSet:
    if r <= 0 or N < 1:
        raise ValueError("select_context needs r > 0 and N >= 1")
    q = np.asarray(query, dtype=float).reshape(2)
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if len(cand) == 0:
        return ContextSet(np.zeros((0, 2)), float(r), int(N), np.zeros(0))
    dist = np.hypot(*(cand - q).T)
    inside = np.flatnonzero(dist <= r)
    # stable sort keeps input order among equal distances
    order = inside[np.argsort(dist[inside], kind="stable")][:N]
    return ContextSet(cand[order].copy(), float(r), int(N), dist[order])


def context_features(points, N: int) -> np.ndarray:
    """Flatten up to ``N`` points into ``3N`` values: (x, y, presence) per slot, zero padded."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)[:N]
    out = np.zeros((N, 3))
    out[: len(pts), :2] = pts
    out[: len(pts), 2] = 1.0
    return out.ravel()


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        std = np.asarray(self.std, dtype=float).reshape(2)
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise DataError(f"standardizer std must be strictly positive, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls) -> "Standardizer":
        return cls(np.zeros(2), np.ones(2))

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.mean) / self.std

    def unapply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))

    def matches(self, other: "Standardizer", tol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.mean, other.mean, rtol=0, atol=tol)
            and np.allclose(self.std, other.std, rtol=0, atol=tol)
        )


def fit_standardizer(trajectories: Iterable[Trajectory] | Sequence) -> Standardizer:
    """Per-axis mean and population standard deviation of all positions.

    Accepts trajectories or bare ``(n, 2)`` position arrays.
    """
    chunks = [t.positions if isinstance(t, Trajectory) else np.asarray(t, float).reshape(-1, 2)
              for t in trajectories]
    if not chunks or sum(len(c) for c in chunks) == 0:
        raise DataError("fit_standardizer needs at least one position")
    pos = _finite_points(np.concatenate(chunks), "training positions")
    mean = pos.mean(axis=0)
    std = pos.std(axis=0)
    for axis, s in zip("xy", std):
        if not s > 0:
            raise DataError(f"zero variance along the {axis} axis; cannot standardize")
    return Standardizer(mean, std)
