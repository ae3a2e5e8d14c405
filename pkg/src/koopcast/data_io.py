"""Trajectory file ingestion, windowing, dataset splits and synthetic generators.

File format: whitespace-separated ``frame agent_id x y`` rows, optional header
line, ``#`` comments allowed. An optional sidecar ``<file>.json`` may carry
``{"stride": int, "units": "m", "agent_class": "pedestrian", "dt": float}``.
"""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .geometry import AgentClass, Trajectory

SYNTH_KINDS = ("constant_velocity", "circular_arc", "unicycle_sine", "bimodal_fork")


@dataclass(frozen=True)
class RawRecord:
    frame: int
    agent_id: str
    x: float
    y: float


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_sidecar(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{side}: invalid sidecar JSON ({exc})") from exc


def _parse_frame(token: str) -> int:
    value = float(token)
    if not math.isfinite(value) or value != int(value):
        raise ValueError(f"frame {token!r} is not an integer")
    return int(value)


def read_records(path) -> list[RawRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if not records and parts[0].lower() in ("frame", "frame_id", "t"):
            continue
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns (frame agent_id x y), got {len(parts)}")
        try:
            frame = _parse_frame(parts[0])
            x, y = float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{path}:{lineno}: non-finite coordinate")
        agent = parts[1]
        try:
            agent = str(_parse_frame(agent))  # "3.0" and "3" name the same agent
        except ValueError:
            pass
        records.append(RawRecord(frame, agent, x, y))
    if not records:
        raise DataError(f"{path}: file contains no data rows")
    return records


def _infer_stride(by_agent: dict) -> int:
    diffs = Counter()
    for rows in by_agent.values():
        frames = sorted(r.frame for r in rows)
        diffs.update(b - a for a, b in zip(frames, frames[1:]) if b > a)
    if not diffs:
        return 1
    return min(diffs.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def load_tsv(path, agent_class: AgentClass | str | None = None, stride: int | None = None
             ) -> list[Trajectory]:
    """Group rows by agent, sort by frame and split at frame gaps.

    Segments after the first gap get ids ``<agent>:1``, ``<agent>:2``, ...
    Single-sample segments are dropped. The stride comes from the argument,
    the sidecar, or the most common frame step, in that order.
    """
    meta = read_sidecar(path)
    records = read_records(path)
    cls = AgentClass(agent_class or meta.get("agent_class", AgentClass.PEDESTRIAN))
    by_agent: dict = defaultdict(list)
    for r in records:
        by_agent[r.agent_id].append(r)
    stride = int(stride or meta.get("stride") or _infer_stride(by_agent))
    if stride < 1:
        raise DataError(f"{path}: stride must be positive")
    out = []
    for agent, rows in by_agent.items():
        rows = sorted(rows, key=lambda r: r.frame)
        frames = [r.frame for r in rows]
        if len(set(frames)) != len(frames):
            raise DataError(f"{path}: agent {agent} has duplicate frames")
        segments, current = [], [rows[0]]
        for prev, row in zip(rows, rows[1:]):
            if row.frame - prev.frame == stride:
                current.append(row)
            else:
                segments.append(current)
                current = [row]
        segments.append(current)
        for k, seg in enumerate(s for s in segments if len(s) >= 2):
            out.append(Trajectory(
                agent if k == 0 else f"{agent}:{k}",
                np.array([r.frame for r in seg]),
                np.array([[r.x, r.y] for r in seg]),
                cls,
            ))
    if not out:
        raise DataError(f"{path}: no trajectory with at least 2 consecutive frames")
    return out


def write_tsv(trajectories: Sequence[Trajectory], path, sidecar: bool = True) -> None:
    """Write in the canonical format; floats use ``repr`` so a reload is exact."""
    rows = []
    for t in trajectories:
        for f, (x, y) in zip(t.times, t.positions):
            rows.append((int(f), t.agent_id, repr(float(x)), repr(float(y))))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = ["frame agent_id x y"] + [f"{f} {a} {x} {y}" for f, a, x, y in rows]
    Path(path).write_text("\n".join(lines) + "\n")
    if sidecar and trajectories:
        meta = {"stride": trajectories[0].stride, "units": "m",
                "agent_class": trajectories[0].agent_class.value}
        sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_context_points(path) -> dict[int, np.ndarray]:
    """Optional lane/context file of ``frame x y`` rows, grouped by frame."""
    grouped: dict = defaultdict(list)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            if lineno == 1:
                continue
            raise DataError(f"{path}:{lineno}: expected 3 columns (frame x y)")
        try:
            grouped[_parse_frame(parts[0])].append((float(parts[1]), float(parts[2])))
        except ValueError as exc:
            if lineno == 1:
                continue
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return {f: np.array(v) for f, v in grouped.items()}


def sliding_windows(traj: Trajectory, H: int, P: int, stride: int = 1
                    ) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(history (H, 2), future (P, 2))`` pairs at offsets ``0, stride, 2*stride, ...``."""
    if stride < 1:
        raise ConfigError("window stride must be >= 1")
    pos = traj.positions
    return [(pos[o:o + H].copy(), pos[o + H:o + H + P].copy())
            for o in range(0, len(pos) - H - P + 1, stride)]


def window_arrays(trajectories, H: int, P: int, stride: int = 1
                  ) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
    """Stacked histories ``(n, H, 2)``, futures ``(n, P, 2)`` and ``(agent_id, start frame)`` keys."""
    hist, fut, keys = [], [], []
    for t in trajectories:
        for k, (h, f) in enumerate(sliding_windows(t, H, P, stride)):
            hist.append(h)
            fut.append(f)
            keys.append((t.agent_id, int(t.times[k * stride])))
    if not hist:
        return np.zeros((0, H, 2)), np.zeros((0, P, 2)), []
    return np.stack(hist), np.stack(fut), keys


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    val: list
    test: list
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0


def split_dataset(trajectories: Sequence[Trajectory], ratios=(0.8, 0.1, 0.1), seed: int = 0
                  ) -> DatasetSplit:
    """Split whole trajectories (never windows) with a seeded permutation."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    n = len(trajectories)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    pick = lambda idx: [trajectories[i] for i in sorted(idx)]  # noqa: E731
    return DatasetSplit(pick(order[:n_train]), pick(order[n_train:n_train + n_val]),
                        pick(order[n_train + n_val:]), ratios, seed)


@dataclass(frozen=True)
class DatasetStats:
    agents: int
    trajectories: int
    windows: int
    mean_speed: float
    stride: int
    extra: dict = field(default_factory=dict)


def dataset_stats(trajectories: Sequence[Trajectory], H: int, P: int, stride: int = 1) -> DatasetStats:
    """Counts and mean speed (distance per frame stride)."""
    steps = [np.hypot(*np.diff(t.positions, axis=0).T) for t in trajectories]
    speeds = np.concatenate(steps) if steps else np.zeros(0)
    windows = sum(len(sliding_windows(t, H, P, stride)) for t in trajectories)
    agents = {t.agent_id.split(":")[0] for t in trajectories}
    return DatasetStats(len(agents), len(trajectories), windows,
                        float(speeds.mean()) if len(speeds) else 0.0,
                        trajectories[0].stride if trajectories else 0)


# -- synthetic oracle datasets ------------------------------------------------

def _traj(i: int, pos: np.ndarray, noise: float, rng) -> Trajectory:
    if noise > 0:
        pos = pos + noise * rng.standard_normal(pos.shape)
    return Trajectory(str(i), np.arange(len(pos)), pos)


def synth_generate(kind: str, n: int, noise: float = 0.0, seed: int = 0, length: int = 24,
                   **options) -> list[Trajectory]:
    """Reproducible synthetic trajectories for oracle tests.

    Options per kind:

    * ``constant_velocity``: ``speed_range=(0.5, 1.5)``, ``extent=10``
    * ``circular_arc``: ``radius=5``, ``step_angle=0.1`` (direction chosen at random);
      ``radius_range`` / ``step_range`` draw them per trajectory instead
    * ``unicycle_sine``: ``speed=1``, ``amplitude=0.6``, ``omega=0.3``
    * ``bimodal_fork``: ``fork_step=8``, ``turn=pi/4``, ``speed=1``, ``lateral=0.05``;
      straight along +x until ``fork_step`` then left or right with equal probability.
    """
    if n < 1 or noise < 0:
        raise ConfigError("synth_generate needs n >= 1 and noise >= 0")
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    k = np.arange(length)[:, None]
    out = []
    for i in range(n):
        if kind == "constant_velocity":
            lo, hi = options.get("speed_range", (0.5, 1.5))
            extent = options.get("extent", 10.0)
            start = rng.uniform(-extent, extent, 2)
            theta = rng.uniform(-np.pi, np.pi)
            v = rng.uniform(lo, hi) * np.array([np.cos(theta), np.sin(theta)])
            pos = start + k * v
        elif kind == "circular_arc":
            radius = options.get("radius", 5.0)
            dphi = options.get("step_angle", 0.1)
            if "radius_range" in options:
                radius = rng.uniform(*options["radius_range"])
            if "step_range" in options:
                dphi = rng.uniform(*options["step_range"])
            dphi *= rng.choice([-1.0, 1.0])
            center = rng.uniform(-10, 10, 2)
            phi = rng.uniform(-np.pi, np.pi) + dphi * k[:, 0]
            pos = center + radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        elif kind == "unicycle_sine":
            speed = options.get("speed", 1.0)
            amp = options.get("amplitude", 0.6)
            omega = options.get("omega", 0.3)
            theta0, phase = rng.uniform(-np.pi, np.pi, 2)
            heading = theta0 + amp * np.sin(omega * np.arange(length - 1) + phase)
            steps = speed * np.stack([np.cos(heading), np.sin(heading)], axis=1)
            pos = rng.uniform(-10, 10, 2) + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
        else:
            fork = options.get("fork_step", 8)
            turn = options.get("turn", np.pi / 4) * rng.choice([-1.0, 1.0])
            speed = options.get("speed", 1.0)
            y0 = options.get("lateral", 0.05) * rng.standard_normal()
            headings = np.where(np.arange(length - 1) < fork - 1, 0.0, turn)
            steps = speed * np.stack([np.cos(headings), np.sin(headings)], axis=1)
            pos = np.array([0.0, y0]) + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
        out.append(_traj(i, pos, noise, rng))
    return out


def fork_branch(traj: Trajectory) -> int:
    """+1 for a left fork, -1 for a right fork (sign of final lateral offset)."""
    return 1 if traj.positions[-1, 1] - traj.positions[0, 1] > 0 else -1
