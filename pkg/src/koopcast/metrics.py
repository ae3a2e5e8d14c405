"""Best-of-K evaluation over scenes and wall-clock timing of the inference path."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .data_io import DatasetSplit, window_arrays
from .edmd import KoopmanModel
from .errors import ConfigError, DataError
from .forecaster import (
    ForecastConfig,
    GoalMode,
    context_candidates,
    forecast,
    forecast_batch,
    prepare_history,
    rollout,
    to_world,
)
from .geometry import Trajectory
from .mdn import MdnNetwork, expected_goal, forward, sample_goals
from .observables import lift_batch, project

STAGES = ("goal_sampling", "lift", "rollout", "project")

# predictor(histories (n, H, 2), seed, newest frames (n,)) -> candidates (n, K, P, 2)
Predictor = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


@dataclass
class SceneMetrics:
    windows: int
    min_ade: dict = field(default_factory=dict)   # K -> value
    min_fde: dict = field(default_factory=dict)


@dataclass
class BenchReport:
    scenes: dict                         # scene name -> SceneMetrics
    k_list: tuple
    units: str = "world"
    seed: int = 0
    samples_per_second: float | None = None
    latency_ms: dict | None = None       # stage -> ms/sample (median)

    def to_dict(self) -> dict:
        scenes = {name: {"windows": s.windows,
                         "minADE": {str(k): s.min_ade[k] for k in self.k_list},
                         "minFDE": {str(k): s.min_fde[k] for k in self.k_list}}
                  for name, s in self.scenes.items()}
        out = {"k_list": list(self.k_list), "units": self.units, "seed": self.seed,
               "scenes": scenes}
        if self.samples_per_second is not None:
            out["samples_per_second"] = self.samples_per_second
        if self.latency_ms is not None:
            out["latency_ms"] = dict(self.latency_ms)
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["scene", "windows"]
        for k in self.k_list:
            header += [f"minADE_{k}", f"minFDE_{k}"]
        w.writerow(header)
        for name, s in self.scenes.items():
            row = [name, s.windows]
            for k in self.k_list:
                row += [repr(s.min_ade[k]), repr(s.min_fde[k])]
            w.writerow(row)
        return buf.getvalue()


def _scenes(data) -> dict:
    if isinstance(data, DatasetSplit):
        return {"test": list(data.test)}
    if isinstance(data, Mapping):
        return {str(k): list(v) for k, v in data.items()}
    if isinstance(data, Sequence) and (not data or isinstance(data[0], Trajectory)):
        return {"test": list(data)}
    raise ConfigError("evaluate expects a DatasetSplit, a scene mapping or a list of trajectories")


def model_predictor(goal_model: MdnNetwork, koopman_model: KoopmanModel,
                    cfg: ForecastConfig, context: Mapping[int, np.ndarray] | None = None
                    ) -> Predictor:
    """Model-pair predictor; window ``i`` draws goals from a generator seeded ``(seed, i)``."""
    def predict(hist: np.ndarray, seed: int, frames: np.ndarray) -> np.ndarray:
        if not goal_model.context_size:
            return forecast_batch(hist, goal_model, koopman_model, cfg, seed=seed)
        return np.stack([
            forecast(h, goal_model, koopman_model, cfg, context_candidates(context, int(f)),
                     seed=np.random.default_rng([seed, i])).candidates
            for i, (h, f) in enumerate(zip(hist, frames))])
    return predict


def _newest_frames(trajs, H: int, P: int, stride: int) -> np.ndarray:
    return np.array([int(t.times[o + H - 1]) for t in trajs
                     for o in range(0, len(t) - H - P + 1, stride)], dtype=int)


def evaluate(dataset_split, goal_model: MdnNetwork | None = None,
             koopman_model: KoopmanModel | None = None, cfg: ForecastConfig | None = None,
             K_list=(1, 5), seed: int = 0, standardized: bool = False,
             predictor: Predictor | None = None, stride: int = 1,
             context: Mapping[int, np.ndarray] | None = None) -> BenchReport:
    """Mean best-of-K errors per scene over every test window.

    Candidates are nested: the metric at ``K`` uses the first ``K`` of
    ``max(K_list)`` candidates, so values never increase with ``K``.
    ``standardized`` reports errors in the Koopman model's standardized units.
    ``predictor`` replaces the model pair (used for oracle checks).
    """
    ks = tuple(sorted({int(k) for k in K_list}))
    if not ks or ks[0] < 1:
        raise ConfigError(f"K_list must hold positive integers, got {K_list}")
    if predictor is None:
        if goal_model is None or koopman_model is None or cfg is None:
            raise ConfigError("evaluate needs goal and Koopman models plus a config, or a predictor")
        cfg = ForecastConfig(cfg.history_len, cfg.horizon, ks[-1], cfg.rollout_mode,
                             cfg.goal_mode, cfg.goal_clamp)
        predictor = model_predictor(goal_model, koopman_model, cfg, context)
    if cfg is None:
        raise ConfigError("evaluate needs a ForecastConfig for window lengths")
    if standardized and koopman_model is None:
        raise ConfigError("standardized units need the Koopman model's standardizer")
    H, P = cfg.history_len, cfg.horizon
    scenes = _scenes(dataset_split)
    report = BenchReport({}, ks, "standardized" if standardized else "world", seed)
    total = 0
    for name, trajs in scenes.items():
        hist, fut, _ = window_arrays(trajs, H, P, stride)
        total += len(hist)
        if not len(hist):
            continue
        frames = _newest_frames(trajs, H, P, stride)
        cands = np.asarray(predictor(hist, seed, frames), dtype=float)
        if cands.shape[0] != len(hist) or cands.shape[1] < ks[-1] or cands.shape[2:] != (P, 2):
            raise ConfigError(f"predictor returned {cands.shape}, need ({len(hist)}, >={ks[-1]}, {P}, 2)")
        if standardized:
            std = koopman_model.standardizer
            cands, fut = std.apply(cands), std.apply(fut)
        sm = SceneMetrics(len(hist))
        ade = np.empty((len(hist), ks[-1]))
        fde = np.empty_like(ade)
        for i in range(len(hist)):
            a, f = kernels.displacement_errors(np.ascontiguousarray(cands[i, :ks[-1]]),
                                               np.ascontiguousarray(fut[i]))
            ade[i], fde[i] = a, f
        for k in ks:
            sm.min_ade[k] = float(ade[:, :k].min(axis=1).mean())
            sm.min_fde[k] = float(fde[:, :k].min(axis=1).mean())
        report.scenes[name] = sm
    if total == 0:
        raise DataError(f"empty test set: no window of length {H + P}")
    return report


# -- timing -------------------------------------------------------------------

@dataclass
class LatencyStats:
    median_ms: float
    p95_ms: float
    stages_ms: dict           # stage -> median ms/sample
    n_iter: int
    samples_per_second: float

    def to_dict(self) -> dict:
        return {"median_ms": self.median_ms, "p95_ms": self.p95_ms,
                "stages_ms": dict(self.stages_ms), "n_iter": self.n_iter,
                "samples_per_second": self.samples_per_second}


def _one_forecast(goal_model, km: KoopmanModel, cfg: ForecastConfig, hist, goals_ego, rng):
    tick = time.perf_counter
    t0 = tick()
    pose, h_ego = prepare_history(hist, km.standardizer)
    if goal_model is not None:
        mix = forward(goal_model, goal_model.features(h_ego))
        if cfg.goal_mode is GoalMode.EXPECTED:
            g = np.repeat(expected_goal(mix)[None], cfg.num_samples, axis=0)
        else:
            g = sample_goals(mix, cfg.num_samples, rng)
    else:
        g = goals_ego
    t1 = tick()
    Z0 = lift_batch(np.repeat(h_ego[None], len(g), axis=0), g, km.spec)
    t2 = tick()
    traj = rollout(km, Z0, cfg.horizon, cfg.rollout_mode, cfg.clamp)
    t3 = tick()
    to_world(project(traj, km.spec), pose, km.standardizer)
    t4 = tick()
    return t1 - t0, t2 - t1, t3 - t2, t4 - t3, t4 - t0


def time_inference(models, cfg: ForecastConfig, n_warmup: int = 100, n_iter: int = 1000,
                   histories=None, seed: int = 0) -> LatencyStats:
    """Median and p95 latency of single-sample forecasts, with a per-stage breakdown.

    ``models`` is ``(goal_model, koopman_model)``; a ``None`` goal model
    skips goal sampling and rolls out fixed unit goals. Times are in
    milliseconds per forecast (one history, ``cfg.num_samples`` candidates).
    """
    goal_model, km = models
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1")
    H = km.spec.history_len
    rng = np.random.default_rng(seed)
    if histories is None:
        base = np.arange(H)[:, None] * np.array([1.0, 0.2])
        histories = base[None] + rng.standard_normal((16, 1, 2))
    histories = np.asarray(histories, dtype=float)
    goals_ego = np.tile([[1.0, 0.0]], (cfg.num_samples, 1))
    rows = []
    for it in range(n_warmup + n_iter):
        r = _one_forecast(goal_model, km, cfg, histories[it % len(histories)], goals_ego, rng)
        if it >= n_warmup:
            rows.append(r)
    ms = np.asarray(rows) * 1e3
    total = ms[:, -1]
    stages = {name: float(np.median(ms[:, i])) for i, name in enumerate(STAGES)}
    med = float(np.median(total))
    return LatencyStats(med, float(np.percentile(total, 95)), stages, n_iter,
                        1e3 / med if med > 0 else float("inf"))


def time_rollout(model: KoopmanModel, P: int, n_warmup: int = 100, n_iter: int = 1000,
                 seed: int = 0) -> LatencyStats:
    """Latency of rollout plus projection alone for one lifted state."""
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1")
    z = np.random.default_rng(seed).standard_normal(model.p)
    tick = time.perf_counter
    rows = []
    for it in range(n_warmup + n_iter):
        t0 = tick()
        traj = rollout(model, z, P)
        t1 = tick()
        project(traj, model.spec)
        t2 = tick()
        if it >= n_warmup:
            rows.append((t1 - t0, t2 - t1, t2 - t0))
    ms = np.asarray(rows) * 1e3
    med = float(np.median(ms[:, 2]))
    stages = {"goal_sampling": 0.0, "lift": 0.0, "rollout": float(np.median(ms[:, 0])),
              "project": float(np.median(ms[:, 1]))}
    return LatencyStats(med, float(np.percentile(ms[:, 2], 95)), stages, n_iter,
                        1e3 / med if med > 0 else float("inf"))
