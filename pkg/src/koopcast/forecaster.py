"""Two-stage forecasting: goal sampling followed by Koopman rollout.

Coordinates flow world -> standardized -> ego frame (at the newest history
sample) for every model input, and back for every output.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .edmd import DEFAULT_RIDGE, KoopmanModel, build_snapshots, fit_ridge
from .errors import ConfigError, DataError
from .geometry import (
    AgentClass,
    Pose2,
    Standardizer,
    Trajectory,
    ego_align_windows,
    ego_inverse,
    ego_transform,
    pose_from_history,
    select_context,
)
from .mdn import GoalMixture, MdnNetwork, expected_goal, forward, forward_batch, sample_goals
from .observables import DictionarySpec, lift_batch, project


class RolloutMode(str, enum.Enum):
    LINEAR = "linear"
    RELIFT = "relift"


class GoalMode(str, enum.Enum):
    SAMPLED = "sampled"
    EXPECTED = "expected"


@dataclass(frozen=True)
class ForecastConfig:
    history_len: int = 8
    horizon: int = 12
    num_samples: int = 20
    rollout_mode: RolloutMode = RolloutMode.LINEAR
    goal_mode: GoalMode = GoalMode.SAMPLED
    goal_clamp: bool | None = None  # None: on for relift, off for linear

    def __post_init__(self):
        if self.history_len < 1 or self.horizon < 1 or self.num_samples < 1:
            raise ConfigError("history_len, horizon and num_samples must be >= 1")
        object.__setattr__(self, "rollout_mode", RolloutMode(self.rollout_mode))
        object.__setattr__(self, "goal_mode", GoalMode(self.goal_mode))

    @property
    def clamp(self) -> bool:
        if self.goal_clamp is None:
            return self.rollout_mode is RolloutMode.RELIFT
        return bool(self.goal_clamp)


# per-dataset horizons in steps: ETH/UCY 8/12 at 2.5 Hz, nuScenes 2 s / 6 s at 2 Hz,
# Waymo 1 s / 3 s at 10 Hz
HORIZON_PROFILES = {
    "eth_ucy": ForecastConfig(history_len=8, horizon=12),
    "nuscenes": ForecastConfig(history_len=4, horizon=12),
    "waymo": ForecastConfig(history_len=10, horizon=30),
}


@dataclass(frozen=True)
class Forecast:
    candidates: np.ndarray          # (K, P, 2) world frame
    goals: np.ndarray               # (K, 2) world frame
    pose: Pose2                     # ego pose in standardized coordinates
    lifted: np.ndarray | None = None  # (K, P, p) model coordinates


# -- coordinate plumbing ------------------------------------------------------

def prepare_history(history, standardizer: Standardizer) -> tuple[Pose2, np.ndarray]:
    """Standardize a world-frame history and express it in its own ego frame."""
    u = standardizer.apply(np.asarray(history, dtype=float))
    pose = pose_from_history(u)
    return pose, ego_transform(pose, u)


def to_model_frame(points, pose: Pose2, standardizer: Standardizer) -> np.ndarray:
    return ego_transform(pose, standardizer.apply(np.asarray(points, dtype=float).reshape(-1, 2)))


def to_world(points, pose: Pose2, standardizer: Standardizer) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    flat = ego_inverse(pose, pts.reshape(-1, 2))
    return standardizer.unapply(flat).reshape(pts.shape)


def context_candidates(context: Mapping[int, np.ndarray] | None, frame: int) -> np.ndarray:
    """Context points for a frame; frame ``-1`` holds static points shared by all frames."""
    if not context:
        return np.zeros((0, 2))
    parts = [np.asarray(context[k]).reshape(-1, 2) for k in (frame, -1) if k in context]
    return np.concatenate(parts) if parts else np.zeros((0, 2))


def goal_input(net: MdnNetwork, h_ego: np.ndarray, pose: Pose2, standardizer: Standardizer,
               history_world: np.ndarray, context_points=None) -> np.ndarray:
    if not net.context_size:
        return net.features(h_ego)
    pts = np.zeros((0, 2)) if context_points is None else np.asarray(context_points, float)
    ctx = select_context(history_world[-1], pts, net.context_radius, net.context_size)
    ctx_ego = to_model_frame(ctx.points, pose, standardizer) if ctx.count else np.zeros((0, 2))
    return net.features(h_ego, ctx_ego)


# -- training-set construction -----------------------------------------------

def goal_training_set(trajectories: Sequence[Trajectory], history_len: int, horizon: int,
                      standardizer: Standardizer, context: Mapping[int, np.ndarray] | None = None,
                      context_size: int = 0, context_radius: float = 0.0, stride: int = 1
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Goal-estimator features and targets ``y_{t+P}`` in standardized ego coordinates."""
    H, P = history_len, horizon
    feats, goals = [], []
    probe = MdnNetwork(0, context_size=context_size, context_radius=context_radius)
    for traj in trajectories:
        u = standardizer.apply(traj.positions)
        n = len(u) - H - P + 1
        if n <= 0:
            continue
        view = np.lib.stride_tricks.sliding_window_view(u, H + P, axis=0)[::stride]
        starts = np.arange(0, n, stride)
        w = np.moveaxis(view, -1, 1)
        aligned, origin, heading = ego_align_windows(w, H - 1)
        if context_size:
            for k, s in enumerate(starts):
                pose = Pose2(origin[k], heading[k])
                frame = int(traj.times[s + H - 1])
                pts = context_candidates(context, frame)
                ctx = select_context(traj.positions[s + H - 1], pts, context_radius, context_size)
                ctx_ego = to_model_frame(ctx.points, pose, standardizer) if ctx.count else None
                feats.append(probe.features(aligned[k, :H], ctx_ego))
        else:
            feats.extend(aligned[:, :H].reshape(len(aligned), -1))
        goals.append(aligned[:, H - 1 + P])
    if not goals:
        raise DataError(f"no window of length {H + P} in the training trajectories")
    return np.asarray(feats), np.concatenate(goals)


def fit_koopman(trajectories: Sequence[Trajectory], spec: DictionarySpec, horizon: int,
                standardizer: Standardizer, ridge: float = DEFAULT_RIDGE,
                agent_class=AgentClass.PEDESTRIAN, solver: str = "auto",
                anchor_lags: int | None = None) -> KoopmanModel:
    """Ego-frame ridge fit; anchors default to every lag a ``horizon``-step rollout visits."""
    snaps = build_snapshots(trajectories, spec, horizon, standardizer, ego_frame=True,
                            anchor_lags=horizon if anchor_lags is None else anchor_lags)
    return fit_ridge(snaps, ridge, solver=solver, agent_class=agent_class)


def fit_koopman_per_class(trajectories: Sequence[Trajectory], spec: DictionarySpec, horizon: int,
                          standardizer: Standardizer, ridge: float = DEFAULT_RIDGE
                          ) -> dict[AgentClass, KoopmanModel]:
    groups: dict = {}
    for t in trajectories:
        groups.setdefault(t.agent_class, []).append(t)
    return {cls: fit_koopman(ts, spec, horizon, standardizer, ridge, cls)
            for cls, ts in groups.items()}


# -- rollout --------------------------------------------------------------------

def _rollout_python(K, Z0, P, spec: DictionarySpec, relift: bool, clamp: bool) -> np.ndarray:
    z = np.array(Z0, dtype=float, ndmin=2)
    goal = z[:, spec.goal_slice].copy()
    lin, d = spec.linear_dim, spec.state_dim
    out = np.empty((len(z), P, z.shape[1]))
    for step in range(P):
        nxt = z @ K.T
        if relift:
            new = nxt.copy()
            new[:, : lin - d] = z[:, d:lin]
            if spec.include_quadratic:
                new[:, lin:2 * lin] = new[:, :lin] ** 2
            nxt = new
        if clamp:
            nxt[:, spec.goal_slice] = goal
        out[:, step] = nxt
        z = nxt
    return out


def rollout(model: KoopmanModel, z0, P: int, mode: RolloutMode | str = RolloutMode.LINEAR,
            clamp: bool | None = None) -> np.ndarray:
    """Propagate lifted states; ``z0`` of shape ``(p,)`` or ``(n, p)``.

    ``linear`` computes ``z_l = K z_{l-1}``. ``relift`` keeps only the
    predicted newest position each step, shifts the history, recomputes the
    squared block and (with ``clamp``) restores the initial goal.
    Returns ``(P, p)`` or ``(n, P, p)``.
    """
    mode = RolloutMode(mode)
    z = np.asarray(z0, dtype=float)
    single = z.ndim == 1
    Z = np.ascontiguousarray(z.reshape(-1, z.shape[-1]))
    if Z.shape[1] != model.p:
        raise ConfigError(f"lifted vector has length {Z.shape[1]}, model expects {model.p}")
    relift = mode is RolloutMode.RELIFT
    clamp = relift if clamp is None else clamp
    spec = model.spec
    if not relift and not clamp:
        out = kernels.rollout_linear(model.K, Z, P)
    elif relift and clamp:
        out = kernels.rollout_relift(model.K, Z, P, spec.history_len, spec.state_dim,
                                     spec.include_quadratic)
    else:
        out = _rollout_python(model.K, Z, P, spec, relift, clamp)
    return out[0] if single else out


# -- end-to-end -----------------------------------------------------------------

def forecast(history, goal_model: MdnNetwork | None, koopman_model: KoopmanModel,
             cfg: ForecastConfig, context_points=None, seed=None, goals=None,
             keep_lifted: bool = False) -> Forecast:
    """Forecast ``cfg.num_samples`` candidate futures for one world-frame history.

    ``goals`` (world frame, ``(K, 2)``) bypasses the goal model.
    """
    hist = np.asarray(history, dtype=float)
    H = koopman_model.spec.history_len
    if hist.ndim != 2 or hist.shape[1] != 2 or len(hist) < H:
        raise DataError(f"history must have shape (>= {H}, 2), got {hist.shape}")
    if not np.all(np.isfinite(hist)):
        raise DataError("history contains non-finite values")
    if cfg.history_len != H:
        raise ConfigError(f"config history_len {cfg.history_len} != model history {H}")
    hist = hist[-H:]
    std = koopman_model.standardizer
    pose, h_ego = prepare_history(hist, std)
    if not koopman_model.ego_frame:
        pose = Pose2(np.zeros(2), 0.0)
        h_ego = std.apply(hist)

    if goals is not None:
        g_ego = to_model_frame(goals, pose, std)
    else:
        if goal_model is None:
            raise ConfigError("forecast needs a goal model or explicit goals")
        if not goal_model.standardizer.matches(std):
            raise ConfigError("goal model and Koopman model use different standardizers")
        if goal_model.history_len and goal_model.history_len != H:
            raise ConfigError("goal model and Koopman model use different history lengths")
        x = goal_input(goal_model, h_ego, pose, std, hist, context_points)
        mixture = forward(goal_model, x)
        if cfg.goal_mode is GoalMode.EXPECTED:
            g_ego = np.repeat(expected_goal(mixture)[None], cfg.num_samples, axis=0)
        else:
            g_ego = sample_goals(mixture, cfg.num_samples, seed)

    Z0 = lift_batch(np.repeat(h_ego[None], len(g_ego), axis=0), g_ego, koopman_model.spec)
    traj = rollout(koopman_model, Z0, cfg.horizon, cfg.rollout_mode, cfg.clamp)
    cand = to_world(project(traj, koopman_model.spec), pose, std)
    return Forecast(cand, to_world(g_ego, pose, std), pose, traj if keep_lifted else None)


def forecast_batch(histories, goal_model: MdnNetwork, koopman_model: KoopmanModel,
                   cfg: ForecastConfig, seed=None) -> np.ndarray:
    """Vectorized forecasts for ``(n, H, 2)`` world histories without context; ``(n, K, P, 2)``.

    Goals for window ``i`` are drawn from a generator seeded with ``(seed, i)``
    so results do not depend on batch composition.
    """
    hists = np.asarray(histories, dtype=float)
    H, P, K = koopman_model.spec.history_len, cfg.horizon, cfg.num_samples
    std = koopman_model.standardizer
    if goal_model.context_size:
        raise ConfigError("forecast_batch does not support context features; use forecast")
    u = std.apply(hists[:, -H:])
    aligned, origin, heading = ego_align_windows(u, H - 1)
    w, mu, sigma = forward_batch(goal_model, aligned.reshape(len(u), -1))
    goals = np.empty((len(u), K, 2))
    for i in range(len(u)):
        mix = GoalMixture(w[i], mu[i], sigma[i])
        if cfg.goal_mode is GoalMode.EXPECTED:
            goals[i] = expected_goal(mix)
        else:
            goals[i] = sample_goals(mix, K, np.random.default_rng([seed or 0, i]))
    Z0 = lift_batch(np.repeat(aligned, K, axis=0), goals.reshape(-1, 2), koopman_model.spec)
    traj = rollout(koopman_model, Z0, P, cfg.rollout_mode, cfg.clamp)
    ego = project(traj, koopman_model.spec).reshape(len(u), K, P, 2)
    c, s = np.cos(heading)[:, None, None], np.sin(heading)[:, None, None]
    world_u = np.stack([c * ego[..., 0] - s * ego[..., 1], s * ego[..., 0] + c * ego[..., 1]],
                       axis=-1) + origin[:, None, None, :]
    return std.unapply(world_u)


@dataclass(frozen=True)
class BestOfK:
    best_index: int
    min_ade: float
    min_fde: float
    fde_index: int


def best_of_k(candidates, ground_truth) -> BestOfK:
    """Best-of-K errors; minADE and minFDE are minimized independently, ties to the lowest index."""
    c = np.asarray(candidates, dtype=float)
    gt = np.asarray(ground_truth, dtype=float)
    if c.ndim != 3 or c.shape[1:] != gt.shape:
        raise ConfigError(f"candidates {c.shape} do not match ground truth {gt.shape}")
    ade, fde = kernels.displacement_errors(np.ascontiguousarray(c), np.ascontiguousarray(gt))
    i, j = int(np.argmin(ade)), int(np.argmin(fde))
    return BestOfK(i, float(ade[i]), float(fde[j]), j)
