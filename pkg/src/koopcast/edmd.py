"""Snapshot construction and ridge-regularized eDMD fitting.

Convention: ``K`` acts on column lifted vectors, ``z_next = K @ z``. With
snapshot rows stacked in ``Psi`` and ``PsiNext`` the ridge problem

    min_W ||Psi W - PsiNext||_F^2 + lam ||W||_F^2

has solution ``W = (Psi^T Psi + lam I)^{-1} Psi^T PsiNext`` and ``K = W^T``.
"""
from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError, IllConditionedError
from .geometry import AgentClass, Standardizer, Trajectory, ego_align_windows
from .observables import LAYOUT_VERSION, DictionarySpec, lift_batch

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-3
COND_LIMIT = 1e12
SVD_CUTOFF = 1e-10


@dataclass
class SnapshotSet:
    Psi: np.ndarray
    PsiNext: np.ndarray
    spec: DictionarySpec
    agent_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    horizon: int = 1
    standardizer: Standardizer = field(default_factory=Standardizer.identity)
    ego_frame: bool = False

    def __post_init__(self):
        self.Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        self.PsiNext = np.atleast_2d(np.asarray(self.PsiNext, dtype=float))
        if self.Psi.shape != self.PsiNext.shape:
            raise ConfigError(f"Psi {self.Psi.shape} and PsiNext {self.PsiNext.shape} differ")
        if self.Psi.shape[1] != self.spec.lifted_dim:
            raise ConfigError(
                f"snapshot width {self.Psi.shape[1]} != lifted dim {self.spec.lifted_dim}")
        if len(self.agent_ids) == 0:
            self.agent_ids = np.full(len(self.Psi), "", dtype=object)

    @property
    def m(self) -> int:
        return len(self.Psi)


def snapshot_windows(positions: np.ndarray, H: int, P: int) -> np.ndarray:
    """All length ``H + P + 1`` windows of a trajectory, shape ``(L - H - P, H + P + 1, 2)``."""
    L = len(positions)
    n = L - H - P
    if n <= 0:
        return np.zeros((0, H + P + 1, 2))
    view = np.lib.stride_tricks.sliding_window_view(positions, H + P + 1, axis=0)
    return np.ascontiguousarray(np.moveaxis(view, -1, 1))


def build_snapshots(
    trajectories: Iterable[Trajectory],
    spec: DictionarySpec,
    horizon: int,
    standardizer: Standardizer | None = None,
    ego_frame: bool = False,
    anchor_lags: int = 1,
) -> SnapshotSet:
    """Snapshot pairs ``(s_t, s_{t+1})`` with goals ``y_{t+P}`` and ``y_{t+1+P}``.

    Without ``ego_frame`` a trajectory of length ``L`` contributes
    ``max(L - H - P, 0)`` pairs. With ``ego_frame`` both states of a pair are
    expressed (after standardization) in the ego frame of an anchor sample
    ``t - lag`` for every ``lag < anchor_lags``; lag ``l`` contributes
    ``max(L - H - P - l, 0)`` pairs. A rollout of ``P`` steps visits states
    whose newest sample lies ``0..P-1`` steps past the anchor, so fitting with
    ``anchor_lags = P`` covers exactly those frames.
    """
    H, P = spec.history_len, horizon
    if P < 1:
        raise ConfigError("horizon must be >= 1")
    if anchor_lags < 1:
        raise ConfigError("anchor_lags must be >= 1")
    lags = range(anchor_lags) if ego_frame else range(1)
    std = standardizer or Standardizer.identity()
    psi, psi_next, tags = [], [], []
    for traj in trajectories:
        u = std.apply(traj.positions)
        for lag in lags:
            # window covers y_{t-H+1-lag} .. y_{t+P+1}; the anchor y_{t-lag} sits at index H-1
            w = snapshot_windows(u, H + lag, P)
            if len(w) == 0:
                break
            if ego_frame:
                w, _, _ = ego_align_windows(w, H - 1)
            w = w[:, lag:]
            psi.append(lift_batch(w[:, :H], w[:, H - 1 + P], spec))
            psi_next.append(lift_batch(w[:, 1:H + 1], w[:, H + P], spec))
            tags.append(np.full(len(w), traj.agent_id, dtype=object))
    p = spec.lifted_dim
    return SnapshotSet(
        np.concatenate(psi) if psi else np.zeros((0, p)),
        np.concatenate(psi_next) if psi_next else np.zeros((0, p)),
        spec,
        np.concatenate(tags) if tags else np.zeros(0, dtype=object),
        horizon,
        std,
        ego_frame,
    )


@dataclass(frozen=True)
class KoopmanModel:
    K: np.ndarray
    spec: DictionarySpec
    ridge: float = DEFAULT_RIDGE
    standardizer: Standardizer = field(default_factory=Standardizer.identity)
    fit_residual: float = 0.0
    horizon: int = 1
    ego_frame: bool = True
    agent_class: AgentClass = AgentClass.PEDESTRIAN

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        p = self.spec.lifted_dim
        if K.shape != (p, p):
            raise ConfigError(f"K has shape {K.shape}, expected {(p, p)}")
        if not np.all(np.isfinite(K)):
            raise DataError("K contains non-finite entries")
        K = np.ascontiguousarray(K)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "agent_class", AgentClass(self.agent_class))

    @property
    def p(self) -> int:
        return self.spec.lifted_dim

    def to_dict(self, encoding: str = "plain") -> dict:
        return {
            "layout_version": LAYOUT_VERSION,
            "K": encode_matrix(self.K, encoding),
            "spec": self.spec.to_dict(),
            "lambda": self.ridge,
            "standardizer": self.standardizer.to_dict(),
            "fit_residual": self.fit_residual,
            "horizon": self.horizon,
            "ego_frame": self.ego_frame,
            "agent_class": self.agent_class.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KoopmanModel":
        if d.get("layout_version") != LAYOUT_VERSION:
            raise ConfigError(f"unsupported model layout version {d.get('layout_version')}")
        return cls(
            decode_matrix(d["K"]),
            DictionarySpec.from_dict(d["spec"]),
            float(d["lambda"]),
            Standardizer.from_dict(d["standardizer"]),
            float(d["fit_residual"]),
            int(d.get("horizon", 1)),
            bool(d.get("ego_frame", True)),
            d.get("agent_class", "pedestrian"),
        )

    def save(self, path, encoding: str = "plain") -> None:
        Path(path).write_text(json.dumps(self.to_dict(encoding), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: not a Koopman model file ({exc})") from exc


def encode_matrix(a: np.ndarray, encoding: str = "plain"):
    a = np.asarray(a, dtype=float)
    if encoding == "plain":
        return a.tolist()
    if encoding == "base64":
        raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
        return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(raw).decode()}
    raise ValueError(f"unknown matrix encoding {encoding!r}")


def decode_matrix(obj) -> np.ndarray:
    if isinstance(obj, dict):
        raw = base64.b64decode(obj["data"])
        return np.frombuffer(raw, dtype=obj.get("dtype", "<f8")).reshape(obj["shape"]).astype(float)
    return np.asarray(obj, dtype=float)


def solve_normal(A: np.ndarray, B: np.ndarray, ridge: float, solver: str = "auto") -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive semi-definite ``A``.

    ``auto`` uses a Cholesky factorization when ``cond(A) < 1e12``; otherwise
    it falls back to a truncated pseudoinverse when ``ridge > 0`` and raises
    when ``ridge == 0``.
    """
    if solver not in ("auto", "cholesky", "svd"):
        raise ConfigError(f"unknown solver {solver!r}")
    if solver != "svd":
        cond = np.linalg.cond(A)
        if cond < COND_LIMIT or solver == "cholesky":
            try:
                return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), B)
            except np.linalg.LinAlgError:
                if solver == "cholesky":
                    raise IllConditionedError("Cholesky factorization failed") from None
                cond = np.inf
        if ridge == 0:
            raise IllConditionedError(
                f"Gram matrix is ill-conditioned (cond ~ {cond:.3g}) at lambda = 0; "
                "use a positive ridge or solver='svd'")
        logger.info("cond %.3g >= %.0e, using truncated pseudoinverse", cond, COND_LIMIT)
    return np.linalg.pinv(A, rcond=SVD_CUTOFF, hermitian=True) @ B


def _check_snapshots(snap: SnapshotSet, ridge: float):
    if snap.m == 0:
        raise DataError("no snapshot pairs; trajectories are shorter than H + P + 1")
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")
    if not (np.all(np.isfinite(snap.Psi)) and np.all(np.isfinite(snap.PsiNext))):
        raise DataError("snapshot data contain NaN or inf")


def _model(snap: SnapshotSet, K: np.ndarray, ridge: float, agent_class) -> KoopmanModel:
    resid = float(np.sqrt(np.mean((snap.Psi @ K.T - snap.PsiNext) ** 2)))
    return KoopmanModel(K, snap.spec, float(ridge), snap.standardizer, resid,
                        snap.horizon, snap.ego_frame, agent_class)


def fit_ridge(snap: SnapshotSet, ridge: float = DEFAULT_RIDGE, solver: str = "auto",
              agent_class=AgentClass.PEDESTRIAN) -> KoopmanModel:
    _check_snapshots(snap, ridge)
    p = snap.spec.lifted_dim
    gram = snap.Psi.T @ snap.Psi + ridge * np.eye(p)
    W = solve_normal(gram, snap.Psi.T @ snap.PsiNext, ridge, solver)
    return _model(snap, W.T, ridge, agent_class)


class MomentAccumulator:
    """Streaming sums of ``z z^T`` and ``z z'^T``; shards can be merged in any order."""

    def __init__(self, p: int):
        self.G = np.zeros((p, p))
        self.A = np.zeros((p, p))
        self.m = 0

    def update(self, Psi, PsiNext) -> "MomentAccumulator":
        Psi, PsiNext = np.asarray(Psi, float), np.asarray(PsiNext, float)
        self.G += Psi.T @ Psi
        self.A += Psi.T @ PsiNext
        self.m += len(Psi)
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        self.G += other.G
        self.A += other.A
        self.m += other.m
        return self

    def solve(self, ridge: float, solver: str = "auto") -> np.ndarray:
        """Return ``K`` from ``K^T = (G + (lam/m) I)^{-1} A`` with normalized moments."""
        if self.m == 0:
            raise DataError("no snapshot pairs accumulated")
        G, A = self.G / self.m, self.A / self.m
        W = solve_normal(G + (ridge / self.m) * np.eye(len(G)), A, ridge, solver)
        return W.T


def fit_moments(snap: SnapshotSet, ridge: float = DEFAULT_RIDGE, solver: str = "auto",
                agent_class=AgentClass.PEDESTRIAN, batch_size: int | None = None) -> KoopmanModel:
    _check_snapshots(snap, ridge)
    acc = MomentAccumulator(snap.spec.lifted_dim)
    step = batch_size or snap.m
    for i in range(0, snap.m, step):
        acc.update(snap.Psi[i:i + step], snap.PsiNext[i:i + step])
    return _model(snap, acc.solve(ridge, solver), ridge, agent_class)


def predict_one_step(model: KoopmanModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.p:
        raise ConfigError(f"lifted vector has length {z.shape[-1]}, model expects {model.p}")
    return z @ model.K.T


def normal_equation_residual(snap: SnapshotSet, model: KoopmanModel) -> float:
    """Relative residual ``||(Psi^T Psi + lam I) K^T - Psi^T Psi'||_F / ||Psi^T Psi'||_F``."""
    p = snap.spec.lifted_dim
    lhs = (snap.Psi.T @ snap.Psi + model.ridge * np.eye(p)) @ model.K.T
    rhs = snap.Psi.T @ snap.PsiNext
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
