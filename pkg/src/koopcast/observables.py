"""Lifting dictionary and projection map.

Lifted layout, for a history ``h`` of ``H`` steps (oldest first) and goal ``g``::

    z = [h_1x, h_1y, ..., h_Hx, h_Hy,  (h ** 2 in the same order),  g_x, g_y]

The projection reads the newest history slot, entries ``[d(H-1), dH)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

LAYOUT_VERSION = 1


@dataclass(frozen=True)
class DictionarySpec:
    history_len: int
    state_dim: int = 2
    goal_dim: int = 2
    include_quadratic: bool = True

    def __post_init__(self):
        if self.history_len < 1:
            raise ConfigError("history_len must be >= 1")
        if self.state_dim < 1 or self.goal_dim < 0:
            raise ConfigError("state_dim must be >= 1 and goal_dim >= 0")

    @property
    def linear_dim(self) -> int:
        return self.state_dim * self.history_len

    @property
    def lifted_dim(self) -> int:
        return self.linear_dim * (2 if self.include_quadratic else 1) + self.goal_dim

    @property
    def goal_slice(self) -> slice:
        return slice(self.lifted_dim - self.goal_dim, self.lifted_dim)

    @property
    def position_slice(self) -> slice:
        """Entries of ``z`` holding the newest history position."""
        end = self.linear_dim
        return slice(end - self.state_dim, end)

    def to_dict(self) -> dict:
        return {
            "history_len": self.history_len,
            "state_dim": self.state_dim,
            "goal_dim": self.goal_dim,
            "include_quadratic": self.include_quadratic,
            "layout_version": LAYOUT_VERSION,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DictionarySpec":
        version = d.get("layout_version", LAYOUT_VERSION)
        if version != LAYOUT_VERSION:
            raise ConfigError(f"unsupported lifted layout version {version}")
        return cls(int(d["history_len"]), int(d["state_dim"]), int(d["goal_dim"]),
                   bool(d["include_quadratic"]))


@dataclass(frozen=True)
class AugmentedState:
    """History window (newest row last) plus temporal goal."""

    history: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.history, dtype=float)
        g = np.asarray(self.goal, dtype=float).ravel()
        if h.ndim != 2:
            raise DataError(f"history must be 2-D, got shape {h.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
            raise DataError("augmented state contains non-finite values")
        object.__setattr__(self, "history", h)
        object.__setattr__(self, "goal", g)


def _check_shapes(histories: np.ndarray, goals: np.ndarray, spec: DictionarySpec):
    if histories.shape[1:] != (spec.history_len, spec.state_dim):
        raise ConfigError(
            f"history shape {histories.shape[1:]} does not match "
            f"({spec.history_len}, {spec.state_dim})"
        )
    if goals.shape[1:] != (spec.goal_dim,):
        raise ConfigError(f"goal shape {goals.shape[1:]} does not match ({spec.goal_dim},)")


def lift_batch(histories, goals, spec: DictionarySpec) -> np.ndarray:
    """Lift ``n`` states at once: histories ``(n, H, d)``, goals ``(n, goal_dim)`` -> ``(n, p)``."""
    h = np.asarray(histories, dtype=float)
    g = np.asarray(goals, dtype=float)
    _check_shapes(h, g, spec)
    flat = h.reshape(len(h), -1)
    blocks = [flat, flat * flat, g] if spec.include_quadratic else [flat, g]
    return np.concatenate(blocks, axis=1)


def lift(s: AugmentedState, spec: DictionarySpec) -> np.ndarray:
    return lift_batch(s.history[None], s.goal[None], spec)[0]


def project(z, spec: DictionarySpec) -> np.ndarray:
    """Newest history position held in ``z`` (works on ``(..., p)`` arrays)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != spec.lifted_dim:
        raise ConfigError(f"lifted vector has length {z.shape[-1]}, expected {spec.lifted_dim}")
    return z[..., spec.position_slice]


def history_from_lifted(z, spec: DictionarySpec) -> np.ndarray:
    """Recover the history window from the linear block of ``z``."""
    z = np.asarray(z, dtype=float)
    return z[..., : spec.linear_dim].reshape(*z.shape[:-1], spec.history_len, spec.state_dim)
