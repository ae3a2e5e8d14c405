"""Eigen-analysis of a fitted Koopman matrix: spectral radius and per-mode rollouts."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .edmd import KoopmanModel
from .errors import NonDiagonalizableError

logger = logging.getLogger(__name__)

V_CONDITION_LIMIT = 1e10
PERSISTENT_THRESHOLD = 0.8
TRANSIENT_THRESHOLD = 0.3
CONJ_TOL = 1e-12


class ModeClass(str, enum.Enum):
    PERSISTENT = "persistent"
    TRANSIENT = "transient"
    INTERMEDIATE = "intermediate"


@dataclass(frozen=True)
class SpectralDecomposition:
    """``K = V diag(eigenvalues) W`` with ``W = V^{-1}``.

    Eigenvalues are sorted by descending magnitude, then descending real part,
    then descending imaginary part, so a conjugate pair lists the member with
    positive imaginary part first.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_rows: np.ndarray
    v_condition: float

    @property
    def diagonalizable(self) -> bool:
        return bool(self.v_condition < V_CONDITION_LIMIT)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        return (self.right_vectors * self.eigenvalues) @ self.left_rows


@dataclass(frozen=True)
class ModeContribution:
    mode_index: int
    eigenvalue: complex
    curve: np.ndarray
    magnitude: float
    mode_class: ModeClass
    paired: bool = False


def _matrix(model_or_K) -> np.ndarray:
    return np.asarray(model_or_K.K if isinstance(model_or_K, KoopmanModel) else model_or_K,
                      dtype=float)


def decompose(model_or_K) -> SpectralDecomposition:
    K = _matrix(model_or_K)
    lam, V = np.linalg.eig(K)
    order = np.lexsort((-lam.imag, -lam.real, -np.abs(lam)))
    lam, V = lam[order], V[:, order]
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond >= V_CONDITION_LIMIT:
        logger.warning("eigenvector matrix condition %.3g: K treated as non-diagonalizable", cond)
        W = np.linalg.pinv(V)
    else:
        W = np.linalg.inv(V)
    return SpectralDecomposition(lam, V, W, cond)


def spectral_radius(model_or_K) -> float:
    K = _matrix(model_or_K)
    if K.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(K))))


def classify_magnitude(mag: float, persistent: float = PERSISTENT_THRESHOLD,
                       transient: float = TRANSIENT_THRESHOLD) -> ModeClass:
    if mag >= persistent:
        return ModeClass.PERSISTENT
    if mag <= transient:
        return ModeClass.TRANSIENT
    return ModeClass.INTERMEDIATE


def classify_modes(dec: SpectralDecomposition, persistent: float = PERSISTENT_THRESHOLD,
                   transient: float = TRANSIENT_THRESHOLD) -> list[ModeClass]:
    return [classify_magnitude(m, persistent, transient) for m in dec.magnitudes]


def _conjugate_groups(lam: np.ndarray) -> list[tuple[int, ...]]:
    """Index groups: singletons for real eigenvalues, (upper, lower) for conjugate pairs."""
    groups, used = [], set()
    scale = max(1.0, float(np.max(np.abs(lam)))) if len(lam) else 1.0
    for i, li in enumerate(lam):
        if i in used:
            continue
        used.add(i)
        if abs(li.imag) <= CONJ_TOL * scale:
            groups.append((i,))
            continue
        cands = [j for j in range(len(lam)) if j not in used]
        if not cands:
            groups.append((i,))
            continue
        j = min(cands, key=lambda k: abs(lam[k] - np.conj(li)))
        used.add(j)
        groups.append((i, j) if li.imag > 0 else (j, i))
    return groups


def mode_rollout(model: KoopmanModel, z, P: int, dec: SpectralDecomposition | None = None,
                 persistent: float = PERSISTENT_THRESHOLD,
                 transient: float = TRANSIENT_THRESHOLD) -> list[ModeContribution]:
    """Per-mode projected contributions ``C v_i lam_i^s (w_i . z)`` for ``s = 1..P``.

    Conjugate pairs are summed into one real curve reported under the
    eigenvalue with positive imaginary part. Curves are in the model's
    coordinates (standardized, ego frame when the model was fitted that way)
    and sum to the linear rollout projection.
    """
    dec = dec or decompose(model)
    if not dec.diagonalizable:
        raise NonDiagonalizableError(
            f"eigenvector condition {dec.v_condition:.3g} >= {V_CONDITION_LIMIT:.0e}; "
            "mode decomposition refused (full rollout is still available)")
    z = np.asarray(z, dtype=float)
    sl = model.spec.position_slice
    coeff = dec.left_rows @ z
    steps = np.arange(1, P + 1)
    out = []
    for group in _conjugate_groups(dec.eigenvalues):
        curve = np.zeros((P, model.spec.state_dim), dtype=complex)
        for i in group:
            powers = dec.eigenvalues[i] ** steps
            curve += np.outer(powers, dec.right_vectors[sl, i] * coeff[i])
        lam = complex(dec.eigenvalues[group[0]])
        out.append(ModeContribution(
            group[0], lam, curve.real.copy(), abs(lam),
            classify_magnitude(abs(lam), persistent, transient), len(group) == 2))
    return out
