import cmath
import math

import numpy as np
import pytest

from conftest import generic_spec, random_stable
from koopcast.edmd import KoopmanModel
from koopcast.errors import NonDiagonalizableError
from koopcast.observables import DictionarySpec
from koopcast.spectral import (
    ModeClass,
    classify_magnitude,
    classify_modes,
    decompose,
    mode_rollout,
    spectral_radius,
)


def diagonalizable(p, rng, pairs=2):
    """V diag(lam) V^{-1} with real modes and ``pairs`` conjugate pairs, |lam| < 1."""
    lam_r = rng.uniform(-0.95, 0.95, p - 2 * pairs)
    blocks = [np.diag(lam_r)] if len(lam_r) else []
    for _ in range(pairs):
        r, th = rng.uniform(0.2, 0.95), rng.uniform(0.1, 2.5)
        blocks.append(r * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]))
    D = np.zeros((p, p))
    i = 0
    for b in blocks:
        n = len(b)
        D[i:i + n, i:i + n] = b
        i += n
    V = rng.standard_normal((p, p)) + 3 * np.eye(p)
    return V @ D @ np.linalg.inv(V)


def test_diagonal_matrix():
    dec = decompose(np.diag([0.5, 0.9]))
    assert np.allclose(dec.eigenvalues, [0.9, 0.5])
    assert np.allclose(np.abs(dec.right_vectors), np.eye(2)[:, ::-1])


def test_scaled_rotation_closed_form():
    r, th = 0.95, 0.1
    K = r * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    dec = decompose(K)
    assert np.allclose(dec.eigenvalues, [r * cmath.exp(1j * th), r * cmath.exp(-1j * th)])


def test_sort_order_magnitude_real_imag():
    K = np.diag([0.5, -0.9, 0.9, 0.1])
    assert np.allclose(decompose(K).eigenvalues, [0.9, -0.9, 0.5, 0.1])


def test_reconstruction(rng):
    K = diagonalizable(10, rng)
    dec = decompose(K)
    assert dec.diagonalizable
    assert np.max(np.abs(dec.reconstruct() - K)) < 1e-8


def test_spectral_radius_examples(rng):
    assert spectral_radius(np.eye(3)) == 1.0
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    assert math.isclose(spectral_radius(np.diag([0.3, -1.2])), 1.2)
    assert math.isclose(spectral_radius(random_stable(9, 0.95, rng)), 0.95)


@pytest.mark.parametrize("mag, cls", [(0.95, ModeClass.PERSISTENT), (0.8, ModeClass.PERSISTENT),
                                      (0.1, ModeClass.TRANSIENT), (0.3, ModeClass.TRANSIENT),
                                      (0.5, ModeClass.INTERMEDIATE)])
def test_classify_thresholds(mag, cls):
    assert classify_magnitude(mag) is cls


def test_classify_modes_counts():
    classes = classify_modes(decompose(np.diag([0.95, 0.5, 0.1])))
    assert classes == [ModeClass.PERSISTENT, ModeClass.INTERMEDIATE, ModeClass.TRANSIENT]


def linear_rollout_projection(model, z, P):
    out, zz = [], z.copy()
    for _ in range(P):
        zz = model.K @ zz
        out.append(zz[model.spec.position_slice])
    return np.array(out)


def test_diagonal_modes_are_geometric():
    spec = generic_spec(4)
    lam = np.array([0.9, 0.6, 0.5, 0.2])
    model = KoopmanModel(np.diag(lam), spec)
    z = np.array([1.0, 2.0, 3.0, 4.0])
    modes = mode_rollout(model, z, 5)
    s = np.arange(1, 6)
    by_lam = {round(m.eigenvalue.real, 6): m.curve for m in modes}
    # position slice holds entries 0 and 1, so only the 0.9 and 0.6 modes show up there
    assert np.allclose(by_lam[0.9][:, 0], 0.9 ** s * 1.0)
    assert np.allclose(by_lam[0.6][:, 1], 0.6 ** s * 2.0)
    assert np.allclose(by_lam[0.5], 0) and np.allclose(by_lam[0.2], 0)
    assert np.allclose(sum(m.curve for m in modes), linear_rollout_projection(model, z, 5))


def test_transient_decays_against_dominant():
    spec = generic_spec(2)
    model = KoopmanModel(np.diag([0.99, 0.1]), spec)
    modes = mode_rollout(model, np.array([1.0, 1.0]), 12)
    dom, tr = (m.curve for m in modes)
    ratio_1 = abs(tr[0, 1]) / abs(dom[0, 0])
    ratio_12 = abs(tr[11, 1]) / abs(dom[11, 0])
    assert math.isclose(ratio_12, ratio_1 * (0.1 / 0.99) ** 11, rel_tol=1e-9)
    assert ratio_12 <= ratio_1 * 0.1 ** 12 / 0.99 ** 12 / 0.1 * 0.99


def test_mode_sum_identity_random(rng):
    spec = DictionarySpec(3)
    for _ in range(5):
        model = KoopmanModel(diagonalizable(spec.lifted_dim, rng, pairs=3), spec)
        z = rng.standard_normal(spec.lifted_dim)
        modes = mode_rollout(model, z, 12)
        total = sum(m.curve for m in modes)
        assert np.max(np.abs(total - linear_rollout_projection(model, z, 12))) < 1e-6
        assert all(np.isrealobj(m.curve) for m in modes)


def test_conjugate_pairs_merged():
    th = 0.4
    R = 0.9 * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    K = np.zeros((4, 4))
    K[:2, :2] = R
    K[2, 2], K[3, 3] = 0.5, 0.2
    modes = mode_rollout(KoopmanModel(K, generic_spec(4)), np.array([1.0, 0, 1, 1]), 4)
    assert len(modes) == 3
    pair = modes[0]
    assert pair.paired and pair.eigenvalue.imag > 0
    expect = np.array([np.linalg.matrix_power(R, s) @ [1.0, 0] for s in range(1, 5)])
    assert np.allclose(pair.curve, expect)


def test_jordan_block_refused():
    K = np.array([[0.9, 1.0], [0.0, 0.9]])
    model = KoopmanModel(K, generic_spec(2))
    dec = decompose(model)
    assert not dec.diagonalizable
    with pytest.raises(NonDiagonalizableError):
        mode_rollout(model, np.ones(2), 3)
