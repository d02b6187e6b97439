import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import shifted, smooth_texture, wls_expansion
from tddm.errors import ContractError
from tddm.flow import FlowParams, estimate_flow, magnitude, polynomial_expansion

SIGMA, RADIUS = 1.5, 3


def _coefs(pc, i, j):
    return np.array([pc.c[i, j], pc.b[i, j, 0], pc.b[i, j, 1],
                     pc.A[i, j, 0, 0], pc.A[i, j, 1, 1], 2 * pc.A[i, j, 0, 1]])


def test_constant_frame_expansion():
    pc = polynomial_expansion(np.full((16, 16), 0.5), SIGMA, RADIUS)
    inner = (slice(RADIUS, -RADIUS),) * 2
    np.testing.assert_allclose(pc.c[inner], 0.5, atol=1e-12)
    np.testing.assert_allclose(pc.b[inner], 0.0, atol=1e-12)
    np.testing.assert_allclose(pc.A[inner], 0.0, atol=1e-12)


def test_linear_ramp_expansion():
    x = np.arange(32, dtype=np.float64)
    frame = np.tile(0.01 * x, (32, 1))
    pc = polynomial_expansion(frame, SIGMA, RADIUS)
    inner = (slice(RADIUS, -RADIUS),) * 2
    np.testing.assert_allclose(pc.b[inner][..., 0], 0.01, atol=1e-6)
    np.testing.assert_allclose(pc.b[inner][..., 1], 0.0, atol=1e-6)
    np.testing.assert_allclose(pc.A[inner], 0.0, atol=1e-6)


def test_quadratic_expansion():
    a = 0.002
    x = np.arange(16, dtype=np.float64) - 8
    frame = np.tile(a * x**2, (16, 1))
    pc = polynomial_expansion(frame, SIGMA, RADIUS)
    inner = (slice(RADIUS, -RADIUS),) * 2
    np.testing.assert_allclose(pc.A[inner][..., 0, 0], a, atol=1e-6)
    np.testing.assert_allclose(pc.A[inner][..., 1, 1], 0.0, atol=1e-6)


def test_expansion_matches_wls_oracle(rng):
    for _ in range(5):
        f = rng.random((16, 16))
        pc = polynomial_expansion(f, SIGMA, RADIUS)
        for i in range(RADIUS, 16 - RADIUS):
            for j in range(RADIUS, 16 - RADIUS):
                np.testing.assert_allclose(_coefs(pc, i, j), wls_expansion(f, SIGMA, RADIUS, i, j), atol=1e-9)


def test_expansion_symmetric_A(rng):
    pc = polynomial_expansion(rng.random((20, 20)))
    np.testing.assert_array_equal(pc.A[..., 0, 1], pc.A[..., 1, 0])


def test_identical_frames_give_zero_flow(rng):
    f = smooth_texture(rng, 32)
    assert np.abs(estimate_flow(f, f)).max() <= 1e-9


@pytest.mark.parametrize("dx,dy", [(2, 0), (0, -2), (1, 1), (-3, 2)])
def test_texture_shift(rng, dx, dy):
    f = smooth_texture(rng, 64)
    field = estimate_flow(f, shifted(f, dx, dy))
    inner = field[8:-8, 8:-8]
    epe = np.hypot(inner[..., 0] - dx, inner[..., 1] - dy).mean()
    assert epe <= 0.5


def test_gaussian_blob_translation():
    yy, xx = np.mgrid[0:48, 0:48].astype(np.float64)

    def blob(cy):
        return np.exp(-((yy - cy) ** 2 + (xx - 24) ** 2) / (2 * 4.0**2))

    a, b = blob(20.0), blob(23.0)
    field = estimate_flow(a, b)
    region = a >= 0.5
    err = np.hypot(field[region][:, 0] - 0.0, field[region][:, 1] - 3.0)
    assert err.mean() <= 0.75


def test_sign_antisymmetry(rng):
    f = smooth_texture(rng, 48)
    g = shifted(f, 1, 2)
    fwd, bwd = estimate_flow(f, g), estimate_flow(g, f)
    assert np.abs(fwd + bwd)[8:-8, 8:-8].mean() <= 0.25


def test_shift_equivariance(rng):
    f = smooth_texture(rng, 64)
    g = shifted(f, 2, 1)
    base = estimate_flow(f, g)
    moved = estimate_flow(shifted(f, 3, 5), shifted(g, 3, 5))
    np.testing.assert_array_less(np.abs(shifted(base, 3, 5) - moved)[12:-12, 12:-12].mean(), 0.1)


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        estimate_flow(np.zeros((16, 16)), np.zeros((16, 17)))


@pytest.mark.parametrize("bad", [np.zeros((4, 16)), np.full((16, 16), 1.5), np.zeros(16),
                                 np.full((16, 16), np.nan)])
def test_invalid_frames(bad):
    with pytest.raises(ContractError):
        polynomial_expansion(bad)


def test_params_validation():
    for kw in ({"pyramid_levels": 0}, {"pyramid_scale": 1.0}, {"window_radius": 0},
               {"iterations_per_level": 0}, {"expansion_sigma": 0.0}):
        with pytest.raises(ContractError):
            FlowParams(**kw)


def test_magnitude_examples():
    assert np.all(magnitude(np.zeros((3, 3, 2))) == 0)
    np.testing.assert_array_equal(magnitude(np.tile([3.0, 4.0], (2, 2, 1))), 5.0)
    np.testing.assert_array_equal(magnitude(np.array([[[1.0, 0.0], [0.0, 0.0]]])), [[1.0, 0.0]])
    with pytest.raises(ContractError):
        magnitude(np.zeros((3, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 30), st.integers(8, 30))
def test_flow_finite_and_shaped(seed, h, w):
    r = np.random.default_rng(seed)
    a, b = r.random((h, w)), r.random((h, w))
    field = estimate_flow(a, b)
    assert field.shape == (h, w, 2)
    assert np.all(np.isfinite(field))
