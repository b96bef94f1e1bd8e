"""
Tests for the absorption profile, stretched coordinates and diagonal PML tensors.
"""

import logging
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from models import PmlParams
from services.pml_profiles import PmlProfile, profile_breakpoints, profile_identity_suite


@pytest.fixture
def profile(base_params) -> PmlProfile:
    return PmlProfile(base_params)


class TestSigma:
    """sigma_j: zero inside B1, polynomial in the layer, sigma0 at and beyond Gamma2."""

    @pytest.mark.parametrize("x, expected", [(0.5, 0.0), (1.5, 2.0), (2.0, 4.0), (3.0, 4.0)])
    def test_branch_values(self, profile, x, expected):
        assert profile.sigma(1, x) == pytest.approx(expected, abs=1e-15)

    def test_even_in_x(self, profile):
        x = np.linspace(-2.5, 2.5, 101)
        np.testing.assert_array_equal(profile.sigma(2, x), profile.sigma(2, -x))

    def test_nonnegative_and_bounded(self, profile, rng):
        x = rng.uniform(-5.0, 5.0, size=1000)
        s = profile.sigma(3, x)
        assert np.all(s >= 0.0)
        assert np.all(s <= 4.0)

    def test_bad_axis(self, profile):
        with pytest.raises(ValueError):
            profile.sigma(0, 1.0)


class TestAlpha:
    @pytest.mark.parametrize("x, expected", [(0.0, 1.0), (1.5, 3.0), (2.0, 5.0)])
    def test_values(self, profile, x, expected):
        assert profile.alpha(1, x) == pytest.approx(expected)

    def test_bounded_by_max_stretch(self, profile, base_params, rng):
        a = profile.alpha(1, rng.uniform(-3.0, 3.0, size=500))
        assert np.all((a >= 1.0) & (a <= base_params.max_stretch))


class TestStretchedCoordinate:
    @pytest.mark.parametrize("x, expected", [(0.5, 0.5), (1.5, 2.0), (2.0, 4.0)])
    def test_values(self, profile, x, expected):
        assert profile.stretched_coordinate(1, x) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("x", [1.5, 2.0, 2.7])
    def test_matches_quadrature_of_alpha(self, profile, x):
        kinks = [k for k in (1.0, 2.0) if k < x]
        numeric, _ = integrate.quad(lambda t: float(profile.alpha(1, t)), 0.0, x, points=kinks)
        assert profile.stretched_coordinate(1, x) == pytest.approx(numeric, rel=1e-12)

    def test_odd_and_increasing(self, profile):
        x = np.linspace(-3.0, 3.0, 601)
        xt = profile.stretched_coordinate(1, x)
        np.testing.assert_allclose(xt, -profile.stretched_coordinate(1, -x), rtol=0, atol=1e-15)
        assert np.all(np.diff(xt) > 0)

    def test_identity_without_absorption(self, base_params):
        flat = PmlProfile(base_params.with_layer(sigma0=0.0))
        x = np.linspace(-2.0, 2.0, 41)
        np.testing.assert_array_equal(flat.stretched_coordinate(2, x), x)

    def test_stretch_points_componentwise(self, profile):
        pts = np.array([[2.0, 0.5, -1.5], [0.0, 0.0, 0.0]])
        np.testing.assert_allclose(profile.stretch_points(pts), [[4.0, 0.5, -2.0], [0.0, 0.0, 0.0]])


class TestSigmaIntegral:
    @pytest.mark.parametrize("m, expected", [(1, 2.0), (2, 4.0 / 3.0)])
    def test_closed_form(self, base_params, m, expected):
        params = PmlParams(**{**base_params.model_dump(), "m": m})
        assert PmlProfile(params).sigma_integral(1) == pytest.approx(expected, rel=1e-15)

    def test_zero_profile(self, base_params):
        assert PmlProfile(base_params.with_layer(sigma0=0.0)).sigma_integral(3) == 0.0


class TestStretchTensors:
    def test_face_point(self, profile):
        diag = profile.stretch_tensors((1.75, 0.0, 0.0))
        assert diag.b == pytest.approx((4.0, 1.0, 1.0))
        assert diag.ba == pytest.approx((4.0, 0.25, 0.25))

    def test_interior_is_identity(self, profile):
        assert profile.stretch_tensors((0.0, 0.0, 0.0)).ba == (1.0, 1.0, 1.0)

    def test_edge_point_attains_bounds(self, profile, base_params):
        diag = profile.stretch_tensors((2.0, 2.0, 0.0))
        assert diag.ba == pytest.approx((1.0, 1.0, 0.04))
        assert min(diag.ba) == pytest.approx(base_params.max_stretch ** -2)
        assert diag.within_bounds(base_params)

    def test_ba_diagonal_matches_tensors(self, profile):
        x = (1.6, -1.9, 0.3)
        arrays = profile.ba_diagonal(*x)
        assert tuple(float(v) for v in arrays) == pytest.approx(profile.stretch_tensors(x).ba, rel=1e-15)


class TestParams:
    def test_negative_sigma0_rejected(self):
        with pytest.raises(ValidationError, match="sigma0 > 0"):
            PmlParams(sigma0=-1.0)

    def test_s1_defaults_to_inverse_horizon(self):
        params = PmlParams(T=4.0)
        assert params.s1 == 0.25
        assert params.s1_is_default

    def test_thin_layer_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="models"):
            PmlParams(L=(20.0, 2.0, 2.0), d=1.0)
        assert "exceeds" in caplog.text

    def test_with_layer_keeps_s1(self, base_params):
        wider = base_params.with_layer(sigma0=8.0, d=0.5)
        assert (wider.sigma0, wider.d, wider.s1) == (8.0, 0.5, 1.0)
        assert wider.max_stretch == 9.0

    def test_breakpoints(self, base_params):
        np.testing.assert_array_equal(profile_breakpoints(base_params, 2), [-2.0, -1.0, 1.0, 2.0])


class TestIdentitySuite:
    def test_sampled_identities_hold(self, base_params, rng):
        results = profile_identity_suite(base_params, rng, n_layers=5, n_points=2000)
        assert results["sigma_integral_max_rel"] < 1e-12
        assert results["derivative_max_rel"] < 1e-6
        assert results["tensor_bound_failures"] == 0.0

    def test_deterministic_for_seed(self, base_params):
        first = profile_identity_suite(base_params, np.random.Generator(np.random.Philox(7)), n_layers=2, n_points=200)
        second = profile_identity_suite(base_params, np.random.Generator(np.random.Philox(7)), n_layers=2, n_points=200)
        assert first == second
        assert math.isfinite(first["derivative_max_rel"])
