"""
Tests for the stretched fundamental solution, dyadic Green's function and layer potentials.
"""

import math

import numpy as np
import pytest

from exceptions import AbscissaMismatchError, DegenerateDistanceError, NearSurfaceError
from models import ExtensionDecayRow, LaplaceFrequency
from services.stretched_kernels import (
    extension_decay_sweep,
    fit_extension_decay,
    kernel_oracle_suite,
    kernel_sweep,
    kernels_for,
    panelize_box,
    sample_box_surface,
    smooth_density,
)

X_OUT = np.array([2.0, 0.0, 0.0])
Y_FACE = np.array([1.0, 0.0, 0.0])


@pytest.fixture
def kernels(base_params):
    return kernels_for(base_params)


@pytest.fixture
def flat_kernels(base_params):
    return kernels_for(base_params.with_layer(sigma0=0.0))


class TestComplexDistance:
    def test_real_frequency(self, kernels):
        assert kernels.complex_distance(X_OUT, Y_FACE, 1.0) == pytest.approx(3.0)

    def test_linear_in_s(self, kernels):
        rho = kernels.complex_distance(X_OUT, Y_FACE, LaplaceFrequency(s1=1.0, s2=2.0))
        assert rho == pytest.approx(3.0 + 6.0j)

    def test_identity_stretching(self, flat_kernels, rng):
        x = rng.uniform(-2.0, 2.0, size=(50, 3))
        y = sample_box_surface(flat_kernels.params.half, 50, rng)
        s = complex(1.0, 0.7)
        np.testing.assert_allclose(
            flat_kernels.complex_distance(x, y, s), s * np.linalg.norm(x - y, axis=-1), rtol=1e-14
        )

    def test_abscissa_mismatch(self, kernels):
        with pytest.raises(AbscissaMismatchError):
            kernels.complex_distance(X_OUT, Y_FACE, 2.0)

    def test_degenerate_distance(self, kernels):
        with pytest.raises(DegenerateDistanceError):
            kernels.stretched_phi(Y_FACE, Y_FACE, 1.0)


class TestStretchedPhi:
    def test_stretched_value(self, kernels):
        assert kernels.stretched_phi(X_OUT, Y_FACE, 1.0) == pytest.approx(math.exp(-3.0) / (12.0 * math.pi), rel=1e-14)
        assert abs(kernels.stretched_phi(X_OUT, Y_FACE, 1.0)) == pytest.approx(1.320643e-3, rel=1e-6)

    def test_unstretched_value(self, flat_kernels):
        assert flat_kernels.stretched_phi(X_OUT, Y_FACE, 1.0) == pytest.approx(math.exp(-1.0) / (4.0 * math.pi))

    def test_bounded_on_outer_boundary(self, kernels, base_params, rng):
        x = sample_box_surface(base_params.half + base_params.d, 500, rng)
        y = sample_box_surface(base_params.half, 500, rng)
        assert np.all(np.abs(kernels.stretched_phi(x, y, 1.0)) <= math.exp(-2.0) / (4.0 * math.pi))


class TestDyadicGreen:
    def test_symmetric(self, kernels, base_params, rng):
        x = sample_box_surface(base_params.half + base_params.d, 20, rng)
        y = sample_box_surface(base_params.half, 20, rng)
        G = kernels.dyadic_green(x, y, LaplaceFrequency(s1=1.0, s2=3.0))
        np.testing.assert_array_equal(G, np.swapaxes(G, -1, -2))

    def test_real_for_real_frequency(self, flat_kernels):
        G = flat_kernels.dyadic_green(X_OUT, np.array([0.3, 1.0, -0.2]), 1.0)
        assert np.all(G.imag == 0.0)

    def test_sample_carries_points(self, kernels):
        sample = kernels.sample(X_OUT, Y_FACE, 1.0)
        assert sample.value.shape == (3, 3)
        assert sample.s == 1.0 + 0.0j

    def test_oracle_suite(self, kernels, rng):
        results = kernel_oracle_suite(kernels, 20, rng, s2_span=10.0)
        assert results["helmholtz_rel"] <= 1e-4
        assert results["gradient_rel"] <= 1e-7
        assert results["hessian_rel"] <= 1e-6
        assert results["green_asymmetry"] == 0.0

    def test_oracle_suite_defaults_to_wide_span(self, kernels):
        wide = kernel_oracle_suite(kernels, 5, np.random.Generator(np.random.Philox(3)))
        explicit = kernel_oracle_suite(kernels, 5, np.random.Generator(np.random.Philox(3)), s2_span=10.0)
        assert wide == explicit

    @staticmethod
    def _second_difference_hessian(kernels, x, y, s, delta):
        eye = np.eye(3)
        fd = np.empty((3, 3), dtype=complex)
        for i in range(3):
            for j in range(3):
                fd[i, j] = (
                    kernels.stretched_phi(x, y + delta * (eye[i] + eye[j]), s)
                    - kernels.stretched_phi(x, y + delta * (eye[i] - eye[j]), s)
                    - kernels.stretched_phi(x, y - delta * (eye[i] - eye[j]), s)
                    + kernels.stretched_phi(x, y - delta * (eye[i] + eye[j]), s)
                ) / (4.0 * delta ** 2)
        return fd

    def test_hessian_by_second_differences(self, kernels):
        y = np.array([0.4, -0.3, 1.0])
        s = LaplaceFrequency(s1=1.0, s2=0.5)
        r = float(np.linalg.norm(kernels.profile.stretch_points(X_OUT) - y))
        fd = self._second_difference_hessian(kernels, X_OUT, y, s, 1e-4 * r)
        hess = kernels.phi_hessian_y(X_OUT, y, s)
        assert np.linalg.norm(fd - hess) / np.linalg.norm(hess) < 1e-6

    @pytest.mark.slow
    def test_hessian_by_second_differences_sampled(self, kernels, base_params, rng):
        x = sample_box_surface(base_params.half + base_params.d, 100, rng)
        y = sample_box_surface(base_params.half, 100, rng)
        s2 = rng.uniform(-base_params.s1, base_params.s1, size=100)
        worst = 0.0
        for xi, yi, s2i in zip(x, y, s2):
            s = LaplaceFrequency(s1=base_params.s1, s2=float(s2i))
            delta = 1e-4 * float(np.linalg.norm(kernels.profile.stretch_points(xi) - yi))
            # Richardson step pair removes the delta^2 term of the second differences
            fd = (
                4.0 * self._second_difference_hessian(kernels, xi, yi, s, 0.5 * delta)
                - self._second_difference_hessian(kernels, xi, yi, s, delta)
            ) / 3.0
            hess = kernels.phi_hessian_y(xi, yi, s)
            worst = max(worst, np.linalg.norm(fd - hess) / np.linalg.norm(hess))
        assert worst < 1e-6


class TestPanels:
    def test_total_area(self, base_params):
        panels = panelize_box(base_params.half, 8)
        assert len(panels) == 6 * 64
        assert panels.total_area == pytest.approx(24.0)

    def test_unit_outward_normals(self, base_params):
        panels = panelize_box(base_params.half, 4)
        np.testing.assert_allclose(np.linalg.norm(panels.normals, axis=1), 1.0)
        assert np.all(np.einsum("ij,ij->i", panels.centers, panels.normals) > 0)

    def test_surface_samples_lie_on_box(self, base_params, rng):
        pts = sample_box_surface(base_params.half, 200, rng)
        np.testing.assert_allclose(np.max(np.abs(pts), axis=1), 1.0)

    def test_panel_model(self, base_params):
        panel = panelize_box(base_params.half, 2).panel(0)
        assert panel.area == pytest.approx(1.0)


class TestLayerPotentials:
    @pytest.fixture
    def panels(self, base_params):
        return panelize_box(base_params.half, 8)

    def test_zero_density(self, kernels, panels):
        zero = np.zeros((len(panels), 3))
        s = kernels.frequency(0.0)
        np.testing.assert_array_equal(kernels.single_layer(zero, X_OUT, s, panels), 0.0)
        np.testing.assert_array_equal(kernels.double_layer(zero, X_OUT, s, panels), 0.0)
        np.testing.assert_array_equal(kernels.pml_extension(zero, zero, X_OUT, s, panels), 0.0)

    def test_linear_in_density(self, kernels, panels):
        s = kernels.frequency(1.5)
        p = smooth_density(panels.centers, 0.3)
        q = smooth_density(panels.centers, -0.7)
        combined = kernels.pml_extension(2.0 * p, -q, X_OUT, s, panels)
        separate = 2.0 * kernels.pml_extension(p, 0.0 * q, X_OUT, s, panels) - kernels.pml_extension(0.0 * p, q, X_OUT, s, panels)
        np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-18)

    def test_panel_refinement(self, kernels, base_params):
        s = kernels.frequency(0.0)
        values = []
        for n in (16, 32):
            panels = panelize_box(base_params.half, n)
            values.append(kernels.single_layer(smooth_density(panels.centers), X_OUT, s, panels))
        assert np.linalg.norm(values[1] - values[0]) < 0.01 * np.linalg.norm(values[1])

    def test_near_surface_rejected(self, kernels, panels):
        q = smooth_density(panels.centers)
        with pytest.raises(NearSurfaceError):
            kernels.single_layer(q, np.array([1.05, 0.0, 0.0]), kernels.frequency(), panels)

    def test_single_layer_decays_with_sigma0(self, base_params, panels):
        q = np.tile([0.0, 0.0, 1.0], (len(panels), 1))
        sizes = []
        for sigma0 in (4.0, 8.0):
            k = kernels_for(base_params.with_layer(sigma0=sigma0))
            sizes.append(np.linalg.norm(k.single_layer(q, X_OUT, k.frequency(), panels)))
        ratio = sizes[1] / sizes[0]
        assert 0.25 * math.exp(-2.0) <= ratio <= 4.0 * math.exp(-2.0)

    def test_extension_curl_is_finite(self, kernels, panels):
        p = smooth_density(panels.centers, 0.3)
        q = smooth_density(panels.centers, -0.7)
        curl = kernels.extension_curl(p, q, X_OUT, kernels.frequency(), panels)
        assert curl.shape == (3,)
        assert np.all(np.isfinite(curl))
        assert np.linalg.norm(curl) > 0.0


class TestDecayBoundCheck:
    def test_no_violations(self, kernels, rng):
        report = kernels.decay_bound_check(10_000, rng)
        assert report.passed
        assert report.n_samples == 10_000
        assert report.min_re_rho >= 2.0
        assert report.min_abs_rho_over_s >= 1.0
        assert report.max_phi_abs <= report.bound_value

    def test_unstretched_distance(self, flat_kernels, rng):
        report = flat_kernels.decay_bound_check(2000, rng)
        assert report.passed
        assert report.min_re_rho >= flat_kernels.params.s1 * flat_kernels.params.d

    def test_empty_request(self, kernels, rng):
        report = kernels.decay_bound_check(0, rng)
        assert report.n_samples == 0
        assert report.violations == []
        assert report.re_rho_bound == pytest.approx(2.0)

    def test_sweep_order(self, base_params, rng):
        reports = kernel_sweep(base_params, [0.0, 4.0], [-1.0, 1.0], 100, rng)
        assert [(r.sigma0, r.s2) for r in reports] == [(0.0, -1.0), (0.0, 1.0), (4.0, -1.0), (4.0, 1.0)]
        assert all(r.passed for r in reports)


class TestExtensionDecay:
    X_POINTS = np.array([[2.0, 0.0, 0.0], [2.0, 2.0, 2.0]])

    @pytest.fixture
    def rows(self, base_params):
        return extension_decay_sweep(base_params, [2.0, 4.0, 8.0], self.X_POINTS, panels_per_edge=8)

    def test_sup_decreases(self, rows):
        assert [r.sigma0 for r in rows] == [2.0, 4.0, 8.0]
        assert [r.layer_exponent for r in rows] == pytest.approx([1.0, 2.0, 4.0])
        assert rows[0].sup_extension > rows[1].sup_extension > rows[2].sup_extension
        assert rows[0].sup_extension_curl > rows[1].sup_extension_curl > rows[2].sup_extension_curl

    def test_exponential_decay_at_bound_rate(self, rows):
        fit = fit_extension_decay(rows)
        assert fit.rate >= 1.0
        assert fit.curl_rate >= 1.0
        for constants in (fit.constants, fit.curl_constants):
            mean = np.mean(constants)
            assert all(0.5 * mean <= c <= 1.5 * mean for c in constants)
        assert fit.violations(0.5) == []

    def test_abscissa_override(self, base_params):
        params = base_params.with_layer(s1=0.5)
        rows = extension_decay_sweep(params, [4.0], self.X_POINTS[:1], panels_per_edge=4, s1=1.0)
        reference = extension_decay_sweep(base_params, [4.0], self.X_POINTS[:1], panels_per_edge=4)
        assert rows[0].sup_extension == pytest.approx(reference[0].sup_extension, rel=1e-12)

    def test_recovers_synthetic_rate(self):
        rows = [
            ExtensionDecayRow(
                sigma0=2.0 * x, sup_extension=3.0 * math.exp(-1.5 * x), sup_extension_curl=5.0 * math.exp(-2.0 * x),
                bound_shape=1.0, curl_bound_shape=1.0, layer_exponent=x,
            )
            for x in (1.0, 2.0, 4.0)
        ]
        fit = fit_extension_decay(rows)
        assert fit.rate == pytest.approx(1.5)
        assert fit.curl_rate == pytest.approx(2.0)
        assert fit.constants == pytest.approx([3.0] * 3)
        assert fit.violations(0.5) == []

    def test_stalled_decay_is_flagged(self):
        sups = [1e-2, 2e-2, 1e-3]
        rows = [
            ExtensionDecayRow(
                sigma0=2.0 * x, sup_extension=v, sup_extension_curl=v,
                bound_shape=1.0, curl_bound_shape=1.0, layer_exponent=x,
            )
            for x, v in zip((1.0, 2.0, 4.0), sups)
        ]
        problems = fit_extension_decay(rows).violations(0.5)
        assert any("rate" in p for p in problems)
        assert any("constants" in p for p in problems)

    def test_needs_two_points(self):
        row = ExtensionDecayRow(sigma0=2.0, sup_extension=1.0, sup_extension_curl=1.0, bound_shape=1.0, curl_bound_shape=1.0)
        with pytest.raises(ValueError):
            fit_extension_decay([row])
