"""
Absorption profiles, real coordinate stretching and the diagonal PML tensors.

All functions are vectorized over numpy arrays and pure; axes are numbered
1..3 as in the Cartesian layer definition.
"""

from typing import Dict, Tuple
import logging

import numpy as np
from scipy import integrate

from models import PmlParams, StretchDiagonal

logger = logging.getLogger(__name__)

ArrayTriple = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _axis_index(axis: int) -> int:
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    return axis - 1


class PmlProfile:
    """Polynomial profile sigma_j, stretching factor alpha_j and stretched x_j."""

    def __init__(self, params: PmlParams):
        self.params = params
        self._half = params.half

    def _depth(self, axis: int, x) -> np.ndarray:
        """Normalized depth into the layer, clipped to [0, 1]."""
        half = self._half[_axis_index(axis)]
        return np.clip((np.abs(np.asarray(x, dtype=float)) - half) / self.params.d, 0.0, 1.0)

    def sigma(self, axis: int, x):
        """0 inside B1, sigma0*depth^m in the layer, sigma0 beyond."""
        return self.params.sigma0 * self._depth(axis, x) ** self.params.m

    def alpha(self, axis: int, x):
        return 1.0 + self.sigma(axis, x) / self.params.s1

    def stretched_coordinate(self, axis: int, x):
        """Closed-form antiderivative of alpha_j from 0 to x (odd, increasing)."""
        p = self.params
        x = np.asarray(x, dtype=float)
        half = self._half[_axis_index(axis)]
        u = self._depth(axis, x)
        beyond = np.maximum(np.abs(x) - half - p.d, 0.0)
        shift = p.sigma0 * p.d / (p.s1 * (p.m + 1)) * u ** (p.m + 1) + p.sigma0 / p.s1 * beyond
        return x + np.sign(x) * shift

    def stretch_points(self, points) -> np.ndarray:
        """Componentwise stretched coordinates of points of shape (..., 3)."""
        points = np.asarray(points, dtype=float)
        return np.stack(
            [self.stretched_coordinate(j + 1, points[..., j]) for j in range(3)], axis=-1
        )

    def sigma_integral(self, axis: int) -> float:
        """Integral of sigma_j over [0, L_j/2 + d]; equals sigma0*d/(m+1)."""
        _axis_index(axis)
        p = self.params
        return p.sigma0 * p.d / (p.m + 1)

    def ba_diagonal(self, x1, x2, x3) -> ArrayTriple:
        """Broadcast (BA)_jj = alpha_j/(alpha_k*alpha_l) over coordinate arrays."""
        a1, a2, a3 = self.alpha(1, x1), self.alpha(2, x2), self.alpha(3, x3)
        return a1 / (a2 * a3), a2 / (a1 * a3), a3 / (a1 * a2)

    def stretch_tensors(self, x) -> StretchDiagonal:
        x = np.asarray(x, dtype=float)
        alphas = [float(self.alpha(j + 1, x[j])) for j in range(3)]
        a1, a2, a3 = alphas
        a = (1.0 / (a2 * a3), 1.0 / (a1 * a3), 1.0 / (a1 * a2))
        b = (a1, a2, a3)
        ba = tuple(bj * aj for bj, aj in zip(b, a))
        ba_inv = tuple(1.0 / v for v in ba)
        return StretchDiagonal(a=a, b=b, ba=ba, ba_inv=ba_inv)


def profile_breakpoints(params: PmlParams, axis: int) -> np.ndarray:
    """Coordinates where sigma_j changes branch (non-smooth for the stretched map)."""
    half = params.half[_axis_index(axis)]
    return np.array([-half - params.d, -half, half, half + params.d])


def profile_identity_suite(
    params: PmlParams,
    rng: np.random.Generator,
    n_layers: int = 20,
    n_points: int = 10_000,
    step: float = 1e-6,
) -> Dict[str, float]:
    """Sampled checks of the closed-form profile identities.

    sigma_integral against adaptive quadrature for random (sigma0, d, m);
    d x~/dx against alpha by central differences away from breakpoints;
    the two-sided BA bounds at random points.
    """
    worst_integral = 0.0
    for _ in range(n_layers):
        layer = params.with_layer(sigma0=float(rng.uniform(0.5, 20.0)), d=float(rng.uniform(0.25, 2.0)))
        layer = PmlParams(**{**layer.model_dump(), "m": int(rng.integers(1, 5))})
        profile = PmlProfile(layer)
        for axis in (1, 2, 3):
            upper = layer.half[axis - 1] + layer.d
            exact = profile.sigma_integral(axis)
            numeric, _ = integrate.quad(
                lambda x: float(profile.sigma(axis, x)), 0.0, upper,
                points=[layer.half[axis - 1]], epsabs=0.0, epsrel=1e-13, limit=200,
            )
            worst_integral = max(worst_integral, abs(numeric - exact) / exact)

    profile = PmlProfile(params)
    worst_derivative = 0.0
    for axis in (1, 2, 3):
        reach = 1.2 * (params.half[axis - 1] + params.d)
        x = rng.uniform(-reach, reach, size=n_points)
        kinks = profile_breakpoints(params, axis)
        x = x[np.min(np.abs(x[:, None] - kinks[None, :]), axis=1) > 1e-4]
        fd = (profile.stretched_coordinate(axis, x + step) - profile.stretched_coordinate(axis, x - step)) / (2 * step)
        alpha = profile.alpha(axis, x)
        worst_derivative = max(worst_derivative, float(np.max(np.abs(fd - alpha) / alpha)))

    reach = 1.2 * (params.half + params.d)
    points = rng.uniform(-reach, reach, size=(min(n_points, 2000), 3))
    bound_failures = sum(0 if profile.stretch_tensors(p).within_bounds(params) else 1 for p in points)

    logger.info(
        f"Profile suite: sigma_integral rel {worst_integral:.2e}, dx~/dx rel {worst_derivative:.2e}, "
        f"{bound_failures} tensor-bound failures"
    )
    return {
        "sigma_integral_max_rel": worst_integral,
        "derivative_max_rel": worst_derivative,
        "tensor_bound_failures": float(bound_failures),
    }
