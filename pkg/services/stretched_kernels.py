"""
Laplace-domain stretched kernels and layer potentials on the box Gamma1.

Field points are stretched componentwise (x -> x~); source points y live on
Gamma1 where the stretching is the identity. With r~ = |x~ - y| and
kappa = sqrt(eps*mu):

    Phi~_s  = exp(-kappa*s*r~) / (4*pi*r~)
    G~      = Phi~_s I + k^-2 grad_y grad_y Phi~_s,   k = i*kappa*s

The radial closed form g(r), g'(r), g''(r) gives gradient and Hessian
without nested differentiation.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union
import logging
import math

import numpy as np
from scipy import stats

from config import KERNEL_CHECK_CONFIG
from exceptions import AbscissaMismatchError, DegenerateDistanceError, NearSurfaceError
from models import DecayReport, ExtensionDecayFit, ExtensionDecayRow, LaplaceFrequency, PmlParams, SurfacePanel
from services.pml_profiles import PmlProfile

logger = logging.getLogger(__name__)

Frequency = Union[LaplaceFrequency, complex]

# ==================== PANELS ====================

@dataclass(frozen=True)
class PanelSet:
    """Midpoint-rule panelization of the surface of prod[-half_j, half_j]."""

    centers: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    half: np.ndarray
    diameter: float

    def __len__(self) -> int:
        return len(self.areas)

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    def panel(self, i: int) -> SurfacePanel:
        return SurfacePanel(
            center=tuple(self.centers[i]), normal=tuple(self.normals[i]), area=float(self.areas[i])
        )

    def distance_to_surface(self, x) -> float:
        x = np.abs(np.asarray(x, dtype=float))
        outside = np.maximum(x - self.half, 0.0)
        if np.any(outside > 0):
            return float(np.linalg.norm(outside))
        return float(np.min(self.half - x))


def panelize_box(half, panels_per_edge: int) -> PanelSet:
    """Uniform n x n rectangular panels on each of the six faces."""
    half = np.asarray(half, dtype=float)
    n = int(panels_per_edge)
    centers, normals, areas = [], [], []
    diameter = 0.0
    for j in range(3):
        k, l = [a for a in range(3) if a != j]
        hk, hl = 2 * half[k] / n, 2 * half[l] / n
        diameter = max(diameter, math.hypot(hk, hl))
        ck = -half[k] + hk * (np.arange(n) + 0.5)
        cl = -half[l] + hl * (np.arange(n) + 0.5)
        gk, gl = np.meshgrid(ck, cl, indexing="ij")
        for side in (-1.0, 1.0):
            c = np.zeros((n * n, 3))
            c[:, j] = side * half[j]
            c[:, k] = gk.ravel()
            c[:, l] = gl.ravel()
            nv = np.zeros((n * n, 3))
            nv[:, j] = side
            centers.append(c)
            normals.append(nv)
            areas.append(np.full(n * n, hk * hl))
    return PanelSet(
        centers=np.concatenate(centers),
        normals=np.concatenate(normals),
        areas=np.concatenate(areas),
        half=half,
        diameter=diameter,
    )


def sample_box_surface(half, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniformly distributed (by area) on the surface of a box."""
    half = np.asarray(half, dtype=float)
    face_area = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    probs = np.repeat(face_area, 2) / np.sum(2 * face_area)
    faces = rng.choice(6, size=n, p=probs)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    side = np.where(faces % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = side * half[axis]
    return pts


def smooth_density(centers: np.ndarray, phase: float = 0.0) -> np.ndarray:
    """Smooth synthetic vector density on panel centers."""
    y = np.asarray(centers)
    return np.stack(
        [
            np.cos(y[:, 1] + phase),
            np.sin(y[:, 2] - phase) + 0.5,
            np.cos(y[:, 0] * y[:, 1] + phase),
        ],
        axis=-1,
    )

# ==================== KERNELS ====================

@dataclass(frozen=True)
class KernelSample:
    value: np.ndarray
    x: np.ndarray
    y: np.ndarray
    s: complex


class StretchedKernels:
    """Stretched fundamental solution, dyadic Green's function and layer potentials."""

    def __init__(self, profile: PmlProfile, degenerate_tol: float = KERNEL_CHECK_CONFIG["degenerate_distance"]):
        self.profile = profile
        self.params: PmlParams = profile.params
        self.kappa = self.params.kappa
        self._min_distance = degenerate_tol * self.params.d

    def frequency(self, s2: float = 0.0) -> LaplaceFrequency:
        return LaplaceFrequency(s1=self.params.s1, s2=s2)

    def _s(self, s: Frequency) -> complex:
        value = s.value if isinstance(s, LaplaceFrequency) else complex(s)
        if abs(value.real - self.params.s1) > 1e-12 * self.params.s1:
            raise AbscissaMismatchError(
                f"Re(s) = {value.real:.17g} differs from the stretching abscissa s1 = {self.params.s1:.17g}"
            )
        return value

    # ---- geometry ----

    def _separation(self, xt, y):
        diff = np.asarray(xt, dtype=float) - np.asarray(y, dtype=float)
        r = np.linalg.norm(diff, axis=-1)
        if np.any(r < self._min_distance):
            raise DegenerateDistanceError(
                f"stretched distance {float(np.min(r)):.3e} below {self._min_distance:.3e}"
            )
        return diff, r

    def _radial(self, r, s: complex):
        """g, g', g'' of g(r) = exp(-kappa*s*r)/(4*pi*r)."""
        ks = self.kappa * s
        g = np.exp(-ks * r) / (4.0 * np.pi * r)
        g1 = -(ks + 1.0 / r) * g
        g2 = (ks * ks + 2.0 * ks / r + 2.0 / r ** 2) * g
        return g, g1, g2

    def complex_distance(self, x, y, s: Frequency):
        s = self._s(s)
        _, r = self._separation(self.profile.stretch_points(x), y)
        return s * r

    def stretched_phi(self, x, y, s: Frequency):
        s = self._s(s)
        _, r = self._separation(self.profile.stretch_points(x), y)
        return self._radial(r, s)[0]

    def _grad_from_stretched(self, xt, y, s: complex):
        diff, r = self._separation(xt, y)
        _, g1, _ = self._radial(r, s)
        e = diff / r[..., None]
        return -g1[..., None] * e

    def _hessian_from_stretched(self, xt, y, s: complex):
        diff, r = self._separation(xt, y)
        _, g1, g2 = self._radial(r, s)
        e = diff / r[..., None]
        ee = e[..., :, None] * e[..., None, :]
        eye = np.eye(3)
        return g2[..., None, None] * ee + (g1 / r)[..., None, None] * (eye - ee)

    def _green_from_stretched(self, xt, y, s: complex):
        diff, r = self._separation(xt, y)
        g, _, _ = self._radial(r, s)
        k2 = -(self.kappa * s) ** 2
        return g[..., None, None] * np.eye(3) + self._hessian_from_stretched(xt, y, s) / k2

    def phi_gradient_y(self, x, y, s: Frequency):
        """grad_y Phi~ = -g'(r~) e with e = (x~ - y)/r~."""
        return self._grad_from_stretched(self.profile.stretch_points(x), y, self._s(s))

    def phi_hessian_y(self, x, y, s: Frequency):
        return self._hessian_from_stretched(self.profile.stretch_points(x), y, self._s(s))

    def dyadic_green(self, x, y, s: Frequency):
        """Symmetric 3x3 (batched) stretched dyadic Green's function."""
        return self._green_from_stretched(self.profile.stretch_points(x), y, self._s(s))

    def sample(self, x, y, s: Frequency) -> KernelSample:
        return KernelSample(value=self.dyadic_green(x, y, s), x=np.asarray(x), y=np.asarray(y), s=self._s(s))

    # ---- layer potentials ----

    def _check_off_surface(self, x, panels: PanelSet):
        dist = panels.distance_to_surface(x)
        if dist < 2.0 * panels.diameter:
            raise NearSurfaceError(
                f"evaluation point {tuple(np.round(np.asarray(x, float), 6))} is {dist:.3e} from Gamma1, "
                f"needs >= {2.0 * panels.diameter:.3e}"
            )

    def _single_from_stretched(self, q, xt, s: complex, panels: PanelSet):
        G = self._green_from_stretched(xt[None, :], panels.centers, s)
        # G is symmetric, so G^T q = G q
        return np.einsum("pij,pj,p->i", G, q, panels.areas)

    def _double_from_stretched(self, p, xt, s: complex, panels: PanelSet):
        grad = self._grad_from_stretched(xt[None, :], panels.centers, s)
        return np.einsum("pi,p->i", np.cross(grad, p), panels.areas)

    def single_layer(self, q, x, s: Frequency, panels: PanelSet):
        x = np.asarray(x, dtype=float)
        self._check_off_surface(x, panels)
        return self._single_from_stretched(np.asarray(q), self.profile.stretch_points(x), self._s(s), panels)

    def double_layer(self, p, x, s: Frequency, panels: PanelSet):
        x = np.asarray(x, dtype=float)
        self._check_off_surface(x, panels)
        return self._double_from_stretched(np.asarray(p), self.profile.stretch_points(x), self._s(s), panels)

    def pml_extension(self, p, q, x, s: Frequency, panels: PanelSet):
        """E(p, q)(x) = -single_layer(q) - double_layer(p)."""
        return -self.single_layer(q, x, s, panels) - self.double_layer(p, x, s, panels)

    def extension_curl(self, p, q, x, s: Frequency, panels: PanelSet, step: Optional[float] = None):
        """curl with respect to x~ of E(p, q), by central differences in x~."""
        x = np.asarray(x, dtype=float)
        self._check_off_surface(x, panels)
        s = self._s(s)
        p, q = np.asarray(p), np.asarray(q)
        xt = self.profile.stretch_points(x)
        delta = step if step is not None else 1e-5 * max(self.params.d, 1.0)

        def field(point):
            return -self._single_from_stretched(q, point, s, panels) - self._double_from_stretched(p, point, s, panels)

        jac = np.empty((3, 3), dtype=complex)  # jac[k, j] = dE_k / dx~_j
        for j in range(3):
            offset = np.zeros(3)
            offset[j] = delta
            jac[:, j] = (field(xt + offset) - field(xt - offset)) / (2.0 * delta)
        return np.array([jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]])

    # ---- decay check ----

    def decay_bound_check(
        self,
        n_samples: int,
        rng: np.random.Generator,
        s2_span: float = KERNEL_CHECK_CONFIG["s2_span"],
        s2_fixed: Optional[float] = None,
        tolerance: float = KERNEL_CHECK_CONFIG["violation_tolerance"],
    ) -> DecayReport:
        """Sample x on Gamma2, y on Gamma1, s2 in [-span*s1, span*s1]; check distance and kernel bounds."""
        p = self.params
        re_bound = p.sigma0 * p.d / (p.m + 1)
        phi_bound = math.exp(-self.kappa * re_bound) / (4.0 * math.pi * p.d)
        report = DecayReport(sigma0=p.sigma0, d=p.d, m=p.m, re_rho_bound=re_bound, bound_value=phi_bound)
        if n_samples <= 0:
            return report

        x = sample_box_surface(p.half + p.d, n_samples, rng)
        y = sample_box_surface(p.half, n_samples, rng)
        if s2_fixed is None:
            s2 = rng.uniform(-s2_span * p.s1, s2_span * p.s1, size=n_samples)
        else:
            s2 = np.full(n_samples, float(s2_fixed))
        s = p.s1 + 1j * s2

        _, r = self._separation(self.profile.stretch_points(x), y)
        rho = s * r
        abs_rho_over_s = np.abs(rho / s)
        re_rho = rho.real
        phi_abs = np.abs(self._radial(r, s)[0])

        bad = (
            (abs_rho_over_s < p.d - tolerance)
            | (re_rho < re_bound - tolerance)
            | (phi_abs > phi_bound + tolerance)
        )
        violations = [
            {
                "index": int(i),
                "x": x[i].tolist(),
                "y": y[i].tolist(),
                "s2": float(s2[i]),
                "abs_rho_over_s": float(abs_rho_over_s[i]),
                "re_rho": float(re_rho[i]),
                "phi_abs": float(phi_abs[i]),
            }
            for i in np.flatnonzero(bad)
        ]
        worst = int(np.argmin(re_rho))
        report = report.model_copy(
            update={
                "s2": float(s2[worst]),
                "n_samples": n_samples,
                "min_re_rho": float(np.min(re_rho)),
                "min_abs_rho_over_s": float(np.min(abs_rho_over_s)),
                "max_phi_abs": float(np.max(phi_abs)),
                "violations": violations,
            }
        )
        if violations:
            logger.error(f"{len(violations)} decay-bound violations for sigma0={p.sigma0:g}, d={p.d:g}")
        return report

# ==================== SWEEPS ====================

def kernels_for(params: PmlParams) -> StretchedKernels:
    return StretchedKernels(PmlProfile(params))


def kernel_sweep(
    params: PmlParams,
    sigma0_values: Iterable[float],
    s2_values: Iterable[float],
    n_samples: int,
    rng: np.random.Generator,
) -> List[DecayReport]:
    """One decay check per (sigma0, s2), in input order."""
    reports = []
    for sigma0 in sigma0_values:
        kernels = kernels_for(params.with_layer(sigma0=sigma0))
        for s2 in s2_values:
            reports.append(kernels.decay_bound_check(n_samples, rng, s2_fixed=s2))
    return reports


def extension_decay_sweep(
    params: PmlParams,
    sigma0_values: Sequence[float],
    x_points: np.ndarray,
    panels_per_edge: int,
    s2: float = 0.0,
    density: Callable[[np.ndarray, float], np.ndarray] = smooth_density,
    s1: Optional[float] = None,
) -> List[ExtensionDecayRow]:
    """Sampled sup over x_points of |E(p,q)| and |curl~ E(p,q)| per sigma0.

    Bound shapes carry the sigma0-dependent factors of the decay estimate;
    constants and density norms are left to the fitted constant. s1 replaces
    the stored abscissa when given.
    """
    panels = panelize_box(params.half, panels_per_edge)
    p = density(panels.centers, 0.3)
    q = density(panels.centers, -0.7)
    rows = []
    for sigma0 in sigma0_values:
        layer = params.with_layer(sigma0=sigma0, s1=s1)
        kernels = kernels_for(layer)
        s = kernels.frequency(s2)
        ext = [np.linalg.norm(kernels.pml_extension(p, q, x, s, panels)) for x in x_points]
        curl = [np.linalg.norm(kernels.extension_curl(p, q, x, s, panels)) for x in x_points]
        exponent = layer.kappa * layer.sigma0 * layer.d / (layer.m + 1)
        rows.append(
            ExtensionDecayRow(
                sigma0=sigma0,
                sup_extension=float(max(ext)),
                sup_extension_curl=float(max(curl)),
                bound_shape=math.sqrt(layer.d) * layer.max_stretch ** 2 * math.exp(-exponent),
                curl_bound_shape=math.sqrt(layer.d) * layer.max_stretch ** 3 * math.exp(-exponent),
                layer_exponent=exponent,
            )
        )
        logger.info(f"extension sweep sigma0={sigma0:g}: sup|E|={rows[-1].sup_extension:.4e}")
    return rows


def fit_extension_decay(rows: Sequence[ExtensionDecayRow]) -> ExtensionDecayFit:
    """Fit log sup|E| = log C - rate * kappa*sigma0*d/(m+1) for the field and its curl."""
    if len(rows) < 2:
        raise ValueError("extension decay fit needs at least two sigma0 values")
    x = np.array([r.layer_exponent for r in rows])
    rates, constants = [], []
    for sups in ([r.sup_extension for r in rows], [r.sup_extension_curl for r in rows]):
        fit = stats.linregress(x, np.log(sups))
        rates.append(-float(fit.slope))
        constants.append([float(v) for v in np.asarray(sups) * np.exp(-fit.slope * x)])
    result = ExtensionDecayFit(
        rate=rates[0], curl_rate=rates[1], constants=constants[0], curl_constants=constants[1]
    )
    logger.info(f"extension decay rate {result.rate:.4g}, curl rate {result.curl_rate:.4g}")
    return result


def _first_difference(f, y, delta: float, axis: int):
    """Fourth-order central first difference of f along one axis at y."""
    e = np.eye(3)[axis] * delta
    return (-f(y + 2.0 * e) + 8.0 * f(y + e) - 8.0 * f(y - e) + f(y - 2.0 * e)) / (12.0 * delta)


def _second_difference(f, y, delta: float, axis: int, center):
    """Fourth-order central second difference of f along one axis at y; center is f(y)."""
    e = np.eye(3)[axis] * delta
    return (
        -f(y + 2.0 * e) + 16.0 * f(y + e) - 30.0 * center + 16.0 * f(y - e) - f(y - 2.0 * e)
    ) / (12.0 * delta ** 2)


def kernel_oracle_suite(
    kernels: StretchedKernels,
    n_samples: int,
    rng: np.random.Generator,
    s2_span: float = KERNEL_CHECK_CONFIG["s2_span"],
) -> Dict[str, float]:
    """Finite-difference oracles for Phi~, its y-gradient and y-Hessian, plus symmetry of G~.

    Samples x on Gamma2 and y on Gamma1 with |s2| <= span*s1. Five-point
    stencils keep the truncation error of the Helmholtz residual near
    (delta*|s|)^4, so the check holds out to |s2| = 10*s1.
    """
    p = kernels.params
    x = sample_box_surface(p.half + p.d, n_samples, rng)
    y = sample_box_surface(p.half, n_samples, rng)
    s2 = rng.uniform(-s2_span * p.s1, s2_span * p.s1, size=n_samples)
    worst = {"helmholtz_rel": 0.0, "gradient_rel": 0.0, "hessian_rel": 0.0, "green_asymmetry": 0.0}

    for xi, yi, s2i in zip(x, y, s2):
        s = kernels.frequency(float(s2i))
        ks = kernels.kappa * s.value
        r = float(np.linalg.norm(kernels.profile.stretch_points(xi) - yi))
        phi = kernels.stretched_phi(xi, yi, s)

        def phi_at(point):
            return kernels.stretched_phi(xi, point, s)

        def grad_at(point):
            return kernels.phi_gradient_y(xi, point, s)

        delta = 1e-3 * r
        lap = sum(_second_difference(phi_at, yi, delta, j, phi) for j in range(3))
        scale = abs(phi) * (abs(ks) + 1.0 / r) ** 2
        worst["helmholtz_rel"] = max(worst["helmholtz_rel"], abs(lap - ks * ks * phi) / scale)

        delta = 1e-5 * r
        grad = kernels.phi_gradient_y(xi, yi, s)
        fd_grad = np.array([_first_difference(phi_at, yi, delta, j) for j in range(3)])
        worst["gradient_rel"] = max(worst["gradient_rel"], np.linalg.norm(fd_grad - grad) / np.linalg.norm(grad))

        hess = kernels.phi_hessian_y(xi, yi, s)
        fd_hess = np.stack([_first_difference(grad_at, yi, delta, j) for j in range(3)], axis=-1)
        worst["hessian_rel"] = max(worst["hessian_rel"], np.linalg.norm(fd_hess - hess) / np.linalg.norm(hess))

        G = kernels.dyadic_green(xi, yi, s)
        worst["green_asymmetry"] = max(worst["green_asymmetry"], float(np.max(np.abs(G - G.T))))

    logger.info(
        "Kernel oracles: " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    )
    return {k: float(v) for k, v in worst.items()}
