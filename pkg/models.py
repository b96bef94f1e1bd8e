from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Tuple
from enum import Enum
from functools import lru_cache
import logging
import math

import numpy as np
from numpy.polynomial import hermite

from config import PML_DEFAULTS, SOLVER_CONFIG, KERNEL_CHECK_CONFIG, ACCEPTANCE_CONFIG
from exceptions import ConfigError, EnlargementError, GridAlignmentError, SourceSupportError

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

# ==================== ENUMS ====================

class Component(str, Enum):
    EX = "Ex"
    EY = "Ey"
    EZ = "Ez"
    HX = "Hx"
    HY = "Hy"
    HZ = "Hz"

    @property
    def id(self) -> int:
        return list(Component).index(self)

    @property
    def axis(self) -> int:
        """Zero-based Cartesian axis of the component."""
        return self.id % 3

    @property
    def is_electric(self) -> bool:
        return self.id < 3

class Medium(str, Enum):
    PML = "pml"
    VACUUM = "vacuum"

class NormKind(str, Enum):
    L2 = "l2"
    LINF = "linf"

# ==================== PML PARAMETERS ====================

def _is_multiple(value: float, h: float, rtol: float = 1e-9) -> bool:
    q = value / h
    return abs(q - round(q)) <= rtol * max(1.0, abs(q))

class PmlParams(BaseModel):
    """Physical and layer parameters. Axis-independent d and sigma0."""

    model_config = ConfigDict(frozen=True)

    eps: float = Field(default=PML_DEFAULTS["eps"], gt=0.0)
    mu: float = Field(default=PML_DEFAULTS["mu"], gt=0.0)
    L: Vec3 = tuple(PML_DEFAULTS["L"])
    d: float = Field(default=PML_DEFAULTS["d"], gt=0.0)
    sigma0: float = PML_DEFAULTS["sigma0"]
    m: int = Field(default=PML_DEFAULTS["m"], ge=1)
    s1: Optional[float] = None
    T: float = Field(default=PML_DEFAULTS["T"], gt=0.0)
    thickness_ratio_limit: float = Field(default=PML_DEFAULTS["thickness_ratio_limit"], gt=0.0)

    @model_validator(mode="before")
    @classmethod
    def default_s1(cls, data):
        if isinstance(data, dict) and data.get("s1") is None:
            data = dict(data)
            data["s1"] = 1.0 / float(data.get("T", PML_DEFAULTS["T"]))
        return data

    @field_validator("sigma0")
    @classmethod
    def check_sigma0(cls, v: float) -> float:
        if v < 0:
            raise ValueError("absorption constant must satisfy sigma0 > 0 (sigma0 = 0 is the identity layer)")
        return v

    @field_validator("s1")
    @classmethod
    def check_s1(cls, v: float) -> float:
        if v is None or v <= 0:
            raise ValueError("Laplace abscissa must satisfy s1 > 0")
        return v

    @field_validator("L")
    @classmethod
    def check_L(cls, v: Vec3) -> Vec3:
        if any(x <= 0 for x in v):
            raise ValueError("box edge lengths must satisfy L_j > 0")
        return v

    @model_validator(mode="after")
    def report_thickness(self) -> "PmlParams":
        ratio = max(self.L) / self.d
        if ratio > self.thickness_ratio_limit:
            logger.warning(
                f"max(L)/d = {ratio:.3g} exceeds C0 = {self.thickness_ratio_limit:.3g} "
                "(layer assumed comparable to the box)"
            )
        if self.d < 1.0:
            logger.info(f"PML thickness d = {self.d:.3g} < 1")
        if not self.s1_is_default:
            logger.info(f"s1 = {self.s1:.6g} overrides the default 1/T = {1.0 / self.T:.6g}")
        return self

    @property
    def s1_is_default(self) -> bool:
        return math.isclose(self.s1, 1.0 / self.T, rel_tol=1e-12)

    @property
    def kappa(self) -> float:
        """sqrt(eps*mu), the inverse wave speed."""
        return math.sqrt(self.eps * self.mu)

    @property
    def c(self) -> float:
        return 1.0 / self.kappa

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.asarray(self.L, dtype=float)

    @property
    def max_stretch(self) -> float:
        """1 + sigma0/s1, the largest value of any alpha_j."""
        return 1.0 + self.sigma0 / self.s1

    def with_layer(self, sigma0: float = None, d: float = None, s1: float = None) -> "PmlParams":
        """Copy with a different (sigma0, d); s1 is kept as stored unless given."""
        data = self.model_dump()
        if sigma0 is not None:
            data["sigma0"] = sigma0
        if d is not None:
            data["d"] = d
        if s1 is not None:
            data["s1"] = s1
        return PmlParams(**data)

class StretchDiagonal(BaseModel):
    """Diagonal entries of A, B, BA and (BA)^-1 at one point."""

    model_config = ConfigDict(frozen=True)

    a: Vec3
    b: Vec3
    ba: Vec3
    ba_inv: Vec3

    @model_validator(mode="after")
    def check_products(self) -> "StretchDiagonal":
        for j in range(3):
            if min(self.a[j], self.b[j], self.ba[j], self.ba_inv[j]) <= 0:
                raise ValueError("stretch entries must be strictly positive")
            if not math.isclose(self.ba[j], self.b[j] * self.a[j], rel_tol=1e-12):
                raise ValueError("ba must equal b*a entrywise")
            if not math.isclose(self.ba_inv[j] * self.ba[j], 1.0, rel_tol=1e-12):
                raise ValueError("ba_inv must invert ba entrywise")
        return self

    def within_bounds(self, params: PmlParams, rtol: float = 1e-12) -> bool:
        """Two-sided bounds of BA and (BA)^-1 in terms of 1 + sigma0/s1."""
        q = params.max_stretch
        lo, hi = q ** -2 * (1 - rtol), q * (1 + rtol)
        lo_inv, hi_inv = q ** -1 * (1 - rtol), q ** 2 * (1 + rtol)
        return all(lo <= v <= hi for v in self.ba) and all(lo_inv <= v <= hi_inv for v in self.ba_inv)

# ==================== KERNEL MODELS ====================

class LaplaceFrequency(BaseModel):
    model_config = ConfigDict(frozen=True)

    s1: float = Field(..., gt=0.0)
    s2: float = 0.0

    @property
    def value(self) -> complex:
        return complex(self.s1, self.s2)

class SurfacePanel(BaseModel):
    model_config = ConfigDict(frozen=True)

    center: Vec3
    normal: Vec3
    area: float = Field(..., gt=0.0)

class DecayReport(BaseModel):
    """Sampled check of the complex-distance and kernel bounds on Gamma2 x Gamma1."""

    sigma0: float
    d: float
    m: int
    s2: float = 0.0  # s2 of the sample attaining min Re(rho)
    n_samples: int = 0
    min_re_rho: float = math.inf
    min_abs_rho_over_s: float = math.inf
    max_phi_abs: float = 0.0
    re_rho_bound: float = 0.0
    bound_value: float = 0.0  # bound on |Phi|
    violations: List[dict] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

class ExtensionDecayRow(BaseModel):
    sigma0: float
    sup_extension: float
    sup_extension_curl: float
    bound_shape: float
    curl_bound_shape: float
    layer_exponent: float = 0.0  # kappa*sigma0*d/(m+1)

    @property
    def fitted_constant(self) -> float:
        return self.sup_extension / self.bound_shape

    @property
    def fitted_curl_constant(self) -> float:
        return self.sup_extension_curl / self.curl_bound_shape

class ExtensionDecayFit(BaseModel):
    """Log-linear fit of sup|E| and sup|curl~ E| against kappa*sigma0*d/(m+1).

    The bound predicts a rate of at least one; constants are sup * exp(rate * x)
    at each sampled sigma0 and stay near their mean when the decay is exponential.
    """

    rate: float
    curl_rate: float
    constants: List[float]
    curl_constants: List[float]

    def violations(self, band: float) -> List[str]:
        problems = []
        for name, rate, constants in (
            ("extension", self.rate, self.constants),
            ("curl extension", self.curl_rate, self.curl_constants),
        ):
            if not rate >= 1.0:
                problems.append(f"{name} decays at rate {rate:.4g} < 1 in kappa*sigma0*d/(m+1)")
            mean = float(np.mean(constants))
            spread = [c for c in constants if abs(c - mean) > band * mean]
            if spread:
                problems.append(f"{name} constants {constants} leave +-{band:.0%} of their mean {mean:.4g}")
        return problems

# ==================== SOLVER MODELS ====================

class GridSpec(BaseModel):
    """Uniform grid on B2 = prod[-L_j/2-d, L_j/2+d]."""

    model_config = ConfigDict(frozen=True)

    n: Tuple[int, int, int]
    h: float = Field(..., gt=0.0)
    origin: Vec3

    @field_validator("n")
    @classmethod
    def check_n(cls, v):
        if any(k < SOLVER_CONFIG["min_cells_per_axis"] for k in v):
            raise ValueError(f"grid needs at least {SOLVER_CONFIG['min_cells_per_axis']} cells per axis")
        return v

    @classmethod
    def for_half_widths(cls, half_widths, h: float, interfaces=()) -> "GridSpec":
        """Grid on prod[-w_j, w_j]; every half-width and interface must sit on a cell face."""
        for value in list(half_widths) + list(interfaces):
            if not _is_multiple(value, h):
                raise GridAlignmentError(
                    f"{value:.17g} is not an integer multiple of h = {h:.17g}",
                    rule="Gamma1 and Gamma2 must lie on cell faces",
                )
        n = tuple(int(round(2 * w / h)) for w in half_widths)
        if any(k < SOLVER_CONFIG["min_cells_per_axis"] for k in n):
            raise GridAlignmentError(
                f"grid {n} has fewer than {SOLVER_CONFIG['min_cells_per_axis']} cells on an axis",
                rule="n_j >= 8",
            )
        return cls(n=n, h=h, origin=tuple(-float(w) for w in half_widths))

    @classmethod
    def for_params(cls, params: PmlParams, h: float) -> "GridSpec":
        half = params.half
        return cls.for_half_widths(half + params.d, h, interfaces=list(half) + [params.d])

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.n) * self.h

    def index_of(self, x: float, axis: int) -> int:
        """Node index of coordinate x on the given zero-based axis."""
        return int(round((x - self.origin[axis]) / self.h))

@lru_cache(maxsize=None)
def _report_loud_start(t0: float, tau: float, relative: float) -> None:
    """Logged once per (t0, tau, level)."""
    logger.warning(
        f"source t0={t0:g}, tau={tau:g}: max |d^j J/dt^j (0)| for j <= 9 is "
        f"{relative:.3e}*amplitude, above 1e-12*amplitude"
    )

class SourceSpec(BaseModel):
    """Gaussian-in-time dipole J(t) = amplitude*exp(-(t-t0)^2/tau^2).

    width > 0 spreads the dipole over a spatial Gaussian of that width.
    """

    model_config = ConfigDict(frozen=True)

    location: Vec3 = (0.0, 0.0, 0.0)
    polarization: int = Field(default=3, ge=1, le=3)
    amplitude: float = 1.0
    t0: float = Field(default=3.0, ge=0.0)
    tau: float = Field(default=0.5, gt=0.0)
    width: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def check_start(self) -> "SourceSpec":
        if self.t0 < 6.0 * self.tau * (1 - 1e-12):
            raise ValueError("pulse must start quiet: t0 >= 6*tau")
        if self.amplitude != 0.0:
            relative = self.max_initial_derivative() / abs(self.amplitude)
            if relative > 1e-12:
                _report_loud_start(self.t0, self.tau, relative)
        return self

    def waveform(self, t):
        return self.amplitude * np.exp(-((np.asarray(t) - self.t0) / self.tau) ** 2)

    def waveform_derivative(self, t):
        u = (np.asarray(t) - self.t0) / self.tau
        return -2.0 * u / self.tau * self.amplitude * np.exp(-u * u)

    def max_initial_derivative(self, j_max: int = 9) -> float:
        """max_j |d^j J/dt^j| at t = 0 via physicists' Hermite polynomials."""
        u = -self.t0 / self.tau
        worst = 0.0
        for j in range(j_max + 1):
            coef = np.zeros(j + 1)
            coef[j] = 1.0
            value = abs(hermite.hermval(u, coef)) * math.exp(-u * u) / self.tau ** j
            worst = max(worst, value * abs(self.amplitude))
        return worst

    @property
    def axis(self) -> int:
        return self.polarization - 1

    @property
    def support_radius(self) -> float:
        return 4.0 * self.width

class ScattererSpec(BaseModel):
    """Axis-aligned PEC cuboid [lo, hi]."""

    model_config = ConfigDict(frozen=True)

    lo: Vec3
    hi: Vec3

    @model_validator(mode="after")
    def check_order(self) -> "ScattererSpec":
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("scatterer needs lo < hi on every axis")
        return self

class StabilityReport(BaseModel):
    sigma0: float
    T: float
    steps: int
    max_norm_sum: float
    source_h1_norm: float
    bound_factor: float

    @property
    def ratio(self) -> float:
        denom = self.bound_factor * self.source_h1_norm
        return self.max_norm_sum / denom if denom > 0 else 0.0

# ==================== CONVERGENCE MODELS ====================

class ErrorReport(BaseModel):
    sigma0: float
    d: float
    l2_hcurl_E: float = Field(..., ge=0.0)
    l2_hcurl_H: float = Field(..., ge=0.0)
    linf_hcurl_E: float = Field(..., ge=0.0)
    linf_hcurl_H: float = Field(..., ge=0.0)
    theory_exponent: float
    floor_estimate: float = 0.0
    floor_estimate_linf: float = 0.0

    @property
    def sigma0_d(self) -> float:
        return self.sigma0 * self.d

    def total(self, norm: NormKind = NormKind.L2) -> float:
        if norm == NormKind.LINF:
            return self.linf_hcurl_E + self.linf_hcurl_H
        return self.l2_hcurl_E + self.l2_hcurl_H

    def floor(self, norm: NormKind = NormKind.L2) -> float:
        return self.floor_estimate_linf if norm == NormKind.LINF else self.floor_estimate

class DecayFit(BaseModel):
    rate: float
    intercept: float
    r_squared: float = Field(..., ge=0.0, le=1.0)
    n_points_used: int
    norm: NormKind = NormKind.L2

# ==================== RUN CONFIGURATION ====================

class GridSettings(BaseModel):
    h: float = Field(default=0.125, gt=0.0)

class SimulationSettings(BaseModel):
    medium: Medium = Medium.PML
    cfl_factor: float = Field(default=SOLVER_CONFIG["cfl_factor"], gt=0.0, le=1.0)
    nan_check_every: int = Field(default=SOLVER_CONFIG["nan_check_every"], ge=1)
    probe: Vec3 = (0.5, 0.0, 0.0)
    snapshot_every: int = Field(default=0, ge=0)  # 0: final state only

class SweepSettings(BaseModel):
    sigma0_values: List[float] = Field(default_factory=lambda: [0.0, 4.0, 8.0, 12.0, 16.0, 20.0])
    d_values: List[float] = Field(default_factory=lambda: [0.5])
    reference_margin: float = Field(default=4.0, gt=0.0)
    record_every: int = Field(default=0, ge=0)  # 0: choose from record_interval
    record_interval: float = Field(default=0.1, gt=0.0)
    estimate_floor: bool = True

    @field_validator("sigma0_values")
    @classmethod
    def check_sigmas(cls, v):
        if not v:
            raise ValueError("sweep needs at least one sigma0")
        if any(s < 0 for s in v):
            raise ValueError("sweep absorption constants must satisfy sigma0 >= 0")
        return v

    @field_validator("d_values")
    @classmethod
    def check_ds(cls, v):
        if not v or any(d <= 0 for d in v):
            raise ValueError("sweep thicknesses must satisfy d > 0")
        return v

class KernelSettings(BaseModel):
    n_samples: int = Field(default=KERNEL_CHECK_CONFIG["n_samples"], ge=0)
    s2_span: float = Field(default=KERNEL_CHECK_CONFIG["s2_span"], ge=0.0)
    panels_per_edge: int = Field(default=KERNEL_CHECK_CONFIG["panels_per_edge"], ge=1)
    oracle_samples: int = Field(default=100, ge=1)
    extension_sigma0_values: List[float] = Field(
        default_factory=lambda: list(KERNEL_CHECK_CONFIG["extension_sigma0_values"]), min_length=3
    )
    extension_s1: float = Field(default=KERNEL_CHECK_CONFIG["extension_s1"], gt=0.0)
    extension_constant_band: float = Field(default=KERNEL_CHECK_CONFIG["extension_constant_band"], gt=0.0, lt=1.0)

class AcceptanceSettings(BaseModel):
    min_rate: float = ACCEPTANCE_CONFIG["min_rate"]
    min_r_squared: float = ACCEPTANCE_CONFIG["min_r_squared"]
    floor_factor: float = Field(default=ACCEPTANCE_CONFIG["floor_factor"], gt=0.0)
    min_points: int = Field(default=ACCEPTANCE_CONFIG["min_points"], ge=2)
    first_error_drop: float = ACCEPTANCE_CONFIG["first_error_drop"]

class SweepConfig(BaseModel):
    """Everything one sweep needs; built from RunConfig.sweep_config()."""

    base: PmlParams
    source: SourceSpec
    scatterer: Optional[ScattererSpec] = None
    sigma0_values: List[float]
    d_values: List[float]
    h: float
    reference_margin: float
    record_every: int = 0
    record_interval: float = 0.1
    estimate_floor: bool = True
    cfl_factor: float = SOLVER_CONFIG["cfl_factor"]

    @model_validator(mode="after")
    def check_geometry(self) -> "SweepConfig":
        half = self.base.half
        for d in self.d_values:
            if not _is_multiple(d, self.h):
                raise GridAlignmentError(f"sweep thickness d = {d:.17g} is not a multiple of h", rule="d grid-aligned")
        if not _is_multiple(self.reference_margin, self.h):
            raise GridAlignmentError("reference margin is not a multiple of h", rule="reference wall on a cell face")
        # earliest return of a wall echo into B1 must come after T
        c = self.base.c
        src = np.abs(np.asarray(self.source.location))
        wall = half + self.reference_margin
        echo_path = np.min((wall - src) + (wall - half))
        if echo_path < c * self.base.T * (1 - 1e-12):
            raise EnlargementError(
                f"reference wall echo path {echo_path:.6g} is shorter than c*T = {c * self.base.T:.6g}",
                rule="reference half-width >= source-to-boundary distance + c*T/2 + margin",
            )
        return self

    def reference_half_widths(self) -> np.ndarray:
        return self.base.half + self.reference_margin

class RunConfig(BaseModel):
    """Validated full configuration."""

    pml: PmlParams = Field(default_factory=PmlParams)
    grid: GridSettings = Field(default_factory=GridSettings)
    source: SourceSpec = Field(default_factory=SourceSpec)
    scatterer: Optional[ScattererSpec] = None
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    kernels: KernelSettings = Field(default_factory=KernelSettings)
    acceptance: AcceptanceSettings = Field(default_factory=AcceptanceSettings)

    @model_validator(mode="after")
    def check_cross_invariants(self) -> "RunConfig":
        half = self.pml.half
        h = self.grid.h
        GridSpec.for_params(self.pml, h)
        loc = np.abs(np.asarray(self.source.location))
        if np.any(loc + self.source.support_radius >= half):
            raise SourceSupportError(
                f"source at {self.source.location} (support radius {self.source.support_radius:.3g}) leaves B1",
                rule="J compactly supported in B1",
            )
        if self.scatterer is not None:
            lo, hi = np.asarray(self.scatterer.lo), np.asarray(self.scatterer.hi)
            for value in np.concatenate([lo, hi]):
                if not _is_multiple(value, h):
                    raise GridAlignmentError("scatterer faces must align to the grid", rule="PEC faces on cell faces")
            if np.any(lo < -half + 2 * h - 1e-12) or np.any(hi > half - 2 * h + 1e-12):
                raise ConfigError("scatterer must sit inside B1 with a 2-cell margin", rule="scatterer strictly in B1")
            src = np.asarray(self.source.location)
            if np.all(src >= lo - self.source.support_radius) and np.all(src <= hi + self.source.support_radius):
                raise SourceSupportError("source overlaps the scatterer", rule="J supported outside the PEC body")
        probe = np.abs(np.asarray(self.simulation.probe))
        if np.any(probe > half + self.pml.d):
            raise ConfigError("probe lies outside B2", rule="probe inside the computational box")
        # sweep thicknesses and the reference enlargement
        self.sweep_config()
        return self

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(
            base=self.pml,
            source=self.source,
            scatterer=self.scatterer,
            sigma0_values=self.sweep.sigma0_values,
            d_values=self.sweep.d_values,
            h=self.grid.h,
            reference_margin=self.sweep.reference_margin,
            record_every=self.sweep.record_every,
            record_interval=self.sweep.record_interval,
            estimate_floor=self.sweep.estimate_floor,
            cfl_factor=self.simulation.cfl_factor,
        )

class RunManifest(BaseModel):
    config_digest: str
    tool_version: str
    command: str
    started_at: str
    finished_at: Optional[str] = None
    seed: int = Field(..., ge=0, lt=2 ** 64)
    rng_algorithm: str
    outputs: List[str] = Field(default_factory=list)
