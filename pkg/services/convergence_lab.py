"""
Reference oracle, H(curl) error norms on the interior box, sweeps and decay fits.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy import integrate, stats

from config import ACCEPTANCE_CONFIG, RUNTIME_CONFIG, SOLVER_CONFIG
from exceptions import ConfigError, GridAlignmentError, InsufficientDataError
from models import (
    AcceptanceSettings,
    Component,
    DecayFit,
    ErrorReport,
    GridSpec,
    Medium,
    NormKind,
    PmlParams,
    ScattererSpec,
    SourceSpec,
    StabilityReport,
    SweepConfig,
)
from services.yee_solver import (
    CURL_POSITION,
    E_COMPONENTS,
    H_COMPONENTS,
    FieldHistory,
    RecordRegion,
    Simulation,
    cfl_timestep,
)

logger = logging.getLogger(__name__)

# ==================== RUN HELPERS ====================

def shared_timestep(config: SweepConfig) -> float:
    """Smallest CFL step over the sweep's sigma0 values; used by every run of the sweep."""
    grid = GridSpec.for_params(config.base.with_layer(d=config.d_values[0]), config.h)
    worst = config.base.with_layer(sigma0=max(config.sigma0_values))
    return cfl_timestep(grid, worst, config.cfl_factor)


def record_cadence(config: SweepConfig, dt: float) -> int:
    if config.record_every:
        return config.record_every
    return max(1, int(round(config.record_interval / dt)))


def step_count(t_end: float, dt: float) -> int:
    return int(math.ceil(t_end / dt - 1e-9))


def reference_run(
    config: SweepConfig,
    dt: Optional[float] = None,
    margin: Optional[float] = None,
    budget_bytes: int = RUNTIME_CONFIG["storage_budget_bytes"],
) -> FieldHistory:
    """Plain vacuum run on the enlarged box; records the interior box over (0, T]."""
    if margin is not None:
        config = SweepConfig.model_validate({**config.model_dump(), "reference_margin": margin})
    base = config.base
    dt = shared_timestep(config) if dt is None else dt
    grid = GridSpec.for_half_widths(config.reference_half_widths(), config.h, interfaces=list(base.half))
    sim = Simulation.build(
        grid,
        base.with_layer(sigma0=0.0),
        config.source,
        scatterer=config.scatterer,
        dt=dt,
        medium=Medium.VACUUM,
    )
    logger.info(f"Reference run: half-widths {tuple(config.reference_half_widths())}, {grid.n} cells")
    return sim.record(
        RecordRegion.interior(base),
        record_cadence(config, dt),
        step_count(base.T, dt),
        budget_bytes,
    )


def pml_run(
    config: SweepConfig,
    sigma0: float,
    d: float,
    dt: float,
    budget_bytes: int = RUNTIME_CONFIG["storage_budget_bytes"],
) -> FieldHistory:
    params = config.base.with_layer(sigma0=sigma0, d=d)
    grid = GridSpec.for_params(params, config.h)
    sim = Simulation.build(grid, params, config.source, scatterer=config.scatterer, dt=dt)
    return sim.record(
        RecordRegion.interior(params),
        record_cadence(config, dt),
        step_count(params.T, dt),
        budget_bytes,
    )

# ==================== ERROR NORMS ====================

def _check_compatible(ref: FieldHistory, pml: FieldHistory, grid: GridSpec, dt: float) -> None:
    rule = "histories share grid, cadence and duration"
    if ref.times.shape != pml.times.shape or not np.allclose(ref.times, pml.times, rtol=1e-12, atol=0.0):
        raise ConfigError("histories have different timestamps", rule=rule)
    if not math.isclose(ref.h, grid.h) or not math.isclose(pml.h, grid.h):
        raise ConfigError("history spacing differs from the grid", rule=rule)
    if not math.isclose(ref.dt, dt) or not math.isclose(pml.dt, dt):
        raise ConfigError("history time step differs from dt", rule=rule)
    for c in ref.fields:
        if c not in pml.fields or ref.fields[c].shape != pml.fields[c].shape:
            raise ConfigError(f"{c.value} histories have different shapes", rule=rule)


def _hcurl_series(ref: FieldHistory, pml: FieldHistory, family: Sequence[Component]) -> np.ndarray:
    """Squared discrete H(curl) norm of ref - pml on the region, per recorded time."""
    h3 = ref.h ** 3
    total = np.zeros(len(ref.times))
    for c in family:
        diff = ref.fields[c] - pml.fields[c]
        total += h3 * np.tensordot(diff * diff, ref.weights[c], axes=3)
        cdiff = ref.curls[c] - pml.curls[c]
        total += h3 * np.tensordot(cdiff * cdiff, ref.weights[CURL_POSITION[c]], axes=3)
    return total


def error_norms(
    ref: FieldHistory,
    pml: FieldHistory,
    grid: GridSpec,
    dt: float,
    params: PmlParams,
) -> ErrorReport:
    """L2(0,T; H(curl)) and Linf(0,T; H(curl)) norms of E - E^p and H - H^p on the interior box."""
    theory = params.sigma0 * params.d * params.kappa / 2.0
    if ref.is_empty and pml.is_empty:
        return ErrorReport(
            sigma0=params.sigma0, d=params.d, l2_hcurl_E=0.0, l2_hcurl_H=0.0,
            linf_hcurl_E=0.0, linf_hcurl_H=0.0, theory_exponent=theory,
        )
    _check_compatible(ref, pml, grid, dt)

    norms = {}
    for name, family in (("E", E_COMPONENTS), ("H", H_COMPONENTS)):
        series = _hcurl_series(ref, pml, family)
        if len(ref.times) > 1:
            l2 = math.sqrt(max(float(integrate.trapezoid(series, ref.times)), 0.0))
        else:
            l2 = 0.0
        norms[f"l2_hcurl_{name}"] = l2
        norms[f"linf_hcurl_{name}"] = math.sqrt(float(np.max(series)))
    return ErrorReport(sigma0=params.sigma0, d=params.d, theory_exponent=theory, **norms)

# ==================== SWEEP ====================

def _sweep_level(
    config: SweepConfig, threads: int, budget_bytes: int
) -> Dict[Tuple[float, float], ErrorReport]:
    dt = shared_timestep(config)
    ref = reference_run(config, dt=dt, budget_bytes=budget_bytes)
    points = [(s, d) for s in config.sigma0_values for d in config.d_values]

    def run_point(point: Tuple[float, float]) -> ErrorReport:
        sigma0, d = point
        params = config.base.with_layer(sigma0=sigma0, d=d)
        history = pml_run(config, sigma0, d, dt, budget_bytes)
        report = error_norms(ref, history, GridSpec.for_params(params, config.h), dt, params)
        logger.info(
            f"h={config.h:g} sigma0={sigma0:g} d={d:g}: "
            f"l2 E={report.l2_hcurl_E:.4e} H={report.l2_hcurl_H:.4e}"
        )
        return report

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(run_point, points))
    return dict(zip(points, reports))


def layer_resolution(params: PmlParams, source: SourceSpec, h: float) -> float:
    """Cells across the source pulse inside the layer, where it travels 1 + sigma0/s1 times slower."""
    return params.c * source.tau / (params.max_stretch * h)


def sweep(
    config: SweepConfig,
    threads: int = 1,
    budget_bytes: int = RUNTIME_CONFIG["storage_budget_bytes"],
) -> List[ErrorReport]:
    """One ErrorReport per (sigma0, d), sorted by sigma0*d.

    With estimate_floor the whole experiment is repeated on the 2h grid and
    each report carries |N_h - N_2h|/3 as its discretization floor.
    """
    logger.info(f"Sweep: sigma0 {config.sigma0_values}, d {config.d_values}, h={config.h:g}")
    strongest = config.base.with_layer(sigma0=max(config.sigma0_values))
    cells = layer_resolution(strongest, config.source, config.h)
    if cells < SOLVER_CONFIG["min_pulse_cells_in_layer"]:
        logger.warning(
            f"Layer under-resolved at sigma0={strongest.sigma0:g}: {cells:.3g} cells across the compressed pulse "
            f"(s1={strongest.s1:g}); reflections off the grid will mask the decay"
        )
    fine = _sweep_level(config, threads, budget_bytes)

    coarse = None
    if config.estimate_floor:
        try:
            coarse_config = SweepConfig.model_validate({**config.model_dump(), "h": 2.0 * config.h})
            GridSpec.for_half_widths(coarse_config.reference_half_widths(), coarse_config.h)
            for d in config.d_values:
                GridSpec.for_params(config.base.with_layer(d=d), coarse_config.h)
            coarse = _sweep_level(coarse_config, threads, budget_bytes)
        except GridAlignmentError as e:
            logger.warning(f"No floor estimate, the 2h grid does not fit the geometry: {e}")

    reports = []
    for point, report in fine.items():
        if coarse is not None:
            c = coarse[point]
            report = report.model_copy(
                update={
                    "floor_estimate": abs(report.total(NormKind.L2) - c.total(NormKind.L2)) / 3.0,
                    "floor_estimate_linf": abs(report.total(NormKind.LINF) - c.total(NormKind.LINF)) / 3.0,
                }
            )
        reports.append(report)
    return sorted(reports, key=lambda r: (r.sigma0_d, r.sigma0, r.d))

# ==================== FITTING ====================

def pre_floor(
    reports: Sequence[ErrorReport],
    norm: NormKind = NormKind.L2,
    floor_factor: float = ACCEPTANCE_CONFIG["floor_factor"],
) -> List[ErrorReport]:
    return [r for r in reports if r.total(norm) > floor_factor * r.floor(norm) and r.total(norm) > 0.0]


def fit_decay(
    reports: Sequence[ErrorReport],
    norm: NormKind = NormKind.L2,
    floor_factor: float = ACCEPTANCE_CONFIG["floor_factor"],
    min_points: int = ACCEPTANCE_CONFIG["min_points"],
) -> DecayFit:
    """Least squares of log(error_E + error_H) against sigma0*d*sqrt(eps*mu)/2; rate = -slope."""
    used = pre_floor(reports, norm, floor_factor)
    if len(used) < min_points:
        floors = sorted({f"{r.floor(norm):.3e}" for r in reports})
        raise InsufficientDataError(
            f"only {len(used)} of {len(reports)} points lie above {floor_factor:g}x the floor "
            f"(floor estimates {', '.join(floors)}); need {min_points}"
        )
    x = np.array([r.theory_exponent for r in used])
    y = np.log([r.total(norm) for r in used])
    result = stats.linregress(x, y)
    r_squared = float(min(max(result.rvalue ** 2, 0.0), 1.0))
    fit = DecayFit(
        rate=float(-result.slope),
        intercept=float(result.intercept),
        r_squared=r_squared,
        n_points_used=len(used),
        norm=norm,
    )
    logger.info(f"{norm.value} decay fit: rate={fit.rate:.4f}, r^2={fit.r_squared:.4f}, points={fit.n_points_used}")
    return fit


def check_monotone(
    reports: Sequence[ErrorReport],
    norm: NormKind = NormKind.L2,
    floor_factor: float = ACCEPTANCE_CONFIG["floor_factor"],
) -> List[Tuple[ErrorReport, ErrorReport]]:
    """Consecutive pairs (in sigma0*d order) where the error fails to drop before the floor."""
    ordered = sorted(reports, key=lambda r: (r.sigma0_d, r.sigma0, r.d))
    bad = []
    for a, b in zip(ordered, ordered[1:]):
        if b.total(norm) <= floor_factor * b.floor(norm):
            break
        if not b.total(norm) < a.total(norm):
            bad.append((a, b))
    return bad


def acceptance_violations(
    reports: Sequence[ErrorReport],
    fit: DecayFit,
    settings: Optional[AcceptanceSettings] = None,
) -> List[str]:
    """Monotone decay, minimum rate and r^2, and the first drop below the sigma0 = 0 error."""
    settings = settings or AcceptanceSettings()
    norm = fit.norm
    problems = []
    for a, b in check_monotone(reports, norm, settings.floor_factor):
        problems.append(
            f"{norm.value}: error does not decrease from sigma0*d={a.sigma0_d:g} "
            f"({a.total(norm):.4e}) to {b.sigma0_d:g} ({b.total(norm):.4e})"
        )
    if fit.rate < settings.min_rate:
        problems.append(f"{norm.value}: decay rate {fit.rate:.4f} < {settings.min_rate:g}")
    if fit.r_squared < settings.min_r_squared:
        problems.append(f"{norm.value}: r^2 {fit.r_squared:.4f} < {settings.min_r_squared:g}")

    anchors = [r for r in reports if r.sigma0 == 0.0]
    used = pre_floor(reports, norm, settings.floor_factor)
    if norm == NormKind.L2 and anchors and used:
        anchor = anchors[0].total(norm)
        smallest = min(r.total(norm) for r in used)
        if smallest > math.exp(-settings.first_error_drop) * anchor:
            problems.append(
                f"{norm.value}: smallest pre-floor error {smallest:.4e} exceeds "
                f"exp(-{settings.first_error_drop:g}) x sigma0=0 error {anchor:.4e}"
            )
    return problems

# ==================== STABILITY ====================

def observe_stability(
    sim: Simulation,
    n_steps: int,
    every: int = 1,
    observers: Sequence[Callable[[Simulation], None]] = (),
) -> StabilityReport:
    """Advance sim n_steps, tracking max_t of ||dE/dt|| + ||curl E|| + ||dH/dt|| + ||curl H|| on B2."""
    params = sim.params
    worst = 0.0

    def observe(s: Simulation) -> None:
        nonlocal worst
        if s.state.step_index % every == 0:
            worst = max(worst, sum(s.rate_norms().values()))
        for callback in observers:
            callback(s)

    sim.run(n_steps, on_step=observe)
    sigma0 = 0.0 if sim.medium == Medium.VACUUM else params.sigma0
    report = StabilityReport(
        sigma0=sigma0,
        T=params.T,
        steps=n_steps,
        max_norm_sum=worst,
        source_h1_norm=sim.source_h1_norm(sim.time),
        bound_factor=(1.0 + sigma0 * params.T) ** 3,
    )
    logger.info(f"Stability sigma0={sigma0:g}: max norm sum {worst:.4e}, ratio {report.ratio:.4e}")
    return report


def stability_probe(
    params: PmlParams,
    h: float,
    source: SourceSpec,
    scatterer: Optional[ScattererSpec] = None,
    every: int = 1,
    n_steps: Optional[int] = None,
    cfl_factor: float = SOLVER_CONFIG["cfl_factor"],
) -> StabilityReport:
    """PML run over (0, T] compared against (1 + sigma0 T)^3 ||J||_H1."""
    grid = GridSpec.for_params(params, h)
    sim = Simulation.build(grid, params, source, scatterer=scatterer, cfl_factor=cfl_factor)
    steps = step_count(params.T, sim.dt) if n_steps is None else n_steps
    return observe_stability(sim, steps, every)

# ==================== SELF-CONVERGENCE ====================

def richardson_ratio(coarse: float, medium: float, fine: float, order: int = 2) -> float:
    """Error ratio of the two coarser levels against the Richardson extrapolation of the two finer."""
    factor = 2 ** order - 1
    reference = fine + (fine - medium) / factor
    err_medium = abs(medium - reference)
    if err_medium == 0.0:
        return math.inf
    return abs(coarse - reference) / err_medium
