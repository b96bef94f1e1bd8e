"""
Explicit staggered-grid leapfrog solver for the truncated PML system on B2.

    dE/dt =  eps^-1 BA (curl H - J)
    dH/dt = -mu^-1  BA  curl E

Array layout on the node lattice 0..n_j (n_j cells per axis):

    Ex (n1, n2+1, n3+1)    Hx (n1+1, n2, n3)
    Ey (n1+1, n2, n3+1)    Hy (n1, n2+1, n3)
    Ez (n1+1, n2+1, n3)    Hz (n1, n2, n3+1)

E components sit on cell edges, H components on cell faces. Only interior
tangential E edges are ever updated, so n x E = 0 on the outer wall holds
exactly for the whole run.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union
import logging
import math

import numpy as np
from scipy import integrate

from config import RUNTIME_CONFIG, SOLVER_CONFIG
from exceptions import ConfigError, NonFiniteFieldError, StorageBudgetError
from models import Component, GridSpec, Medium, PmlParams, ScattererSpec, SourceSpec
from services.pml_profiles import PmlProfile

logger = logging.getLogger(__name__)

Coefficient = Union[float, np.ndarray]

E_COMPONENTS = (Component.EX, Component.EY, Component.EZ)
H_COMPONENTS = (Component.HX, Component.HY, Component.HZ)

# the curl of one family lives on the positions of the other
CURL_POSITION = {
    Component.EX: Component.HX,
    Component.EY: Component.HY,
    Component.EZ: Component.HZ,
    Component.HX: Component.EX,
    Component.HY: Component.EY,
    Component.HZ: Component.EZ,
}


def staggered_axes(component: Component) -> Tuple[bool, bool, bool]:
    """True where the component sits at half-integer positions along an axis."""
    a = component.axis
    if component.is_electric:
        return tuple(j == a for j in range(3))
    return tuple(j != a for j in range(3))


def component_shape(grid: GridSpec, component: Component) -> Tuple[int, int, int]:
    return tuple(n if half else n + 1 for n, half in zip(grid.n, staggered_axes(component)))


def component_coordinates(grid: GridSpec, component: Component) -> List[np.ndarray]:
    coords = []
    for j, half in enumerate(staggered_axes(component)):
        idx = np.arange(grid.n[j]) + 0.5 if half else np.arange(grid.n[j] + 1)
        coords.append(grid.origin[j] + grid.h * idx)
    return coords


def cfl_timestep(grid: GridSpec, params: PmlParams, cfl_factor: float = SOLVER_CONFIG["cfl_factor"], vacuum: bool = False) -> float:
    """dt = cfl * h / (c_max * sqrt(3)) with c_max = (1 + sigma0/s1)/sqrt(eps*mu)."""
    if not cfl_factor > 0.0:
        raise ConfigError(f"CFL factor must be positive, got {cfl_factor}", rule="dt > 0")
    stretch = 1.0 if vacuum else params.max_stretch
    c_max = stretch / params.kappa
    return cfl_factor * grid.h / (c_max * math.sqrt(3.0))

# ==================== STATE & HISTORY ====================

@dataclass
class EMState:
    E: List[np.ndarray]
    H: List[np.ndarray]
    step_index: int
    dt: float

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def component(self, c: Component) -> np.ndarray:
        return (self.E if c.is_electric else self.H)[c.axis]


@dataclass(frozen=True)
class RecordRegion:
    """Closed grid-aligned box [lo, hi] on which fields are recorded."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    @classmethod
    def interior(cls, params: PmlParams) -> "RecordRegion":
        half = params.half
        return cls(lo=tuple(-half), hi=tuple(half))

    @property
    def volume(self) -> float:
        return float(np.prod(np.maximum(np.asarray(self.hi) - np.asarray(self.lo), 0.0)))


@dataclass
class FieldHistory:
    """Fields and discrete curls on a region, one slice per recorded step.

    curls[Ex] is the x-component of curl E, sampled at Hx positions; curls[Hx]
    is the x-component of curl H at Ex positions.
    """

    times: np.ndarray
    h: float
    dt: float
    fields: Dict[Component, np.ndarray] = field(default_factory=dict)
    curls: Dict[Component, np.ndarray] = field(default_factory=dict)
    weights: Dict[Component, np.ndarray] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return len(self.times) == 0 or not self.fields

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.fields.values()) + sum(a.nbytes for a in self.curls.values())

    def max_abs_difference(self, other: "FieldHistory") -> float:
        if self.is_empty and other.is_empty:
            return 0.0
        if self.is_empty or other.is_empty or self.fields.keys() != other.fields.keys():
            raise ConfigError("histories record different regions or components", rule="comparable histories")
        if any(self.fields[c].shape != other.fields[c].shape for c in self.fields):
            raise ConfigError("histories have different shapes", rule="comparable histories")
        return max(
            float(np.max(np.abs(self.fields[c] - other.fields[c]))) for c in self.fields
        )


def history_bytes(grid: GridSpec, region: RecordRegion, n_records: int) -> int:
    per_record = 0
    for c in Component:
        sl = region_slices(grid, region, c)
        per_record += 2 * int(np.prod([s.stop - s.start for s in sl]))
    return per_record * n_records * 8


def region_slices(grid: GridSpec, region: RecordRegion, component: Component) -> Tuple[slice, ...]:
    slices = []
    for j, half in enumerate(staggered_axes(component)):
        lo, hi = grid.index_of(region.lo[j], j), grid.index_of(region.hi[j], j)
        slices.append(slice(lo, hi) if half else slice(lo, hi + 1))
    return tuple(slices)


def region_weights(grid: GridSpec, region: RecordRegion, component: Component) -> np.ndarray:
    """Trapezoid weights; they sum to |region| / h^3."""
    factors = []
    for j, half in enumerate(staggered_axes(component)):
        lo, hi = grid.index_of(region.lo[j], j), grid.index_of(region.hi[j], j)
        if half:
            w = np.ones(hi - lo)
        else:
            w = np.ones(hi - lo + 1)
            w[0] = w[-1] = 0.5
        factors.append(w)
    return factors[0][:, None, None] * factors[1][None, :, None] * factors[2][None, None, :]

# ==================== SIMULATION ====================

class Simulation:
    """One mutable leapfrog simulation on a GridSpec; not shared between threads."""

    def __init__(
        self,
        grid: GridSpec,
        params: PmlParams,
        source: SourceSpec,
        dt: float,
        ce: Dict[Component, Coefficient],
        ch: Dict[Component, Coefficient],
        ba: Dict[Component, Coefficient],
        scatterer: Optional[ScattererSpec] = None,
        medium: Medium = Medium.PML,
        nan_check_every: int = SOLVER_CONFIG["nan_check_every"],
    ):
        self.grid = grid
        self.params = params
        self.source = source
        self.scatterer = scatterer
        self.medium = medium
        self.nan_check_every = nan_check_every
        self.ce = ce
        self.ch = ch
        self.ba = ba
        self.state = EMState(
            E=[np.zeros(component_shape(grid, c)) for c in E_COMPONENTS],
            H=[np.zeros(component_shape(grid, c)) for c in H_COMPONENTS],
            step_index=0,
            dt=dt,
        )
        self._interior = (
            (slice(None), slice(1, -1), slice(1, -1)),
            (slice(1, -1), slice(None), slice(1, -1)),
            (slice(1, -1), slice(1, -1), slice(None)),
        )
        self._ce_int = [_at(ce[c], self._interior[c.axis]) for c in E_COMPONENTS]
        self._pec = self._scatterer_slices()
        self._src_slice, self._src_coef = self._source_injection()

    @classmethod
    def build(
        cls,
        grid: GridSpec,
        params: PmlParams,
        source: SourceSpec,
        scatterer: Optional[ScattererSpec] = None,
        dt: Optional[float] = None,
        medium: Medium = Medium.PML,
        cfl_factor: float = SOLVER_CONFIG["cfl_factor"],
        nan_check_every: int = SOLVER_CONFIG["nan_check_every"],
    ) -> "Simulation":
        """Precompute cE = dt*BA/eps at E points and cH = dt*BA/mu at H points."""
        vacuum = medium == Medium.VACUUM
        if dt is None:
            dt = cfl_timestep(grid, params, cfl_factor, vacuum=vacuum)
        elif not dt > 0.0:
            raise ConfigError(f"time step must be positive, got {dt}", rule="dt > 0")

        ce, ch, ba = {}, {}, {}
        if vacuum:
            for c in Component:
                ba[c] = 1.0
                ce[c] = dt / params.eps
                ch[c] = dt / params.mu
        else:
            profile = PmlProfile(params)
            for c in Component:
                x1, x2, x3 = component_coordinates(grid, c)
                diag = profile.ba_diagonal(x1[:, None, None], x2[None, :, None], x3[None, None, :])
                ba[c] = np.broadcast_to(diag[c.axis], component_shape(grid, c)).copy()
                if c.is_electric:
                    ce[c] = dt * ba[c] / params.eps
                else:
                    ch[c] = dt * ba[c] / params.mu

        logger.info(
            f"Built {medium.value} simulation: grid {grid.n}, h={grid.h:g}, dt={dt:.6g}, sigma0={params.sigma0:g}"
        )
        return cls(grid, params, source, dt, ce, ch, ba, scatterer, medium, nan_check_every)

    # ---- setup helpers ----

    def _scatterer_slices(self) -> Dict[Component, Tuple[slice, ...]]:
        if self.scatterer is None:
            return {}
        box = RecordRegion(lo=self.scatterer.lo, hi=self.scatterer.hi)
        return {c: region_slices(self.grid, box, c) for c in E_COMPONENTS}

    def _source_injection(self):
        """Slice of the polarized E array touched by J and the matching dt*BA/eps*profile."""
        src = self.source
        c = E_COMPONENTS[src.axis]
        g = self.grid
        coords = component_coordinates(g, c)
        if src.width == 0.0:
            idx = []
            for j, half in enumerate(staggered_axes(c)):
                q = (src.location[j] - g.origin[j]) / g.h
                i = int(math.floor(q + 1e-9)) if half else int(round(q))
                idx.append(slice(i, i + 1))
            sl = tuple(idx)
            profile = np.ones((1, 1, 1))
        else:
            r = src.support_radius
            sl = tuple(
                slice(
                    int(np.searchsorted(coords[j], src.location[j] - r)),
                    int(np.searchsorted(coords[j], src.location[j] + r, side="right")),
                )
                for j in range(3)
            )
            x = [coords[j][sl[j]] - src.location[j] for j in range(3)]
            dist2 = x[0][:, None, None] ** 2 + x[1][None, :, None] ** 2 + x[2][None, None, :] ** 2
            profile = np.exp(-dist2 / src.width ** 2)
        self._src_profile = profile
        return sl, _at(self.ce[c], sl) * profile

    # ---- fields ----

    @property
    def dt(self) -> float:
        return self.state.dt

    @property
    def time(self) -> float:
        return self.state.time

    def snapshot(self, component: Component) -> np.ndarray:
        return self.state.component(component).copy()

    def curl_e(self, E: Optional[List[np.ndarray]] = None) -> List[np.ndarray]:
        """Discrete curl of E (default: the current E) at the three H positions."""
        Ex, Ey, Ez = self.state.E if E is None else E
        h = self.grid.h
        return [
            ((Ez[:, 1:, :] - Ez[:, :-1, :]) - (Ey[:, :, 1:] - Ey[:, :, :-1])) / h,
            ((Ex[:, :, 1:] - Ex[:, :, :-1]) - (Ez[1:, :, :] - Ez[:-1, :, :])) / h,
            ((Ey[1:, :, :] - Ey[:-1, :, :]) - (Ex[:, 1:, :] - Ex[:, :-1, :])) / h,
        ]

    def _curl_h_interior(self) -> List[np.ndarray]:
        Hx, Hy, Hz = self.state.H
        h = self.grid.h
        return [
            ((Hz[:, 1:, 1:-1] - Hz[:, :-1, 1:-1]) - (Hy[:, 1:-1, 1:] - Hy[:, 1:-1, :-1])) / h,
            ((Hx[1:-1, :, 1:] - Hx[1:-1, :, :-1]) - (Hz[1:, :, 1:-1] - Hz[:-1, :, 1:-1])) / h,
            ((Hy[1:, 1:-1, :] - Hy[:-1, 1:-1, :]) - (Hx[1:-1, 1:, :] - Hx[1:-1, :-1, :])) / h,
        ]

    def curl_h(self) -> List[np.ndarray]:
        """Discrete curl of H at the three E positions, zero on wall edges."""
        out = [np.zeros_like(a) for a in self.state.E]
        for j, interior in enumerate(self._curl_h_interior()):
            out[j][self._interior[j]] = interior
        return out

    # ---- time stepping ----

    def step(self) -> None:
        """H to n+1/2 from curl E^n, then E to n+1 from curl H^{n+1/2} - J^{n+1/2}."""
        st = self.state
        for j, curl in enumerate(self.curl_e()):
            st.H[j] -= self.ch[H_COMPONENTS[j]] * curl
        for j, curl in enumerate(self._curl_h_interior()):
            st.E[j][self._interior[j]] += self._ce_int[j] * curl
        t_half = (st.step_index + 0.5) * st.dt
        st.E[self.source.axis][self._src_slice] -= self._src_coef * float(self.source.waveform(t_half))
        for c, sl in self._pec.items():
            st.E[c.axis][sl] = 0.0
        st.step_index += 1
        if st.step_index % self.nan_check_every == 0:
            self.check_finite()

    def run(self, n_steps: int, on_step: Optional[Callable[["Simulation"], None]] = None) -> None:
        for _ in range(n_steps):
            self.step()
            if on_step is not None:
                on_step(self)

    def steps_until(self, t_end: float) -> int:
        return max(0, int(math.ceil(t_end / self.dt - 1e-9)) - self.state.step_index)

    def check_finite(self) -> None:
        for c in Component:
            arr = self.state.component(c)
            if not np.isfinite(arr).all():
                loc = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
                logger.error(f"Non-finite {c.value} at {loc} after step {self.state.step_index}")
                raise NonFiniteFieldError(self.state.step_index, c.value, loc)

    # ---- diagnostics ----

    def previous_e(self) -> List[np.ndarray]:
        """E^{n-1} recovered from E^n and H^{n-1/2} by undoing the last E update."""
        st = self.state
        prev = [a.copy() for a in st.E]
        if st.step_index == 0:
            return prev
        for j, curl in enumerate(self._curl_h_interior()):
            prev[j][self._interior[j]] -= self._ce_int[j] * curl
        t_half = (st.step_index - 0.5) * st.dt
        prev[self.source.axis][self._src_slice] += self._src_coef * float(self.source.waveform(t_half))
        for c, sl in self._pec.items():
            prev[c.axis][sl] = 0.0
        return prev

    def energy(self) -> float:
        """1/2 h^3 sum[eps (BA)^-1 E^{n-1}.E^n + mu (BA)^-1 |H^{n-1/2}|^2].

        The time-centred E product is invariant under the source-free leapfrog
        update and reduces to eps (BA)^-1 |E|^2 at second order.
        """
        p = self.params
        prev = self.previous_e()
        total = 0.0
        for j, c in enumerate(E_COMPONENTS):
            total += p.eps * float(np.sum(prev[j] * self.state.E[j] / self.ba[c]))
        for j, c in enumerate(H_COMPONENTS):
            total += p.mu * float(np.sum(self.state.H[j] ** 2 / self.ba[c]))
        return 0.5 * self.grid.h ** 3 * total

    def rate_norms(self) -> Dict[str, float]:
        """L2 norms on B2 of dE/dt, curl E, dH/dt and curl H by centred differences.

        dE/dt, curl E and curl H are taken at t_{n-1/2}; dH/dt at t_n.
        """
        st = self.state
        w = math.sqrt(self.grid.h ** 3)
        prev = self.previous_e()
        curl_now = self.curl_e()
        dE = [(a - b) / st.dt for a, b in zip(st.E, prev)]
        dH = [-self.ch[c] * curl / st.dt for c, curl in zip(H_COMPONENTS, curl_now)]
        curl_mid = [0.5 * (a + b) for a, b in zip(curl_now, self.curl_e(prev))]

        def norm(arrays):
            return w * math.sqrt(sum(float(np.sum(a * a)) for a in arrays))

        return {
            "dE_dt": norm(dE),
            "curl_E": norm(curl_mid),
            "dH_dt": norm(dH),
            "curl_H": norm(self.curl_h()),
        }

    def probe(self, point) -> np.ndarray:
        """Nearest-sample values of Ex, Ey, Ez, Hx, Hy, Hz at a physical point."""
        g = self.grid
        values = np.empty(6)
        for c in Component:
            idx = []
            for j, half in enumerate(staggered_axes(c)):
                q = (point[j] - g.origin[j]) / g.h - (0.5 if half else 0.0)
                size = g.n[j] if half else g.n[j] + 1
                idx.append(int(np.clip(round(q), 0, size - 1)))
            values[c.id] = self.state.component(c)[tuple(idx)]
        return values

    def source_h1_norm(self, t_end: float) -> float:
        """||J||_{H1(0,T)} with the spatial L2 factor of the discrete source."""
        src = self.source
        t_end = float(t_end)
        time_part, _ = integrate.quad(
            lambda t: float(src.waveform(t)) ** 2 + float(src.waveform_derivative(t)) ** 2,
            0.0,
            t_end,
            points=[min(src.t0, t_end)],
            limit=200,
        )
        spatial = math.sqrt(self.grid.h ** 3 * float(np.sum(self._src_profile ** 2)))
        return spatial * math.sqrt(time_part)

    # ---- recording ----

    def record(
        self,
        region: RecordRegion,
        every: int,
        n_steps: int,
        budget_bytes: int = RUNTIME_CONFIG["storage_budget_bytes"],
    ) -> FieldHistory:
        """Advance n_steps, storing E, H and their curls on region every `every` steps (step 0 included)."""
        if every < 1:
            raise ConfigError(f"record cadence must be >= 1, got {every}", rule="cadence >= 1")
        if region.volume == 0.0:
            self.run(n_steps)
            return FieldHistory(times=np.empty(0), h=self.grid.h, dt=self.dt)

        start = self.state.step_index
        n_records = sum(1 for k in range(n_steps + 1) if (start + k) % every == 0)
        required = history_bytes(self.grid, region, n_records)
        if required > budget_bytes:
            raise StorageBudgetError(required, budget_bytes)
        if required > 0.8 * budget_bytes:
            logger.warning(f"Field history uses {required} of {budget_bytes} budget bytes")

        slices = {c: region_slices(self.grid, region, c) for c in Component}
        fields = {c: np.empty((n_records,) + _shape(slices[c])) for c in Component}
        curls = {c: np.empty((n_records,) + _shape(slices[CURL_POSITION[c]])) for c in Component}
        times = np.empty(n_records)
        row = 0

        def capture(sim: "Simulation") -> None:
            nonlocal row
            if sim.state.step_index % every:
                return
            times[row] = sim.time
            curl_e, curl_h = sim.curl_e(), sim.curl_h()
            for c in Component:
                fields[c][row] = sim.state.component(c)[slices[c]]
                curl = curl_e if c.is_electric else curl_h
                curls[c][row] = curl[c.axis][slices[CURL_POSITION[c]]]
            row += 1

        capture(self)
        self.run(n_steps, on_step=capture)
        weights = {c: region_weights(self.grid, region, c) for c in Component}
        logger.info(f"Recorded {n_records} snapshots ({required} bytes) up to t={self.time:.6g}")
        return FieldHistory(times=times, h=self.grid.h, dt=self.dt, fields=fields, curls=curls, weights=weights)


def _at(coef: Coefficient, sl) -> Coefficient:
    return coef[sl] if isinstance(coef, np.ndarray) else coef


def _shape(slices: Tuple[slice, ...]) -> Tuple[int, ...]:
    return tuple(s.stop - s.start for s in slices)
