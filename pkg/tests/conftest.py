"""Shared fixtures: layer parameters, seeded generators and small simulations."""

import numpy as np
import pytest

from models import GridSpec, PmlParams, SourceSpec


@pytest.fixture
def base_params() -> PmlParams:
    """L = 2, d = 1, sigma0 = 4, m = 1, s1 = 1 in vacuum units."""
    return PmlParams(L=(2.0, 2.0, 2.0), d=1.0, sigma0=4.0, m=1, s1=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.Philox(20240917))


@pytest.fixture
def small_params() -> PmlParams:
    """Unit interior box with a half-unit layer; 16 cells per axis at h = 1/8."""
    return PmlParams(L=(1.0, 1.0, 1.0), d=0.5, sigma0=4.0, m=1, s1=1.0, T=3.0)


@pytest.fixture
def small_grid(small_params) -> GridSpec:
    return GridSpec.for_params(small_params, 0.125)


@pytest.fixture
def small_source() -> SourceSpec:
    return SourceSpec(location=(0.0, 0.0, 0.0), polarization=3, t0=1.5, tau=0.25)
