"""
Central configuration for the UPML lab: process-level settings and defaults.

Run-specific parameters live in the JSON run config (see models.RunConfig);
this module only carries environment-driven settings and documented defaults.
"""

import os
from typing import Dict, Any

# ================================
# RUNTIME CONFIGURATION
# ================================

RUNTIME_CONFIG = {
    "threads": int(os.getenv("UPML_THREADS", "1")),
    "seed": int(os.getenv("UPML_SEED", "20240917")),
    "output_dir": os.getenv("UPML_OUTPUT_DIR", "./upml_out"),
    # History of one run on the interior box; exceeded -> StorageBudgetError
    "storage_budget_bytes": int(os.getenv("UPML_STORAGE_BUDGET_BYTES", str(2 * 1024 ** 3))),
    "log_level": os.getenv("UPML_LOG_LEVEL", "INFO"),
    "rng_algorithm": "Philox",
}

# ================================
# SOLVER CONFIGURATION
# ================================

SOLVER_CONFIG = {
    "cfl_factor": float(os.getenv("UPML_CFL", "0.9")),
    "nan_check_every": int(os.getenv("UPML_NAN_CHECK_EVERY", "1")),
    "min_cells_per_axis": 8,
    # Cells across the source pulse once the layer compresses it by 1 + sigma0/s1
    "min_pulse_cells_in_layer": 1.0,
}

# ================================
# PML DEFAULTS
# ================================

PML_DEFAULTS = {
    "eps": 1.0,
    "mu": 1.0,
    "L": [2.0, 2.0, 2.0],
    "d": 1.0,
    "sigma0": 4.0,
    "m": 1,
    "T": 6.0,
    # s1 defaults to 1/T; filled in by the model validator
    "thickness_ratio_limit": 10.0,
}

# ================================
# KERNEL CHECK CONFIGURATION
# ================================

KERNEL_CHECK_CONFIG = {
    "n_samples": 10_000,
    "s2_span": 10.0,  # s2 drawn from [-span*s1, span*s1]
    "panels_per_edge": 16,
    "violation_tolerance": 1e-10,
    "degenerate_distance": 1e-12,  # relative to d
    # Extension decay oracle: log-linear fit over these sigma0 at abscissa s1
    "extension_sigma0_values": [2.0, 4.0, 8.0],
    "extension_s1": 1.0,
    "extension_constant_band": 0.5,  # fitted constants within +-50% of their mean
}

# ================================
# ACCEPTANCE THRESHOLDS
# ================================

ACCEPTANCE_CONFIG = {
    "min_rate": 0.5,
    "min_r_squared": 0.9,
    "floor_factor": 3.0,
    "min_points": 3,
    "first_error_drop": 2.0,  # smallest pre-floor error <= exp(-2) * sigma0=0 error
}

# ================================
# HELPER FUNCTIONS
# ================================

def resolve_threads(cli_threads: int = None) -> int:
    """--threads wins over UPML_THREADS; never below one."""
    if cli_threads is not None:
        return max(1, int(cli_threads))
    return max(1, RUNTIME_CONFIG["threads"])


def validate_config() -> Dict[str, bool]:
    """Validate process-level settings."""
    return {
        "threads_positive": RUNTIME_CONFIG["threads"] >= 1,
        "cfl_in_range": 0.0 < SOLVER_CONFIG["cfl_factor"] <= 1.0,
        "nan_check_positive": SOLVER_CONFIG["nan_check_every"] >= 1,
        "storage_budget_positive": RUNTIME_CONFIG["storage_budget_bytes"] > 0,
    }


def get_env_template() -> str:
    """Generate .env template with all supported variables."""
    return """# UPML lab configuration template

# Runtime
UPML_THREADS=1
UPML_SEED=20240917
UPML_OUTPUT_DIR=./upml_out
UPML_STORAGE_BUDGET_BYTES=2147483648
UPML_LOG_LEVEL=INFO

# Solver
UPML_CFL=0.9
UPML_NAN_CHECK_EVERY=1
"""

# ================================
# EXPORT MAIN CONFIG
# ================================

CONFIG: Dict[str, Any] = {
    "runtime": RUNTIME_CONFIG,
    "solver": SOLVER_CONFIG,
    "pml": PML_DEFAULTS,
    "kernels": KERNEL_CHECK_CONFIG,
    "acceptance": ACCEPTANCE_CONFIG,
}
