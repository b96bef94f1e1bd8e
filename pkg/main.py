"""
UPML lab command line.

    python main.py check-kernels --config configs/default.json --out out/
    python main.py simulate      --config configs/vacuum.json
    python main.py sweep         --config configs/acceptance.json --threads 4 --emit-plots
    python main.py fit           --out out/
    python main.py report        --out out/
"""

from datetime import datetime, timezone
from typing import List, Optional
import argparse
import json
import logging
import math
import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

import numpy as np

from config import RUNTIME_CONFIG, resolve_threads, validate_config
from exceptions import AssertionFailure, ConfigError, StorageError
from middleware.error_handler import EXIT_OK, handle_exception
from models import (
    Component,
    GridSpec,
    NormKind,
    RunConfig,
    RunManifest,
)
from services import convergence_lab
from services.pml_profiles import profile_identity_suite
from services.storage_service import (
    EXTENSION_COLUMNS,
    FIT_COLUMNS,
    KERNEL_COLUMNS,
    PROBE_COLUMNS,
    SWEEP_COLUMNS,
    OutputStorage,
    canonical_json,
    config_digest,
    extension_row,
    fit_row,
    get_output_storage,
    kernel_row,
    reports_from_rows,
    sweep_row,
)
from services.stretched_kernels import (
    extension_decay_sweep,
    fit_extension_decay,
    kernel_oracle_suite,
    kernel_sweep,
    kernels_for,
)
from services.yee_solver import Simulation

# Configure logging
logging.basicConfig(
    level=getattr(logging, RUNTIME_CONFIG["log_level"].upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
COMMANDS = ["check-kernels", "simulate", "reference", "sweep", "fit", "report"]

# oracle thresholds of the kernel property suite
ORACLE_LIMITS = {
    "helmholtz_rel": 1e-4,
    "gradient_rel": 1e-7,
    "hessian_rel": 1e-6,
    "green_asymmetry": 0.0,
}
PROFILE_LIMITS = {
    "sigma_integral_max_rel": 1e-13,
    "derivative_max_rel": 1e-6,
    "tensor_bound_failures": 0.0,
}

# ==================== CONFIG ====================

def parse_config(path: Optional[str]) -> RunConfig:
    """Load and validate a JSON run config; no path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except OSError as e:
        raise StorageError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}", rule="well-formed structured text") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object", rule="well-formed structured text")
    return RunConfig.model_validate(raw)


def canonical_config(config: RunConfig) -> str:
    return canonical_json(config.model_dump(mode="json"))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))

# ==================== COMMANDS ====================

def cmd_check_kernels(config: RunConfig, storage: OutputStorage, rng: np.random.Generator) -> List[str]:
    problems = []
    params = config.pml
    ks = config.kernels

    profile_results = profile_identity_suite(params, rng)
    for key, limit in PROFILE_LIMITS.items():
        if profile_results[key] > limit:
            problems.append(f"profile {key} = {profile_results[key]:.3e} > {limit:g}")

    kernels = kernels_for(params)
    report = kernels.decay_bound_check(ks.n_samples, rng, s2_span=ks.s2_span)
    storage.write_csv("kernel_check.csv", KERNEL_COLUMNS, [kernel_row(report)])
    problems += [f"decay bound violated: {v}" for v in report.violations]

    oracles = kernel_oracle_suite(kernels, ks.oracle_samples, rng, s2_span=ks.s2_span)
    for key, limit in ORACLE_LIMITS.items():
        if oracles[key] > limit:
            problems.append(f"kernel oracle {key} = {oracles[key]:.3e} > {limit:g}")
    storage.write_csv(
        "kernel_oracles.csv",
        list(oracles) + list(profile_results),
        [list(oracles.values()) + list(profile_results.values())],
    )

    sigmas = sorted({params.sigma0, *config.sweep.sigma0_values})
    s2_values = [-ks.s2_span * params.s1, 0.0, ks.s2_span * params.s1]
    sweep_reports = kernel_sweep(params, sigmas, s2_values, ks.n_samples, rng)
    storage.write_csv("kernel_sweep.csv", KERNEL_COLUMNS, [kernel_row(r) for r in sweep_reports])
    for r in sweep_reports:
        problems += [f"decay bound violated at sigma0={r.sigma0:g}: {v}" for v in r.violations]

    x_points = np.array([np.r_[params.half[0] + params.d, 0.0, 0.0], params.half + params.d])
    rows = extension_decay_sweep(
        params, ks.extension_sigma0_values, x_points, ks.panels_per_edge, s1=ks.extension_s1
    )
    storage.write_csv("extension_decay.csv", EXTENSION_COLUMNS, [extension_row(r) for r in rows])
    extension_fit = fit_extension_decay(rows)
    problems += extension_fit.violations(ks.extension_constant_band)

    summary = [
        f"decay-bound samples: {report.n_samples}, violations: {len(report.violations)}",
        f"min |rho/s| = {report.min_abs_rho_over_s:.6g} (bound d = {params.d:g})",
        f"min Re rho  = {report.min_re_rho:.6g} (bound {report.re_rho_bound:.6g})",
        f"max |Phi~|  = {report.max_phi_abs:.6g} (bound {report.bound_value:.6g})",
        f"extension decay rate {extension_fit.rate:.6g}, curl rate {extension_fit.curl_rate:.6g} (bound 1)",
    ]
    storage.write_text("kernel_summary.txt", "\n".join(summary) + "\n")
    return problems


def cmd_simulate(config: RunConfig, storage: OutputStorage, emit_plots: bool) -> List[str]:
    sim_cfg = config.simulation
    params = config.pml
    probe_rows, energy_rows = [], []

    def write_snapshots(sim: Simulation) -> None:
        for c in Component:
            storage.write_snapshot(f"snapshots/{c.value}_{sim.state.step_index:08d}.upml", c, sim.time, sim.snapshot(c))

    def observe(sim: Simulation) -> None:
        probe_rows.append([sim.time] + list(sim.probe(sim_cfg.probe)))
        if sim_cfg.snapshot_every and sim.state.step_index % sim_cfg.snapshot_every == 0:
            write_snapshots(sim)
        if sim.state.step_index % 10 == 0:
            energy_rows.append([sim.time, sim.energy()])

    sim = Simulation.build(
        GridSpec.for_params(params, config.grid.h),
        params,
        config.source,
        scatterer=config.scatterer,
        medium=sim_cfg.medium,
        cfl_factor=sim_cfg.cfl_factor,
        nan_check_every=sim_cfg.nan_check_every,
    )
    probe_rows.append([sim.time] + list(sim.probe(sim_cfg.probe)))
    energy_rows.append([sim.time, sim.energy()])
    steps = convergence_lab.step_count(params.T, sim.dt)
    report = convergence_lab.observe_stability(sim, steps, observers=[observe])
    if not (sim_cfg.snapshot_every and sim.state.step_index % sim_cfg.snapshot_every == 0):
        write_snapshots(sim)

    storage.write_csv("probe.csv", PROBE_COLUMNS, probe_rows)
    storage.write_csv("energy.csv", ["t", "energy"], energy_rows)
    storage.write_csv(
        "stability.csv",
        ["sigma0", "T", "steps", "max_norm_sum", "source_h1_norm", "bound_factor", "ratio"],
        [[report.sigma0, report.T, report.steps, report.max_norm_sum, report.source_h1_norm, report.bound_factor, report.ratio]],
    )
    if emit_plots:
        storage.plot_probe(probe_rows)
        storage.write_dat("probe.dat", PROBE_COLUMNS, probe_rows)
    return []


def cmd_reference(config: RunConfig, storage: OutputStorage) -> List[str]:
    sweep_cfg = config.sweep_config()
    history = convergence_lab.reference_run(sweep_cfg, budget_bytes=RUNTIME_CONFIG["storage_budget_bytes"])
    rows = []
    for k, t in enumerate(history.times):
        norms = []
        for family in ((Component.EX, Component.EY, Component.EZ), (Component.HX, Component.HY, Component.HZ)):
            total = sum(float(np.sum(history.weights[c] * history.fields[c][k] ** 2)) for c in family)
            norms.append(math.sqrt(history.h ** 3 * total))
        rows.append([float(t)] + norms)
    storage.write_csv("reference_norms.csv", ["t", "l2_E", "l2_H"], rows)
    return []


def cmd_sweep(config: RunConfig, storage: OutputStorage, threads: int, emit_plots: bool) -> List[str]:
    reports = convergence_lab.sweep(config.sweep_config(), threads=threads)
    storage.write_csv("sweep.csv", SWEEP_COLUMNS, [sweep_row(r) for r in reports])
    if emit_plots:
        storage.write_dat("sweep.dat", SWEEP_COLUMNS, [sweep_row(r) for r in reports])
        storage.plot_sweep(reports)
    return []


def _load_sweep(storage: OutputStorage):
    _, rows = storage.read_csv("sweep.csv")
    return reports_from_rows(rows)


def cmd_fit(config: RunConfig, storage: OutputStorage) -> List[str]:
    reports = _load_sweep(storage)
    acc = config.acceptance
    problems = []
    for norm, name in ((NormKind.L2, "fit.csv"), (NormKind.LINF, "fit_linf.csv")):
        fit = convergence_lab.fit_decay(reports, norm, acc.floor_factor, acc.min_points)
        storage.write_csv(name, FIT_COLUMNS, [fit_row(fit)])
        problems += convergence_lab.acceptance_violations(reports, fit, acc)
    return problems


def cmd_report(config: RunConfig, storage: OutputStorage) -> List[str]:
    reports = _load_sweep(storage)
    acc = config.acceptance
    lines = [
        "UPML convergence report",
        "",
        f"{'sigma0':>8} {'d':>6} {'theory':>8} {'L2 E+H':>12} {'Linf E+H':>12} {'floor':>12}",
    ]
    for r in reports:
        lines.append(
            f"{r.sigma0:8.3g} {r.d:6.3g} {r.theory_exponent:8.3g} "
            f"{r.total(NormKind.L2):12.4e} {r.total(NormKind.LINF):12.4e} {r.floor_estimate:12.4e}"
        )
    lines.append("")
    problems = []
    for norm in (NormKind.L2, NormKind.LINF):
        try:
            fit = convergence_lab.fit_decay(reports, norm, acc.floor_factor, acc.min_points)
        except AssertionFailure as e:
            problems.append(str(e))
            lines.append(f"{norm.value}: no fit ({e})")
            continue
        lines.append(
            f"{norm.value}: rate {fit.rate:.4f} (bound predicts >= 1), r^2 {fit.r_squared:.4f}, "
            f"{fit.n_points_used} pre-floor points"
        )
        problems += convergence_lab.acceptance_violations(reports, fit, acc)
    lines.append("")
    lines.append("PASS" if not problems else "FAIL")
    lines += [f"  {p}" for p in problems]
    storage.write_text("summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return problems

# ==================== ENTRY POINT ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Uniaxial real-stretched PML convergence lab")
    parser.add_argument("command", choices=COMMANDS, help="Operation to run")
    parser.add_argument("--config", help="Path to a JSON run config (defaults if omitted)")
    parser.add_argument("--seed", type=int, default=None, help="Unsigned 64-bit seed (default UPML_SEED)")
    parser.add_argument("--out", default=None, help="Output directory (default UPML_OUTPUT_DIR)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default UPML_THREADS)")
    parser.add_argument("--emit-plots", action="store_true", help="Also write PNG plots and gnuplot .dat files")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    try:
        failed = [name for name, ok in validate_config().items() if not ok]
        if failed:
            raise ConfigError(f"Invalid environment settings: {', '.join(failed)}", rule="environment")
        seed = RUNTIME_CONFIG["seed"] if args.seed is None else args.seed
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f"seed {seed} is not an unsigned 64-bit integer", rule="seed: u64")
        config = parse_config(args.config)
        storage = get_output_storage(args.out)
        threads = resolve_threads(args.threads)
        storage.write_text("config.canonical.json", canonical_config(config) + "\n")
        logger.info(f"Running {args.command} (seed {seed}, {threads} thread(s)) into {storage.output_dir}")

        if args.command == "check-kernels":
            problems = cmd_check_kernels(config, storage, make_rng(seed))
        elif args.command == "simulate":
            problems = cmd_simulate(config, storage, args.emit_plots)
        elif args.command == "reference":
            problems = cmd_reference(config, storage)
        elif args.command == "sweep":
            problems = cmd_sweep(config, storage, threads, args.emit_plots)
        elif args.command == "fit":
            problems = cmd_fit(config, storage)
        else:
            problems = cmd_report(config, storage)

        manifest = RunManifest(
            config_digest=config_digest(config.model_dump(mode="json")),
            tool_version=TOOL_VERSION,
            command=args.command,
            started_at=started,
            finished_at=datetime.now(timezone.utc).isoformat(),
            seed=seed,
            rng_algorithm=RUNTIME_CONFIG["rng_algorithm"],
        )
        storage.write_manifest(manifest)
        if problems:
            raise AssertionFailure(f"{args.command}: {len(problems)} assertion(s) failed", problems)
        logger.info(f"{args.command} finished")
        return EXIT_OK
    except Exception as e:
        return handle_exception(e)


def main():
    """Main function with CLI interface."""
    sys.exit(run())


if __name__ == "__main__":
    main()
