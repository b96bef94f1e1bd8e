"""
Local output storage: CSV tables, UPML1 field snapshots, manifests and plots.

Everything written here is byte-deterministic for identical inputs.
"""

import csv
import hashlib
import io
import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from config import RUNTIME_CONFIG
from exceptions import StorageError
from models import Component, DecayFit, DecayReport, ErrorReport, ExtensionDecayRow, RunManifest

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"UPML1\0"
# magic, 3 x u64 dims, u32 component id, f64 time, u8 dtype code
SNAPSHOT_HEADER = struct.Struct("<6s3QIdB")
DTYPE_F64 = 1

SWEEP_COLUMNS = [
    "sigma0", "d", "sigma0_d", "theory_exponent",
    "l2_hcurl_E", "l2_hcurl_H", "linf_hcurl_E", "linf_hcurl_H", "floor_estimate", "floor_estimate_linf",
]
FIT_COLUMNS = ["rate", "intercept", "r_squared", "n_points_used"]
PROBE_COLUMNS = ["t"] + [c.value for c in Component]
KERNEL_COLUMNS = [
    "sigma0", "d", "m", "s2", "min_re_rho", "min_abs_rho_over_s", "max_phi_abs", "bound_value",
    "n_samples", "re_rho_bound", "violations",
]
EXTENSION_COLUMNS = [
    "sigma0", "layer_exponent", "sup_extension", "bound_shape", "fitted_constant",
    "sup_extension_curl", "curl_bound_shape", "fitted_curl_constant",
]

# ==================== CANONICAL FORMS ====================

def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _canonical(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def canonical_json(data: Dict[str, Any]) -> str:
    """Sorted keys, 17 significant digits for floats, no optional whitespace."""

    def encode(value: Any) -> str:
        if isinstance(value, dict):
            return "{" + ",".join(f"{json.dumps(k)}:{encode(v)}" for k, v in value.items()) + "}"
        if isinstance(value, list):
            return "[" + ",".join(encode(v) for v in value) + "]"
        if value is None:
            return "null"
        if isinstance(value, str):
            return json.dumps(value)
        if isinstance(value, float) and not np.isfinite(value):
            raise StorageError(f"non-finite value {value} cannot be canonicalized")
        return format_value(value)

    return encode(_canonical(data))


def config_digest(data: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()

# ==================== ROWS ====================

def sweep_row(report: ErrorReport) -> List[Any]:
    return [
        report.sigma0, report.d, report.sigma0_d, report.theory_exponent,
        report.l2_hcurl_E, report.l2_hcurl_H, report.linf_hcurl_E, report.linf_hcurl_H,
        report.floor_estimate, report.floor_estimate_linf,
    ]


def fit_row(fit: DecayFit) -> List[Any]:
    return [fit.rate, fit.intercept, fit.r_squared, fit.n_points_used]


def kernel_row(report: DecayReport) -> List[Any]:
    return [
        report.sigma0, report.d, report.m, report.s2, report.min_re_rho,
        report.min_abs_rho_over_s, report.max_phi_abs, report.bound_value,
        report.n_samples, report.re_rho_bound, len(report.violations),
    ]


def extension_row(row: ExtensionDecayRow) -> List[Any]:
    return [
        row.sigma0, row.layer_exponent, row.sup_extension, row.bound_shape, row.fitted_constant,
        row.sup_extension_curl, row.curl_bound_shape, row.fitted_curl_constant,
    ]

# ==================== STORAGE ====================

class OutputStorage:
    """File-based output directory for one CLI invocation."""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = Path(output_dir or RUNTIME_CONFIG["output_dir"])
        self.written: List[str] = []
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create output directory {self.output_dir}: {e}") from e

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _write_bytes(self, name: str, payload: bytes) -> Path:
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(payload)
        except OSError as e:
            raise StorageError(f"cannot write {target}: {e}") from e
        self.written.append(str(target))
        logger.info(f"Wrote {target} ({len(payload)} bytes)")
        return target

    def write_text(self, name: str, text: str) -> Path:
        return self._write_bytes(name, text.encode("utf-8"))

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
        return self.write_text(name, buffer.getvalue())

    def write_dat(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Whitespace-separated table with a '#' header line, as gnuplot reads it."""
        lines = ["# " + " ".join(columns)]
        lines += [" ".join(format_value(v) for v in row) for row in rows]
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_snapshot(self, name: str, component: Component, time: float, data: np.ndarray) -> Path:
        if data.ndim != 3:
            raise StorageError(f"snapshot of {component.value} must be 3-D, got shape {data.shape}")
        header = SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, *data.shape, component.id, float(time), DTYPE_F64)
        payload = np.ascontiguousarray(data, dtype="<f8").tobytes(order="C")
        return self._write_bytes(name, header + payload)

    def write_manifest(self, manifest: RunManifest, name: str = "manifest.json") -> Path:
        manifest = manifest.model_copy(update={"outputs": list(self.written)})
        return self.write_text(name, json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n")

    def read_csv(self, name: str) -> Tuple[List[str], List[Dict[str, str]]]:
        target = self.path(name) if not os.path.isabs(name) else Path(name)
        try:
            with open(target, newline="") as f:
                reader = csv.DictReader(f)
                return list(reader.fieldnames or []), list(reader)
        except OSError as e:
            raise StorageError(f"cannot read {target}: {e}") from e

    def plot_sweep(self, reports: Sequence[ErrorReport], name: str = "sweep.png") -> Path:
        """Semilog plot of combined L2 and Linf errors against sigma0*d*sqrt(eps*mu)/2."""
        x = [r.theory_exponent for r in reports]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy(x, [r.l2_hcurl_E + r.l2_hcurl_H for r in reports], "o-", label="L2(0,T;H(curl))")
        ax.semilogy(x, [r.linf_hcurl_E + r.linf_hcurl_H for r in reports], "s--", label="Linf(0,T;H(curl))")
        if any(r.floor_estimate > 0 for r in reports):
            ax.semilogy(x, [max(r.floor_estimate, 1e-300) for r in reports], ":", color="gray", label="floor")
        ax.set_xlabel("sigma0 d sqrt(eps mu) / 2")
        ax.set_ylabel("error")
        ax.legend()
        ax.grid(True, which="both", alpha=0.3)
        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=120, metadata={"Software": None})
        plt.close(fig)
        return self._write_bytes(name, buffer.getvalue())

    def plot_probe(self, rows: Sequence[Sequence[float]], name: str = "probe.png") -> Path:
        data = np.asarray(rows, dtype=float)
        fig, ax = plt.subplots(figsize=(6, 4))
        for c in Component:
            ax.plot(data[:, 0], data[:, 1 + c.id], label=c.value)
        ax.set_xlabel("t")
        ax.legend(ncol=2)
        buffer = io.BytesIO()
        fig.savefig(buffer, format="png", dpi=120, metadata={"Software": None})
        plt.close(fig)
        return self._write_bytes(name, buffer.getvalue())


def read_snapshot(path: str) -> Tuple[Component, float, np.ndarray]:
    """Parse a UPML1 snapshot file into (component, time, array)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if len(raw) < SNAPSHOT_HEADER.size:
        raise StorageError(f"{path} is shorter than the snapshot header")
    magic, n1, n2, n3, cid, time, dtype = SNAPSHOT_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise StorageError(f"{path} is not a UPML1 snapshot")
    if dtype != DTYPE_F64:
        raise StorageError(f"{path} has unsupported dtype code {dtype}")
    expected = n1 * n2 * n3 * 8
    payload = raw[SNAPSHOT_HEADER.size:]
    if len(payload) != expected:
        raise StorageError(f"{path} payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f8").reshape((n1, n2, n3))
    return list(Component)[cid], time, data.copy()


# Global storage instance
output_storage = None

def get_output_storage(output_dir: Optional[str] = None) -> OutputStorage:
    """Get or create the output storage; a different directory replaces the instance."""
    global output_storage

    wanted = Path(output_dir or RUNTIME_CONFIG["output_dir"])
    if output_storage is None or output_storage.output_dir != wanted:
        output_storage = OutputStorage(str(wanted))
    return output_storage


def reports_from_rows(rows: Iterable[Dict[str, str]]) -> List[ErrorReport]:
    """ErrorReports from sweep CSV rows; derived columns are recomputed."""
    reports = []
    for row in rows:
        reports.append(
            ErrorReport(
                sigma0=float(row["sigma0"]),
                d=float(row["d"]),
                theory_exponent=float(row["theory_exponent"]),
                l2_hcurl_E=float(row["l2_hcurl_E"]),
                l2_hcurl_H=float(row["l2_hcurl_H"]),
                linf_hcurl_E=float(row["linf_hcurl_E"]),
                linf_hcurl_H=float(row["linf_hcurl_H"]),
                floor_estimate=float(row.get("floor_estimate") or 0.0),
                floor_estimate_linf=float(row.get("floor_estimate_linf") or 0.0),
            )
        )
    return reports
