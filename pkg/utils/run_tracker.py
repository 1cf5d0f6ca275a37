"""
Run Tracker for optimization, simulation and sensing runs
Persists reproducible reports, plot-ready tables and wall-clock timing
"""
import json
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from optimizers.report import OptimizationReport

FLOAT_FORMAT = "%.17g"
REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"
PULSES_FILE = "pulses.tsv"


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def write_table(path: Path, header: Sequence[str], rows) -> Path:
    """Tab-separated table with a header row and 17 significant digits"""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(header):
        raise ValueError(f"table has {rows.shape[1]} columns but {len(header)} header names")
    lines = ["\t".join(header)]
    lines.extend("\t".join(format_float(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


class RunTracker:
    """Collect the outputs of one command run and write them to its output directory"""

    def __init__(self, out_dir: str, command: str):
        self.out_dir = Path(out_dir)
        self.command = command
        self.started_at = datetime.now().isoformat()
        self._t0 = time.perf_counter()
        self.report_data: Dict[str, Any] = {"command": command}
        self.tables: List[Path] = []
        self._pending: List[Tuple[str, List[str], np.ndarray]] = []
        self.optimization: Optional[OptimizationReport] = None
        self.wall_time: Optional[float] = None

    def record_config(self, config_echo: Dict[str, Any], config_hash: str):
        self.report_data["config"] = config_echo
        self.report_data["config_sha256"] = config_hash

    def record_optimization(self, report: OptimizationReport):
        self.optimization = report
        self.report_data["optimization"] = report.to_dict()
        logger.debug(f"Recorded {report.method} run: {len(report.trace)} trace entries")

    def record(self, key: str, value: Any):
        self.report_data[key] = value

    def add_table(self, name: str, header: Sequence[str], rows):
        """Queue a table; nothing touches the output directory before save()"""
        self._pending.append((name, list(header), np.asarray(rows, dtype=float)))

    def save(self) -> Path:
        """Write report.json (byte-stable), timing.json and, after an optimization, pulses.tsv"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.wall_time = time.perf_counter() - self._t0

        if self.optimization is not None:
            pulses = self.optimization.final_pulses
            if pulses.n_controls:
                header = ["t"] + [f"u_{k + 1}" for k in range(pulses.n_controls)]
                rows = np.column_stack([pulses.times[:-1], pulses.amplitudes.T])
                self.add_table(PULSES_FILE, header, rows)

        for name, header, rows in self._pending:
            self.tables.append(write_table(self.out_dir / name, header, rows))
        self._pending = []

        report_path = self.out_dir / REPORT_FILE
        with open(report_path, "w") as f:
            json.dump(self.report_data, f, indent=2, sort_keys=True)
            f.write("\n")

        with open(self.out_dir / TIMING_FILE, "w") as f:
            json.dump({"started_at": self.started_at, "wall_time_s": self.wall_time}, f, indent=2)

        logger.info(f"💾 Saved {self.command} results to {self.out_dir}")
        return report_path

    def generate_summary_report(self) -> str:
        """Generate a final summary report"""
        report = []
        report.append("\n" + "=" * 60)
        report.append(f"📊 {self.command.upper()} SUMMARY REPORT")
        report.append("=" * 60)

        if self.optimization is not None:
            opt = self.optimization
            report.append(f"\n📈 Optimization ({opt.method}):")
            report.append(f"   Final cost: {opt.final_cost:.6e}")
            report.append(f"   Stop reason: {opt.stop_reason}")
            report.append(f"   Iterations: {opt.iterations} | Evaluations: {opt.evaluations}")
            if opt.trace:
                report.append(f"   Initial cost: {opt.trace[0]:.6e}")
            if opt.seeds:
                report.append(f"   Seeds: {', '.join(str(s) for s in opt.seeds)}")

        for key in ("qsl", "controllability", "readout"):
            if key in self.report_data:
                report.append(f"\n🔎 {key}:")
                for name, value in sorted(self.report_data[key].items()):
                    report.append(f"   {name}: {value}")

        if self.tables:
            report.append(f"\n📄 Tables ({len(self.tables)}):")
            for path in self.tables:
                report.append(f"   - {path.name}")

        report.append(f"\n📁 Output Directory: {self.out_dir}")
        report.append(f"   Started: {self.started_at}")
        if self.wall_time is not None:
            report.append(f"   Wall time: {self.wall_time:.2f} s")
        report.append("\n" + "=" * 60)
        return "\n".join(report)
