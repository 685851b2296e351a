from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tabulate import tabulate
from colorama import Fore, Style, init

from src.models import EvalReport, GradcheckReport, SolveReport, Termination
from src.utils.serialization import write_csv

# Initialize colorama for cross-platform colored output
init()

# Column layout of the noise table: noise level, rotation, translation, line direction, line distance
TABLE_COLUMNS = ['noise', 'rot', 'trans', 'lr', 'ld']
SWEEP_COLUMNS = ['experiment', 'method', 'axis', 'value'] + TABLE_COLUMNS + ['ate', 'time', 'failures']


def _fmt(value: Any) -> str:
    if value is None:
        return 'n/a'
    if isinstance(value, float):
        return 'nan' if not np.isfinite(value) else f"{value:.3e}"
    return str(value)


class OutputFormatter:
    def __init__(self, output_config: Dict):
        self.config = output_config
        self.output_dir = Path(output_config.get('output_directory', 'results'))

    def _path(self, filename: Optional[str], suffix: str) -> Path:
        if filename is None:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            filename = f"{self.config.get('filename_prefix', 'rslba_')}{timestamp}{suffix}"
        path = Path(filename)
        return path if path.is_absolute() or path.parent != Path('.') else self.output_dir / path

    def print_solve_summary(self, report: SolveReport) -> None:
        color = Fore.GREEN if report.termination != Termination.MAX_ITER else Fore.YELLOW
        print(f"\n{Fore.CYAN}=== SOLVE SUMMARY ({report.method}) ==={Style.RESET_ALL}")
        rows = [
            ['termination', f"{color}{report.termination.value}{Style.RESET_ALL}"],
            ['iterations', report.iterations],
            ['initial cost', _fmt(report.initial_cost)],
            ['final cost', _fmt(report.final_cost)],
            ['escapes', report.escapes],
            ['invalid rows', report.num_invalid],
            ['time [s]', f"{report.solve_time:.2f}"],
        ]
        print(tabulate(rows, tablefmt="grid"))

    def print_eval(self, report: EvalReport, noise: Optional[float] = None) -> None:
        print(f"\n{Fore.CYAN}=== EVALUATION ==={Style.RESET_ALL}")
        cameras = [
            [index, _fmt(rot), _fmt(trans)]
            for index, (rot, trans) in enumerate(zip(report.rotation_err, report.translation_err))
        ]
        print(tabulate(cameras, headers=["Camera", "Rotation [rad]", "Translation [rad]"], tablefmt="grid"))
        print(tabulate([self.table_row(report, noise)], headers=TABLE_COLUMNS, tablefmt="grid"))
        print(f"📏 ATE median {Fore.YELLOW}{_fmt(report.ate_median)}{Style.RESET_ALL}, "
              f"max {Fore.YELLOW}{_fmt(report.ate_max)}{Style.RESET_ALL}")

    def print_sweep(self, rows: Sequence[Dict[str, Any]]) -> None:
        if not rows:
            print(f"{Fore.YELLOW}No sweep rows to show.{Style.RESET_ALL}")
            return
        print(f"\n{Fore.CYAN}=== SWEEP: {rows[0]['axis']} ==={Style.RESET_ALL}")
        table = [[_fmt(row.get(col)) for col in SWEEP_COLUMNS] for row in rows]
        print(tabulate(table, headers=SWEEP_COLUMNS, tablefmt="grid"))
        failures = sum(row.get('failures', 0) for row in rows)
        if failures:
            print(f"{Fore.RED}⚠️  {failures} trials failed{Style.RESET_ALL}")

    def print_gradcheck(self, report: GradcheckReport) -> None:
        print(f"\n{Fore.CYAN}=== GRADIENT CHECK ({report.instances} instances) ==={Style.RESET_ALL}")
        rows = []
        for name, err in report.worst.items():
            ok = err < report.threshold
            status = f"{Fore.GREEN}pass{Style.RESET_ALL}" if ok else f"{Fore.RED}FAIL{Style.RESET_ALL}"
            rows.append([name, f"{err:.3e}", status])
        print(tabulate(rows, headers=["Block", "Worst rel. error", "Status"], tablefmt="grid"))
        for error in report.errors:
            print(f"  {Fore.RED}• {error}{Style.RESET_ALL}")

    def print_degeneracy(self, result: Dict[str, Any]) -> None:
        summary, probe = result['summary'], result['probe']
        print(f"\n{Fore.CYAN}=== DEGENERACY: {summary['kind']} ==={Style.RESET_ALL}")
        rows = [[key, _fmt(value) if not isinstance(value, list) else ', '.join(_fmt(v) for v in value)]
                for key, value in summary.items() if key != 'kind']
        print(tabulate(rows, tablefmt="grid"))
        print(f"\n{Fore.CYAN}🔎 Probe at the degenerate set:{Style.RESET_ALL}")
        print(f"  indeterminate samples: {probe.indeterminate_fraction:.2%}")
        print(f"  flatness {probe.flatness:.3e}, coplanarity {probe.coplanarity:.3e}, "
              f"eigen ratio {probe.eigen_ratio:.3e}")
        for flag in probe.flags:
            print(f"  {Fore.YELLOW}• {flag}{Style.RESET_ALL}")

    @staticmethod
    def table_row(report: EvalReport, noise: Optional[float] = None) -> List[Any]:
        return [noise if noise is not None else float('nan'), report.rotation_median,
                report.translation_median, report.line_dir_median, report.line_dist_median]

    def save_to_csv(self, rows: Sequence[Sequence[Any]], header: Sequence[str] = TABLE_COLUMNS,
                    filename: Optional[str] = None) -> str:
        """Save rows to CSV"""
        return write_csv(self._path(filename, '.csv'), header, rows)

    def save_sweep(self, rows: Sequence[Dict[str, Any]], filename: Optional[str] = None) -> str:
        return self.save_to_csv([[row.get(col) for col in SWEEP_COLUMNS] for row in rows],
                                header=SWEEP_COLUMNS, filename=filename)
