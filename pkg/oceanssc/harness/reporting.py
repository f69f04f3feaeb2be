"""
Console summaries for the CLI subcommands.

Everything here only prints; the files a command writes are produced by the
command itself so that output bytes never depend on the terminal.
"""

from logging import getLogger
from typing import Dict, Optional

from rich.console import Console
from rich.table import Table

from ..attention.oracles import ORACLE_TOLERANCE, OracleReport
from ..losses.losses import LossReport
from ..losses.metrics import MetricReport
from .fixtures import SceneFixture
from .gradcheck import GradcheckReport, ProbeReport

log = getLogger(__name__)


class HarnessReporter:
    """Rich tables for fixtures, loss reports, metrics and numerical checks."""

    def __init__(self, console: Optional[Console] = None, quiet: bool = False):
        self.console = console or Console()
        self.quiet = quiet

    def _print_header(self, title: str) -> None:
        if not self.quiet:
            self.console.rule(f"[bold]{title}")

    def _print(self, renderable) -> None:
        if not self.quiet:
            self.console.print(renderable)

    # -- fixtures ------------------------------------------------------------

    def report_fixture(self, fixture: SceneFixture, out_dir=None) -> None:
        self._print_header("FIXTURE")
        table = Table(show_header=False)
        table.add_row("seed", str(fixture.seed))
        table.add_row("image", "x".join(map(str, fixture.image_shape)))
        table.add_row("grid", "x".join(map(str, fixture.grid.dims)))
        table.add_row("instances", str(fixture.mask.count))
        table.add_row("scales", ", ".join(map(str, fixture.scales)))
        if out_dir is not None:
            table.add_row("written to", str(out_dir))
        self._print(table)

    # -- losses and metrics ----------------------------------------------------

    def report_losses(self, report: LossReport, title: str = "LOSSES") -> None:
        self._print_header(title)
        table = Table("term", "value")
        for key, value in report.data.items():
            table.add_row(key, f"{value:.6g}")
        self._print(table)

    def report_training(self, totals, out_path=None) -> None:
        self._print_header("TRAINING")
        if not totals:
            self._print("no steps recorded")
            return
        ratio = totals[-1] / totals[0] if totals[0] else float("nan")
        table = Table(show_header=False)
        table.add_row("steps", str(len(totals)))
        table.add_row("initial total", f"{totals[0]:.6f}")
        table.add_row("final total", f"{totals[-1]:.6f}")
        table.add_row("final / initial", f"{ratio:.4f}")
        if out_path is not None:
            table.add_row("trajectory", str(out_path))
        self._print(table)

    def report_metrics(self, report: MetricReport) -> None:
        self._print_header("METRICS")
        table = Table("metric", "value")
        for key, value in report.data.items():
            table.add_row(key, f"{value:.6f}" if isinstance(value, float) else str(value))
        self._print(table)

    # -- numerical checks --------------------------------------------------------

    def report_gradcheck(self, reports: Dict[str, GradcheckReport],
                         probe: Optional[ProbeReport] = None) -> None:
        self._print_header("GRADIENT CHECK")
        table = Table("op", "trials", "max rel. error", "status")
        for report in reports.values():
            table.add_row(report.op, str(report.trials), f"{report.max_error:.3e}",
                          "[green]ok" if report.passed else "[red]FAIL")
        if probe is not None:
            table.add_row("pipeline probe", str(probe.samples), f"{probe.max_error:.3e}",
                          "[green]ok" if probe.passed else "[red]FAIL")
        self._print(table)

    def report_oracles(self, reports: Dict[str, OracleReport]) -> None:
        self._print_header("ORACLES")
        table = Table("op", "trials", "max deviation", "seconds", "status")
        for report in reports.values():
            table.add_row(report.op, str(report.trials), f"{report.max_deviation:.3e}",
                          f"{report.seconds:.2f}",
                          "[green]ok" if report.passed else "[red]FAIL")
        self._print(table)
        self._print(f"tolerance {ORACLE_TOLERANCE:.0e}")
