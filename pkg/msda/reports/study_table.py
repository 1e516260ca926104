import io
from typing import List

from rich.console import Console
from rich.table import Table

from ..simbench import StudySummary


def _cell(summary: StudySummary, metric: str, scale: float = 1.0, digits: int = 1) -> str:
    median = summary.medians[metric] * scale
    se = summary.std_errors[metric] * scale
    return f"{median:.{digits}f} ({se:.{digits}f})"


def study_table(summaries: List[StudySummary]) -> Table:
    """Simulation summaries laid out like the usual error / C / IC table.

    Errors are in percent; standard errors of the medians in parentheses.
    """
    table = Table(title="Simulation study (medians, se in parentheses)")
    table.add_column("Model", justify="left")
    table.add_column("K", justify="right")
    table.add_column("Reps", justify="right")
    table.add_column("Error %", justify="right")
    table.add_column("C", justify="right")
    table.add_column("IC", justify="right")
    table.add_column("Bayes %", justify="right")

    for s in summaries:
        table.add_row(
            str(s.model_id),
            str(s.K),
            str(s.n_replicates),
            _cell(s, "test_error", 100.0),
            _cell(s, "C", digits=1),
            _cell(s, "IC", digits=1),
            _cell(s, "bayes_error", 100.0),
        )
    return table


def study_text(summaries: List[StudySummary], width: int = 100) -> str:
    """Plain-text rendering of `study_table`, for writing next to the CSV."""
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None, force_terminal=False)
    console.print(study_table(summaries))
    return buffer.getvalue()
