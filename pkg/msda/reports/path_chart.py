import shutil
from typing import Optional

import numpy as np
from rich.text import Text

try:
    import plotext as plt
    PLOTEXT_AVAILABLE = True
except ImportError:
    PLOTEXT_AVAILABLE = False

from ..solver import SolutionPath


def path_chart(path: SolutionPath, cv_errors: Optional[np.ndarray] = None,
               width: int = 0, height: int = 0) -> Text:
    """Terminal chart of active-set size (and CV error) against log λ."""
    if not PLOTEXT_AVAILABLE:
        return Text("plotext is not installed; no chart")
    if len(path) < 2:
        return Text("\n\nPath has a single lambda; nothing to chart")

    x_vals = [float(v) for v in np.log10(path.lambdas)]

    plt.clear_figure()
    plt.clear_data()
    plt.plot(x_vals, path.active_counts, marker="braille", label="active features")
    if cv_errors is not None:
        # errors on the right axis
        plt.plot(x_vals, [float(e) for e in cv_errors], marker="braille", label="CV error",
                 yside="right")
    plt.xlabel("log10 lambda")

    if width <= 0 or height <= 0:
        term_w, term_h = shutil.get_terminal_size(fallback=(120, 30))
        width = term_w
        height = min(20, term_h - 6)

    plt.plotsize(max(30, width - 4), max(8, height))
    plt.theme("dark")
    chart_str = plt.build()

    counts = path.active_counts
    summary = (
        f"\n\nlambda: {path.lambdas[0]:.4g} -> {path.lambdas[-1]:.4g} | "
        f"active: {counts[0]} -> {counts[-1]} | points: {len(path)}"
    )
    return Text.from_ansi(f"Regularization path\n\n{chart_str}{summary}")
