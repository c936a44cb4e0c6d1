from typing import Dict, Sequence

import numpy as np
from matplotlib.figure import Figure

from meshtok.drawing.colours import DEFAULT_METHOD_COLOUR, METHOD_COLOURS
from meshtok.errors import InvalidInputException

HISTOGRAM_BINS = 30


def plot_pve_distribution(pve_by_method: Dict[str, Sequence[float]], out_path: str,
                          title: str = "Per-sample PVE") -> None:
    """Histogram and violin/box plot of per-sample PVE (mm) for each method; means are marked."""
    methods = [name for name, values in pve_by_method.items() if len(values)]
    if not methods:
        raise InvalidInputException("No PVE values to plot.")
    values = [np.asarray(pve_by_method[name], dtype=np.float64) for name in methods]
    colours = [METHOD_COLOURS.get(name, DEFAULT_METHOD_COLOUR) for name in methods]

    figure = Figure(figsize=(11, 4.5))
    histogram_axis, violin_axis = figure.subplots(1, 2)

    upper = max(float(v.max()) for v in values)
    bins = np.linspace(0.0, upper if upper > 0 else 1.0, HISTOGRAM_BINS + 1)
    for name, method_values, colour in zip(methods, values, colours):
        histogram_axis.hist(method_values, bins=bins, alpha=0.5, color=colour, label=name)
        histogram_axis.axvline(method_values.mean(), color=colour, linestyle="--", linewidth=1.5)
    histogram_axis.set_xlabel("PVE (mm)")
    histogram_axis.set_ylabel("samples")
    histogram_axis.legend()

    positions = np.arange(1, len(methods) + 1)
    if all(len(v) > 1 for v in values):
        violins = violin_axis.violinplot(values, positions=positions, showextrema=False)
        for body, colour in zip(violins["bodies"], colours):
            body.set_facecolor(colour)
            body.set_alpha(0.4)
    violin_axis.boxplot(values, positions=positions, widths=0.15, showfliers=False)
    violin_axis.scatter(positions, [v.mean() for v in values], marker="D", color="black", zorder=3, label="mean")
    violin_axis.set_xticks(positions)
    violin_axis.set_xticklabels(methods)
    violin_axis.set_ylabel("PVE (mm)")
    violin_axis.legend()

    figure.suptitle(title)
    figure.tight_layout()
    figure.savefig(out_path)
