"""Figure generation from exported experiment CSVs.

Five figure kinds, one per invocation: accuracy-vs-epsilon grouped bars,
impact-ratio-vs-eta lines, accuracy-vs-K lines, pre/post homophily
histograms, and the energy-shift-vs-epsilon curve. Input is always one of
the documented CSV schemas written by the simulator CLI; this package
never imports the simulator itself.
"""

from .render import KINDS, FigureSpec, build_figure, render
from .schema import SchemaError, Table, load_table

__version__ = "0.1.0"
