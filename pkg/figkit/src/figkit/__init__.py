"""figkit: renders floodlab's CSV and raster outputs into diagnostic figures.

Strictly one-way: figkit only reads the documented output schemas and never
recomputes any science.
"""

from .render import FIGURE_KINDS, SchemaError, render

__version__ = "0.1.0"
