"""ESRI ASCII grid reading and writing.

All rasters in this package share one convention: row-major values with the
first data row at the top of the domain (largest y), square cells (a single
``cellsize``), and an explicit NODATA value.
"""

from __future__ import annotations

import numpy as np

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class RasterError(ValueError):
    """Malformed ESRI ASCII grid or incompatible raster geometry."""


def write_ascii_grid(path, values: np.ndarray, cellsize: float,
                     xllcorner: float = 0.0, yllcorner: float = 0.0,
                     nodata: float = -9999.0) -> None:
    """Write a 2D array as an ESRI ASCII grid. Row 0 is the top row."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise RasterError(f"expected a 2D array, got shape {values.shape}")
    nrows, ncols = values.shape
    with open(path, "w") as f:
        f.write(f"ncols {ncols}\n")
        f.write(f"nrows {nrows}\n")
        f.write(f"xllcorner {xllcorner!r}\n")
        f.write(f"yllcorner {yllcorner!r}\n")
        f.write(f"cellsize {cellsize!r}\n")
        f.write(f"NODATA_value {nodata!r}\n")
        for row in values:
            f.write(" ".join(repr(float(v)) for v in row))
            f.write("\n")


def read_ascii_grid(path):
    """Read an ESRI ASCII grid.

    Returns (values, header) where header is a dict with ncols, nrows,
    xllcorner, yllcorner, cellsize and nodata_value. NODATA cells are
    returned as NaN.
    """
    header = {}
    data_lines = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if key in _HEADER_KEYS and len(parts) == 2:
                header[key] = float(parts[1])
            else:
                data_lines.append(parts)
    missing = [k for k in _HEADER_KEYS[:5] if k not in header]
    if missing:
        raise RasterError(f"{path}: missing header keys {missing}")
    header.setdefault("nodata_value", -9999.0)
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    flat = [float(v) for parts in data_lines for v in parts]
    if len(flat) != ncols * nrows:
        raise RasterError(
            f"{path}: expected {ncols * nrows} values, found {len(flat)}")
    values = np.array(flat, dtype=float).reshape(nrows, ncols)
    values[values == header["nodata_value"]] = np.nan
    header["ncols"] = ncols
    header["nrows"] = nrows
    return values, header
