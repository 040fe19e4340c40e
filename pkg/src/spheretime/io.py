"""Plain-text data formats and atomic file output.

Point data use a CSV with header ``lat_deg,lon_deg,time,value``: degrees at
the boundary, radians internally.  Lines starting with ``#`` are comments
(the writers put the config hash there).  Floats are written with ``repr``
so that reading a written file returns the same values exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynspec import GridSeries
from .krige import ObservationSet
from .sphere import LatLonGrid, latlon_to_xyz, xyz_to_latlon

POINT_COLUMNS = ("lat_deg", "lon_deg", "time", "value")


class DataFormatError(ValueError):
    """Input file does not follow the documented layout."""


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def format_csv(header, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and string rows of a CSV, skipping ``#`` comment lines."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataFormatError(f"{path}: file is empty")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    return header, [r for r in reader]


def format_points(lat_deg, lon_deg, time, value, comments=()) -> str:
    rows = zip(*(np.asarray(a, dtype=float).ravel() for a in (lat_deg, lon_deg, time, value)))
    return format_csv(POINT_COLUMNS, rows, comments)


def read_points(path, columns=POINT_COLUMNS) -> dict[str, np.ndarray]:
    """Numeric columns of a point file; at least one data row is required."""
    header, rows = read_csv(path)
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing columns {missing}; header is {header}")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    idx = [header.index(c) for c in columns]
    try:
        data = np.array([[float(r[i]) for i in idx] for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: non-numeric or short row ({exc})") from None
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite values")
    return {c: data[:, j] for j, c in enumerate(columns)}


def points_to_observations(data: dict[str, np.ndarray], units=None) -> ObservationSet:
    sites = latlon_to_xyz(data["lat_deg"], data["lon_deg"])
    return ObservationSet(sites, data["time"], data["value"], None, dict(units or {}))


def observations_to_latlon(obs: ObservationSet):
    return xyz_to_latlon(obs.sites)


def grid_from_points(data: dict[str, np.ndarray], tol: float = 1e-9) -> GridSeries:
    """Assemble a complete regular grid series from point rows.

    Longitudes must be ``j * 360 / N`` (mod 360) and every
    (latitude, longitude, time) combination must appear exactly once.
    """
    lat = np.unique(data["lat_deg"])
    times = np.unique(data["time"])
    lon = np.mod(data["lon_deg"], 360.0)
    lon_u = np.unique(np.round(lon, 9))
    n_lon = lon_u.size
    expected = np.arange(n_lon) * 360.0 / n_lon
    if not np.allclose(lon_u, expected, atol=1e-7):
        raise DataFormatError("longitudes are not an equally spaced ring starting at 0")
    n = lat.size * n_lon * times.size
    if data["value"].size != n:
        raise DataFormatError(
            f"expected {n} rows for a {lat.size}x{n_lon} grid at {times.size} times, "
            f"found {data['value'].size}"
        )
    i = np.searchsorted(lat, data["lat_deg"])
    j = np.rint(lon * n_lon / 360.0).astype(int) % n_lon
    t = np.searchsorted(times, data["time"])
    values = np.full((lat.size, n_lon, times.size), np.nan)
    values[i, j, t] = data["value"]
    if np.isnan(values).any():
        raise DataFormatError("grid is incomplete or has duplicated cells")
    return GridSeries(LatLonGrid(np.radians(lat), n_lon), times, values)


def format_grid_series(series: GridSeries, comments=()) -> str:
    """Rows time-major, then latitude, then longitude."""
    lat = np.degrees(series.grid.lat)
    lon = np.degrees(series.grid.lon)
    tt, ii, jj = np.meshgrid(np.arange(series.n_times), np.arange(lat.size), np.arange(lon.size), indexing="ij")
    return format_points(
        lat[ii], lon[jj], series.times[tt], series.values[ii, jj, tt], comments
    )
