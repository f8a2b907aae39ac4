"""
Snapshot Module

Reads and writes field snapshots (raw little-endian float64 samples plus a
JSON sidecar describing the grid), 1-D profile CSVs and tabular series.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError
from .grid import Field, Grid, GridSpec, NKGState, build_grid
from .utils import ensure_directory, write_json

logger = logging.getLogger(__name__)

SNAPSHOT_SUFFIX = ".snap"
SIDECAR_SUFFIX = ".snap.json"
LAYOUT = "row-major"
DTYPE = "float64-little-endian"


@dataclass
class SnapshotHeader:
    """Contents of a snapshot sidecar."""
    grid: Dict[str, Any]
    component_type: str
    layout: str = LAYOUT
    dtype: str = DTYPE

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.grid)
        data.update({
            'component_type': self.component_type,
            'layout': self.layout,
            'dtype': self.dtype,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SnapshotHeader':
        try:
            grid = {key: data[key] for key in ('kind', 'dims', 'boundary')}
            grid['spacings'] = data.get('spacings')
            return cls(
                grid=grid,
                component_type=data['component_type'],
                layout=data.get('layout', LAYOUT),
                dtype=data.get('dtype', DTYPE),
            )
        except KeyError as e:
            raise ConfigurationError(f"Snapshot sidecar is missing {e}") from e


def _paths(base: Path):
    base = Path(base)
    name = base.name[:-len(SNAPSHOT_SUFFIX)] if base.name.endswith(SNAPSHOT_SUFFIX) else base.name
    return base.with_name(name + SNAPSHOT_SUFFIX), base.with_name(name + SIDECAR_SUFFIX)


class SnapshotWriter:
    """Writes snapshots and tables under one output directory."""

    def __init__(self, directory: Path):
        self.directory = ensure_directory(Path(directory))
        self.written_count = 0

    def save_field(self, field: Field, name: str) -> Path:
        """
        Write name.snap and name.snap.json.

        Complex samples are stored as interleaved (re, im) pairs.

        Returns:
            Path of the raw sample file
        """
        data_path, sidecar_path = _paths(self.directory / name)
        ensure_directory(data_path.parent)
        if field.is_complex:
            raw = field.values.astype('<c16').view('<f8')
        else:
            raw = field.values.astype('<f8')
        raw.tofile(data_path)
        header = SnapshotHeader(grid=field.grid.to_dict(), component_type=field.component_type)
        write_json(header.to_dict(), sidecar_path)
        self.written_count += 1
        logger.debug(f"Saved snapshot {data_path}")
        return data_path

    def save_state(self, state: Union[Field, NKGState], name: str) -> List[Path]:
        """Write a Field, or both components of an NKG state (name_psi, name_psi_hat)."""
        if isinstance(state, NKGState):
            return [
                self.save_field(state.psi, f"{name}_psi"),
                self.save_field(state.psi_hat, f"{name}_psi_hat"),
            ]
        return [self.save_field(state, name)]

    def save_profile_csv(self, field: Field, name: str) -> Path:
        """1-D fields as (coordinate, value) rows; complex fields add an imaginary column."""
        if field.grid.ndim != 1:
            raise ConfigurationError("Profile CSVs are written for 1-D fields only")
        path = self.directory / f"{name}.csv"
        if field.is_complex:
            rows = [
                {'x': x, 'real': v.real, 'imag': v.imag}
                for x, v in zip(field.grid.coords[0], field.values)
            ]
        else:
            rows = [{'x': x, 'value': v} for x, v in zip(field.grid.coords[0], field.values)]
        return self.save_table(rows, path.name)

    def save_table(self, rows: Sequence[Dict[str, Any]], filename: str) -> Path:
        """Write dict rows as CSV; the first row fixes the column order."""
        path = self.directory / filename
        ensure_directory(path.parent)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            if rows:
                writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: _format_cell(v) for k, v in row.items()})
        self.written_count += 1
        logger.debug(f"Wrote {len(rows)} rows to {path}")
        return path

    def save_report(self, report: Dict[str, Any], filename: str = "report.json") -> Path:
        path = write_json(report, self.directory / filename)
        self.written_count += 1
        return path


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def load_field(path: Union[str, Path], grid: Optional[Grid] = None) -> Field:
    """
    Read a snapshot written by SnapshotWriter.save_field.

    Args:
        path: Snapshot path (with or without the .snap suffix)
        grid: Reuse this grid instead of rebuilding one from the sidecar

    Returns:
        Field

    Raises:
        ConfigurationError: If the files are missing or inconsistent
    """
    data_path, sidecar_path = _paths(Path(path))
    if not data_path.exists() or not sidecar_path.exists():
        raise ConfigurationError(f"Snapshot not found: {data_path} (+ sidecar)")
    try:
        with open(sidecar_path, 'r', encoding='utf-8') as f:
            header = SnapshotHeader.from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid JSON in {sidecar_path}: {e}") from e

    if header.layout != LAYOUT or header.dtype != DTYPE:
        raise ConfigurationError(
            f"Unsupported snapshot layout/dtype: {header.layout}/{header.dtype}"
        )
    if grid is None:
        grid = build_grid(GridSpec.from_dict(header.grid))

    raw = np.fromfile(data_path, dtype='<f8')
    expected = grid.size * (2 if header.component_type == "complex" else 1)
    if raw.size != expected:
        raise ConfigurationError(
            f"Snapshot {data_path} holds {raw.size} values, expected {expected}"
        )
    if header.component_type == "complex":
        values = raw.view('<c16')
    else:
        values = raw
    return Field(grid, values.astype(np.complex128 if header.component_type == "complex" else np.float64)
                 .reshape(grid.shape))


def load_state(path: Union[str, Path], nkg: bool = False) -> Union[Field, NKGState]:
    """Read a Field, or an NKG state saved as <path>_psi / <path>_psi_hat."""
    path = Path(path)
    if not nkg:
        return load_field(path)
    psi = load_field(path.with_name(path.name + "_psi"))
    psi_hat = load_field(path.with_name(path.name + "_psi_hat"), grid=psi.grid)
    return NKGState(psi, psi_hat)


def save_state(state: Union[Field, NKGState], directory: Union[str, Path], name: str) -> List[Path]:
    """
    Convenience function to write a state snapshot.

    Args:
        state: Field or NKGState
        directory: Output directory
        name: Base file name

    Returns:
        Written sample files
    """
    return SnapshotWriter(Path(directory)).save_state(state, name)
