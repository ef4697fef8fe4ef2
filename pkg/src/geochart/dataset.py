"""Dataset model and the on-disk dataset directory format.

A dataset directory holds four files:

``meta.json``
    Dimensions and array geometry.
``csi.bin``
    ``L x B x M_row x M_col x T`` complex values, row-major, each stored as two
    little-endian float32 (real, imaginary).
``pos.bin``
    ``L x 2`` little-endian float64 positions (only if ``has_positions``).
``time.bin``
    ``L`` little-endian float64 timestamps in seconds.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

CSI_DTYPE = np.dtype("<c8")
F64 = np.dtype("<f8")


class DatasetError(ValueError):
    """Raised for malformed datasets or dataset directories."""


@dataclass(frozen=True)
class ArrayGeometry:
    num_arrays: int
    rows: int
    cols: int
    taps: int
    array_positions: np.ndarray  # (B, 2) meters
    array_orientations: np.ndarray  # (B,) radians, direction of the array normal
    antenna_spacing: float = 0.5  # wavelengths
    carrier_wavelength: float = 0.2357
    sample_rate: float = 50e6

    def __post_init__(self):
        for name in ("num_arrays", "rows", "cols", "taps"):
            if int(getattr(self, name)) < 1:
                raise DatasetError(f"{name} must be >= 1")
        pos = np.asarray(self.array_positions, dtype=np.float64).reshape(-1, 2)
        ori = np.asarray(self.array_orientations, dtype=np.float64).reshape(-1)
        if pos.shape[0] != self.num_arrays or ori.shape[0] != self.num_arrays:
            raise DatasetError("array_positions/array_orientations must have one entry per array")
        # wrap into [-pi, pi)
        ori = (ori + np.pi) % (2 * np.pi) - np.pi
        object.__setattr__(self, "array_positions", pos)
        object.__setattr__(self, "array_orientations", ori)

    @property
    def antennas(self) -> int:
        return self.rows * self.cols

    @property
    def cir_shape(self) -> tuple:
        return (self.num_arrays, self.rows, self.cols, self.taps)

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return (
            self.cir_shape == other.cir_shape
            and np.array_equal(self.array_positions, other.array_positions)
            and np.array_equal(self.array_orientations, other.array_orientations)
            and self.antenna_spacing == other.antenna_spacing
            and self.carrier_wavelength == other.carrier_wavelength
            and self.sample_rate == other.sample_rate
        )


@dataclass(frozen=True)
class Datapoint:
    cir: np.ndarray
    position: Optional[np.ndarray]
    timestamp: float


@dataclass(frozen=True)
class Dataset:
    """Time-ordered collection of CIR tensors with optional ground truth.

    ``cir`` has shape ``(L, B, M_row, M_col, T)`` (complex64), ``positions``
    ``(L, 2)`` float64 or ``None``, ``timestamps`` ``(L,)`` float64.
    """

    geometry: ArrayGeometry
    cir: np.ndarray
    timestamps: np.ndarray
    positions: Optional[np.ndarray] = None
    gap_threshold: Optional[float] = None
    trajectory_breaks: np.ndarray = field(init=False)

    def __post_init__(self):
        cir = np.asarray(self.cir, dtype=np.complex64)
        t = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        L = t.shape[0]
        if cir.shape != (L,) + self.geometry.cir_shape:
            raise DatasetError(
                f"cir shape {cir.shape} does not match (L,) + {self.geometry.cir_shape}"
            )
        if not np.all(np.isfinite(t)):
            raise DatasetError("timestamps must be finite")
        if L > 1 and np.any(np.diff(t) <= 0):
            raise DatasetError("non-monotone timestamps")
        pos = self.positions
        if pos is not None:
            pos = np.asarray(pos, dtype=np.float64)
            if pos.ndim != 2 or pos.shape[0] != L:
                raise DatasetError("positions must have shape (L, 2)")
            if pos.shape[1] == 3:
                log.warning("dropping third position coordinate; charting is 2D")
                pos = pos[:, :2]
            if pos.shape[1] != 2:
                raise DatasetError("positions must have shape (L, 2)")
            pos = np.ascontiguousarray(pos)
        for arr in (cir, t) + ((pos,) if pos is not None else ()):
            arr.flags.writeable = False
        object.__setattr__(self, "cir", cir)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "trajectory_breaks", find_breaks(t, self.gap_threshold))

    def __len__(self):
        return self.timestamps.shape[0]

    def __getitem__(self, l: int) -> Datapoint:
        pos = None if self.positions is None else self.positions[l]
        return Datapoint(self.cir[l], pos, float(self.timestamps[l]))

    @property
    def has_positions(self) -> bool:
        return self.positions is not None


def find_breaks(timestamps: np.ndarray, gap_threshold: Optional[float] = None) -> np.ndarray:
    """Indices ``l`` where ``t[l] - t[l-1]`` exceeds the gap threshold.

    The default threshold is five times the median sampling interval.
    """
    t = np.asarray(timestamps, dtype=np.float64)
    if t.shape[0] < 2:
        return np.zeros(0, dtype=np.int64)
    dt = np.diff(t)
    thr = 5.0 * float(np.median(dt)) if gap_threshold is None else float(gap_threshold)
    return (np.nonzero(dt > thr)[0] + 1).astype(np.int64)


def restrict_to_array(dataset: Dataset, array_index: int) -> Dataset:
    """Keep only the CSI of one antenna array (1-based ``array_index``)."""
    g = dataset.geometry
    if not 1 <= array_index <= g.num_arrays:
        raise DatasetError(f"array index {array_index} out of range 1..{g.num_arrays}")
    b = array_index - 1
    geom = replace(
        g,
        num_arrays=1,
        array_positions=g.array_positions[b : b + 1],
        array_orientations=g.array_orientations[b : b + 1],
    )
    return Dataset(
        geometry=geom,
        cir=dataset.cir[:, b : b + 1],
        timestamps=dataset.timestamps,
        positions=dataset.positions,
        gap_threshold=dataset.gap_threshold,
    )


def _meta(dataset: Dataset) -> dict:
    g = dataset.geometry
    return {
        "L": len(dataset),
        "B": g.num_arrays,
        "M_row": g.rows,
        "M_col": g.cols,
        "T": g.taps,
        "sample_rate": g.sample_rate,
        "carrier_wavelength": g.carrier_wavelength,
        "antenna_spacing": g.antenna_spacing,
        "array_positions": g.array_positions.tolist(),
        "array_orientations": g.array_orientations.tolist(),
        "has_positions": dataset.has_positions,
    }


def save_dataset(dataset: Dataset, path, overwrite: bool = False) -> None:
    path = Path(path)
    if len(dataset) < 1:
        raise DatasetError("L >= 1 required")
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise FileExistsError(f"{path} exists and is not empty (pass overwrite=True)")
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "meta.json", "w", encoding="utf-8") as f:
        json.dump(_meta(dataset), f, indent=2, sort_keys=True)
        f.write("\n")
    dataset.cir.astype(CSI_DTYPE, copy=False).tofile(path / "csi.bin")
    dataset.timestamps.astype(F64, copy=False).tofile(path / "time.bin")
    pos_file = path / "pos.bin"
    if dataset.has_positions:
        dataset.positions.astype(F64, copy=False).tofile(pos_file)
    elif pos_file.exists():
        os.remove(pos_file)


def _read(file: Path, dtype: np.dtype, count: int) -> np.ndarray:
    if not file.exists():
        raise DatasetError(f"missing file {file.name}")
    size = file.stat().st_size
    if size != count * dtype.itemsize:
        raise DatasetError(
            f"payload size mismatch in {file.name}: {size} bytes, expected {count * dtype.itemsize}"
        )
    return np.fromfile(file, dtype=dtype, count=count)


def load_dataset(path, gap_threshold: Optional[float] = None) -> Dataset:
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise DatasetError(f"missing file {meta_file.name}")
    with open(meta_file, encoding="utf-8") as f:
        meta = json.load(f)
    geom = ArrayGeometry(
        num_arrays=int(meta["B"]),
        rows=int(meta["M_row"]),
        cols=int(meta["M_col"]),
        taps=int(meta["T"]),
        array_positions=np.array(meta["array_positions"], dtype=np.float64),
        array_orientations=np.array(meta["array_orientations"], dtype=np.float64),
        antenna_spacing=float(meta.get("antenna_spacing", 0.5)),
        carrier_wavelength=float(meta["carrier_wavelength"]),
        sample_rate=float(meta["sample_rate"]),
    )
    L = int(meta["L"])
    if L < 1:
        raise DatasetError("L >= 1 required")
    n = L * math.prod(geom.cir_shape)
    cir = _read(path / "csi.bin", CSI_DTYPE, n).reshape((L,) + geom.cir_shape)
    t = _read(path / "time.bin", F64, L)
    pos = None
    if meta.get("has_positions", False):
        pos_file = path / "pos.bin"
        if not pos_file.exists():
            raise DatasetError("missing file pos.bin")
        # a 3rd coordinate is tolerated and dropped by Dataset
        size = pos_file.stat().st_size
        dim = 3 if size == L * 3 * F64.itemsize else 2
        pos = _read(pos_file, F64, L * dim).reshape(L, dim)
    return Dataset(geometry=geom, cir=cir, timestamps=t, positions=pos, gap_threshold=gap_threshold)
