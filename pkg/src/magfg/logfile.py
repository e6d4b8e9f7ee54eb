"""CSV sensor logs.

One row per time step with the exact header::

    t,mx,my,mz,mscalar,wx,wy,wz,roll,pitch,yaw

Units are s, nT and rad. ``wx, wy, wz`` are incremental body-frame rotation
angles from the previous row (the first row's are ignored). Floats are
written with ``repr`` so a write/read cycle is lossless.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MonotonicityError, ParseError, SchemaError
from .geometry import wrap_angle
from .measurements import MeasurementSet, NoiseSpec

COLUMNS = ("t", "mx", "my", "mz", "mscalar", "wx", "wy", "wz", "roll", "pitch", "yaw")
DT_JITTER = 0.01


@dataclass
class SensorLog:
    t: np.ndarray
    mag_vec: np.ndarray
    mag_scalar: np.ndarray
    gyro: np.ndarray
    rpy: np.ndarray

    def __len__(self):
        return self.t.size

    @property
    def dt(self):
        return float(np.median(np.diff(self.t))) if self.t.size > 1 else 0.0

    def to_measurements(self, noise: NoiseSpec | None = None) -> MeasurementSet:
        """Measurement set with covariances implied by ``noise`` (default levels if omitted)."""
        noise = noise if noise is not None else NoiseSpec()
        return MeasurementSet(self.t.copy(), self.mag_vec.copy(), self.mag_scalar.copy(),
                              self.gyro.copy(), self.rpy.copy(), **noise.covariances(self.dt))

    @classmethod
    def from_measurements(cls, meas: MeasurementSet):
        return cls(meas.t.copy(), meas.mag_vec.copy(), meas.mag_scalar.copy(),
                   meas.gyro.copy(), meas.rpy.copy())

    def as_array(self):
        return np.column_stack([self.t, self.mag_vec, self.mag_scalar, self.gyro, self.rpy])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[:, 0], a[:, 1:4], a[:, 4], a[:, 5:8], a[:, 8:11])


def write_csv(path, data):
    """Write a :class:`SensorLog` or :class:`MeasurementSet` as a CSV log."""
    log = data if isinstance(data, SensorLog) else SensorLog.from_measurements(data)
    rows = log.as_array()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _check_timebase(t, lines):
    d = np.diff(t)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        line = lines[bad[0] + 1]
        raise MonotonicityError(line, f"time {t[bad[0] + 1]!r} does not increase")
    if d.size:
        med = float(np.median(d))
        off = np.flatnonzero(np.abs(d - med) > DT_JITTER * med)
        if off.size:
            line = lines[off[0] + 1]
            raise MonotonicityError(
                line, f"sample interval {d[off[0]]!r} departs from {med!r} by more than 1%"
            )


def _decimate(log: SensorLog, factor):
    """Block-average ``factor`` samples (boxcar anti-alias, then keep one).

    Attitude angles are unwrapped before averaging; gyro increments are
    re-accumulated between the averaged epochs.
    """
    m = len(log) // factor
    if m < 1:
        raise ValueError("log shorter than the decimation factor")

    def block(x):
        x = x[: m * factor]
        return x.reshape(m, factor, *x.shape[1:]).mean(axis=1)

    rpy = np.unwrap(log.rpy, axis=0)
    cum = np.cumsum(np.vstack([np.zeros((1, 3)), log.gyro[1:]]), axis=0)
    cum_avg = block(cum)
    gyro = np.zeros((m, 3))
    gyro[1:] = np.diff(cum_avg, axis=0)
    rpy_avg = block(rpy)
    rpy_avg = wrap_angle(rpy_avg)
    return SensorLog(block(log.t), block(log.mag_vec), block(log.mag_scalar), gyro, rpy_avg)


def ingest_csv(path, gyro_rates=False, decimate=1) -> SensorLog:
    """Read and validate a CSV sensor log.

    Parameters
    ----------
    path : str or Path
    gyro_rates : bool
        The ``w*`` columns hold angular rates (rad/s); they are converted to
        per-step increments with the trapezoid rule.
    decimate : int
        Block-averaging factor applied after validation (1 = none).

    Raises
    ------
    FileNotFoundError
    SchemaError
        Header missing, extra or reordered columns.
    ParseError
        Unparseable or non-finite cell, or wrong field count, with its line.
    MonotonicityError
        Time not strictly increasing or sample interval jitter above 1%.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path.name}: empty file, expected header") from None
        header = [h.strip() for h in header]
        if tuple(header) != COLUMNS:
            missing = [c for c in COLUMNS if c not in header]
            extra = [c for c in header if c not in COLUMNS]
            raise SchemaError(
                f"{path.name}: header must be {','.join(COLUMNS)}"
                f" (missing {missing}, unexpected {extra})"
            )
        values, lines = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                raise ParseError(line, None, f"expected {len(COLUMNS)} fields, got {len(row)}")
            rec = []
            for col, cell in zip(COLUMNS, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(line, col, f"not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(line, col, f"non-finite value {cell!r}")
                rec.append(v)
            values.append(rec)
            lines.append(line)
    if not values:
        raise SchemaError(f"{path.name}: no data rows")
    log = SensorLog.from_array(np.array(values))
    _check_timebase(log.t, lines)
    if gyro_rates and len(log) > 1:
        rates = log.gyro.copy()
        log.gyro[1:] = 0.5 * (rates[1:] + rates[:-1]) * np.diff(log.t)[:, None]
    log.gyro[0] = 0.0
    if decimate > 1:
        log = _decimate(log, int(decimate))
    elif decimate < 1:
        raise ValueError("decimation factor must be >= 1")
    return log
