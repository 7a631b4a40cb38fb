"""GPS traces -> stay points -> POI context sequences -> sum vectors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

DEFAULT_DURATION_S = 20 * 60.0
DEFAULT_RADIUS_M = 200.0
DEFAULT_CONTEXT_RADIUS_M = 300.0
MIN_SEQUENCE_LENGTH = 2


class TrajectoryError(ValueError):
    """Invalid raw trajectory input; ``index`` is the offending point."""

    def __init__(self, message: str, index: int | None = None, source: str | None = None):
        self.index = index
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if index is not None:
            where += f"point {index}: "
        elif where:
            where += " "
        super().__init__(where + message)


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters (broadcasts over numpy arrays)."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=np.float64))
                              for a in (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class RawTrajectory:
    lat: np.ndarray
    lon: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lat, dtype=np.float64).ravel()
        lon = np.asarray(self.lon, dtype=np.float64).ravel()
        t = np.asarray(self.t, dtype=np.float64).ravel()
        if not (len(lat) == len(lon) == len(t)):
            raise TrajectoryError(f"column lengths differ: {len(lat)}, {len(lon)}, {len(t)}")
        bad = np.flatnonzero(~np.isfinite(lat) | (lat < -90) | (lat > 90))
        if bad.size:
            raise TrajectoryError(f"latitude {lat[bad[0]]} outside [-90, 90]", int(bad[0]))
        bad = np.flatnonzero(~np.isfinite(lon) | (lon < -180) | (lon > 180))
        if bad.size:
            raise TrajectoryError(f"longitude {lon[bad[0]]} outside [-180, 180]", int(bad[0]))
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise TrajectoryError("timestamps not strictly increasing", int(bad[0]) + 1)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_points(cls, points: Iterable[tuple[float, float, float]]) -> "RawTrajectory":
        arr = np.asarray(list(points), dtype=np.float64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class StayPoint:
    lat: float
    lon: float
    arrival: float
    departure: float
    first: int  # index range [first, last] in the source trajectory
    last: int


@dataclass(frozen=True)
class PoiIndex:
    lat: np.ndarray
    lon: np.ndarray
    type_id: np.ndarray
    n_types: int

    def __post_init__(self):
        tid = np.asarray(self.type_id, dtype=np.int64).ravel()
        if tid.size and (tid.min() < 0 or tid.max() >= self.n_types):
            raise ValueError(f"POI type ids must lie in [0, {self.n_types})")
        object.__setattr__(self, "type_id", tid)
        object.__setattr__(self, "lat", np.asarray(self.lat, dtype=np.float64).ravel())
        object.__setattr__(self, "lon", np.asarray(self.lon, dtype=np.float64).ravel())


def detect_stay_points(traj: RawTrajectory,
                       duration_threshold: float = DEFAULT_DURATION_S,
                       radius_threshold: float = DEFAULT_RADIUS_M) -> list[StayPoint]:
    """Forward-scan stay-point detection.

    From anchor ``i`` the window grows while points stay within
    ``radius_threshold`` meters of the anchor, then is trimmed from the end
    until every member also lies within that radius of the window's
    centroid.  A window whose time span
    reaches ``duration_threshold`` seconds becomes a stay point located at the
    mean of its members and scanning resumes after it; otherwise the anchor
    advances by one.
    """
    if duration_threshold <= 0 or radius_threshold <= 0:
        raise ValueError("stay-point thresholds must be positive")
    n = len(traj)
    out: list[StayPoint] = []
    i = 0
    while i < n:
        d = haversine_m(traj.lat[i], traj.lon[i], traj.lat[i:], traj.lon[i:])
        outside = np.flatnonzero(d > radius_threshold)
        j = i + (int(outside[0]) if outside.size else n - i)  # exclusive end
        # the centroid can drift from the anchor; trim until it covers all members
        while j - i > 1:
            c_lat, c_lon = traj.lat[i:j].mean(), traj.lon[i:j].mean()
            if haversine_m(c_lat, c_lon, traj.lat[i:j], traj.lon[i:j]).max() <= radius_threshold:
                break
            j -= 1
        if traj.t[j - 1] - traj.t[i] >= duration_threshold:
            out.append(StayPoint(
                lat=float(traj.lat[i:j].mean()), lon=float(traj.lon[i:j].mean()),
                arrival=float(traj.t[i]), departure=float(traj.t[j - 1]),
                first=i, last=j - 1,
            ))
            i = j
        else:
            i += 1
    return out


def build_context_vector(sp: StayPoint, poi: PoiIndex,
                         context_radius: float = DEFAULT_CONTEXT_RADIUS_M) -> np.ndarray:
    """Per-type POI counts within ``context_radius`` meters (inclusive)."""
    if context_radius <= 0:
        raise ValueError("context_radius must be positive")
    if poi.type_id.size == 0:
        return np.zeros(poi.n_types, dtype=np.int64)
    d = haversine_m(sp.lat, sp.lon, poi.lat, poi.lon)
    return np.bincount(poi.type_id[d <= context_radius], minlength=poi.n_types).astype(np.int64)


def sum_representation(seq) -> np.ndarray:
    """Elementwise sum of a context sequence (rows are context vectors).

    Integer counts are summed exactly; real-valued rows go through
    ``math.fsum`` per column so the result never depends on row order.
    """
    arr = np.asarray(seq)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"context sequence must be a non-empty (t, D) array, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.sum(axis=0, dtype=np.int64).astype(np.float64)
    return np.array([math.fsum(col) for col in arr.astype(np.float64).T])


def sum_vectors(sequences: Sequence) -> np.ndarray:
    """Stack sum representations into an (N, D) matrix."""
    return np.vstack([sum_representation(s) for s in sequences])


def context_sequence(traj: RawTrajectory, poi: PoiIndex,
                     duration_threshold: float = DEFAULT_DURATION_S,
                     radius_threshold: float = DEFAULT_RADIUS_M,
                     context_radius: float = DEFAULT_CONTEXT_RADIUS_M) -> np.ndarray:
    sps = detect_stay_points(traj, duration_threshold, radius_threshold)
    if not sps:
        return np.zeros((0, poi.n_types), dtype=np.int64)
    return np.vstack([build_context_vector(sp, poi, context_radius) for sp in sps])


def build_dataset(trajectories: Mapping[str, RawTrajectory], poi: PoiIndex,
                  duration_threshold: float = DEFAULT_DURATION_S,
                  radius_threshold: float = DEFAULT_RADIUS_M,
                  context_radius: float = DEFAULT_CONTEXT_RADIUS_M,
                  min_length: int = MIN_SEQUENCE_LENGTH) -> tuple[list[str], list[np.ndarray]]:
    """Context sequences for every trajectory with at least ``min_length`` stay points."""
    ids, seqs = [], []
    for tid in sorted(trajectories):
        seq = context_sequence(trajectories[tid], poi, duration_threshold,
                               radius_threshold, context_radius)
        if len(seq) >= min_length:
            ids.append(tid)
            seqs.append(seq)
    return ids, seqs


# -- readers ------------------------------------------------------------------

PLT_HEADER_LINES = 6


def read_plt(path: str | Path) -> RawTrajectory:
    """Read a GeoLife ``.plt`` log (6 header lines, then
    ``lat,lon,0,altitude,days,date,time``). Times are taken as UTC."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno <= PLT_HEADER_LINES or not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                lat, lon = float(parts[0]), float(parts[1])
                ts = datetime.strptime(f"{parts[5]} {parts[6]}", "%Y-%m-%d %H:%M:%S")
            except (IndexError, ValueError) as exc:
                raise TrajectoryError(f"line {lineno}: malformed PLT record ({exc})",
                                      source=str(path)) from None
            rows.append((lat, lon, ts.replace(tzinfo=timezone.utc).timestamp()))
    try:
        return RawTrajectory.from_points(rows)
    except TrajectoryError as exc:
        # report the file line, not the point index
        line = None if exc.index is None else exc.index + PLT_HEADER_LINES + 1
        raise TrajectoryError(f"line {line}: {exc}", source=str(path)) from None


def read_poi_csv(path: str | Path) -> tuple[PoiIndex, list[str]]:
    """Read ``lat,lon,type`` rows; type names are numbered in sorted order."""
    path = Path(path)
    lats, lons, names = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["lat", "lon", "type"]:
            raise ValueError(f"{path}:1: expected header 'lat,lon,type', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                lats.append(float(row[0]))
                lons.append(float(row[1]))
                names.append(row[2].strip())
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed POI record ({exc})") from None
    vocab = sorted(set(names))
    lookup = {name: k for k, name in enumerate(vocab)}
    index = PoiIndex(np.array(lats), np.array(lons),
                     np.array([lookup[n] for n in names], dtype=np.int64), len(vocab))
    return index, vocab


def write_type_dictionary(path: str | Path, vocab: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{k}\t{name}\n" for k, name in enumerate(vocab)))


def read_type_dictionary(path: str | Path) -> list[str]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        k, name = line.split("\t", 1)
        if int(k) != lineno - 1:
            raise ValueError(f"{path}:{lineno}: type ids must be dense and ordered")
        out.append(name)
    return out
