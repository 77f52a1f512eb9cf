"""Spatial sampling: MBS PPP, Poisson line process of roads, 1-D PPPs on roads.

A realization is always conditioned on a typical vehicle at the origin, which
forces one road (the typical road) through the origin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .channel import NetworkConfig

__all__ = [
    "Line",
    "RngStream",
    "NetworkRealization",
    "sample_mbs",
    "sample_roads",
    "sample_points_on_line",
    "build_realization",
    "to_plane",
    "chord_half_length",
    "write_realization",
]


class Line(NamedTuple):
    """Road given by its signed normal distance ``rho`` and normal angle ``theta``."""

    rho: float
    theta: float

    def direction(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])


_STREAM_NAMES = ("mbs", "roads", "sbs", "vehicles", "dl", "ul_sbs", "ul_mbs", "allveh", "shadow", "thin")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random source for one drop.

    Independent child generators are available by name so that, for example,
    DL fading draws do not shift when the vehicle density changes.
    """

    seed: int
    stream_id: int = 0

    def generator(self, name: str | None = None) -> np.random.Generator:
        key: tuple[int, ...] = (self.stream_id,)
        if name is not None:
            key = key + (_STREAM_NAMES.index(name) + 1,)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def chord_half_length(rho, radius: float):
    return np.sqrt(np.maximum(radius**2 - np.asarray(rho, dtype=float) ** 2, 0.0))


def sample_mbs(density: float, radius: float, rng) -> np.ndarray:
    """Homogeneous PPP on the disk of radius ``radius``; returns an (n, 2) array."""
    if density < 0 or radius <= 0:
        raise ValueError("need density >= 0 and radius > 0")
    rng = _as_rng(rng)
    n = rng.poisson(density * math.pi * radius**2)
    r = radius * np.sqrt(rng.random(n))
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def sample_roads(density: float, radius: float, rng, include_typical: bool = True,
                 typical_theta: float | None = None) -> list[Line]:
    """Poisson line process hitting the disk; mean count 2*pi*density*radius.

    With ``include_typical`` a line through the origin is appended last.
    """
    if density < 0 or radius <= 0:
        raise ValueError("need density >= 0 and radius > 0")
    rng = _as_rng(rng)
    n = rng.poisson(2.0 * math.pi * density * radius)
    rho = rng.uniform(-radius, radius, n)
    theta = rng.uniform(0.0, math.pi, n)
    roads = [Line(float(r), float(t)) for r, t in zip(rho, theta)]
    if include_typical:
        t0 = rng.uniform(0.0, math.pi) if typical_theta is None else typical_theta
        roads.append(Line(0.0, float(t0)))
    return roads


def sample_points_on_line(line: Line, density: float, radius: float, rng) -> np.ndarray:
    """1-D PPP on the chord of ``line`` inside the disk, as offsets from the foot point."""
    if density < 0:
        raise ValueError("density must be >= 0")
    rng = _as_rng(rng)
    h = float(chord_half_length(line.rho, radius))
    n = rng.poisson(density * 2.0 * h)
    return rng.uniform(-h, h, n)


def to_plane(line: Line, offset) -> np.ndarray:
    """Cartesian position of ``offset`` km along ``line``."""
    offset = np.asarray(offset, dtype=float)
    c, s = math.cos(line.theta), math.sin(line.theta)
    return np.stack((line.rho * c - offset * s, line.rho * s + offset * c), axis=-1)


@dataclass
class NetworkRealization:
    """One sampled drop.

    The typical road is ``roads[typical_road_index]`` and its vehicle offsets
    start with the typical vehicle at 0.
    """

    mbs_points: np.ndarray
    roads: list[Line]
    sbs_offsets: list[np.ndarray]
    vehicle_offsets: list[np.ndarray]
    typical_road_index: int
    region_radius: float

    @property
    def typical_road(self) -> Line:
        return self.roads[self.typical_road_index]

    def sbs_points(self, include_typical_road: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """All SBS positions and their road indices."""
        return self._flatten(self.sbs_offsets, include_typical_road)

    def vehicle_points(self, include_typical_road: bool = True) -> tuple[np.ndarray, np.ndarray]:
        return self._flatten(self.vehicle_offsets, include_typical_road)

    def _flatten(self, offsets: Sequence[np.ndarray], include_typical_road: bool):
        pts, idx = [], []
        for i, (line, off) in enumerate(zip(self.roads, offsets)):
            if not include_typical_road and i == self.typical_road_index:
                continue
            pts.append(to_plane(line, off).reshape(-1, 2))
            idx.append(np.full(len(off), i))
        if not pts:
            return np.empty((0, 2)), np.empty(0, dtype=int)
        return np.concatenate(pts), np.concatenate(idx)

    def records(self) -> Iterable[tuple[str, int, float, float]]:
        """(kind, road_index, x_km, y_km) per node; MBSs carry road index -1."""
        for x, y in self.mbs_points:
            yield ("MBS", -1, float(x), float(y))
        for kind, sets in (("SBS", self.sbs_offsets), ("VEHICLE", self.vehicle_offsets)):
            for i, (line, off) in enumerate(zip(self.roads, sets)):
                for x, y in to_plane(line, off).reshape(-1, 2):
                    yield (kind, i, float(x), float(y))


def build_realization(config: NetworkConfig, rng: RngStream, typical_only: bool = False,
                      typical_theta: float | None = None) -> NetworkRealization:
    """Sample a full drop around a typical vehicle at the origin.

    ``typical_only`` skips the other roads, which is all association needs.
    The typical road is sampled first, so it is identical in both modes.
    """
    R = config.region_radius_km
    mbs = sample_mbs(config.lambda_m, R, rng.generator("mbs"))
    road_rng = rng.generator("roads")
    if typical_theta is None:
        typical_theta = float(road_rng.uniform(0.0, math.pi))
    if typical_only:
        roads = [Line(0.0, typical_theta)]
    else:
        roads = sample_roads(config.lambda_l, R, road_rng, include_typical=True, typical_theta=typical_theta)
    t = len(roads) - 1
    order = [t] + list(range(t))
    sbs_rng, veh_rng = rng.generator("sbs"), rng.generator("vehicles")
    sbs: list = [None] * len(roads)
    veh: list = [None] * len(roads)
    for i in order:
        sbs[i] = sample_points_on_line(roads[i], config.lambda_s, R, sbs_rng)
    for i in order:
        veh[i] = sample_points_on_line(roads[i], config.lambda_v, R, veh_rng)
    veh[t] = np.concatenate(([0.0], veh[t]))
    return NetworkRealization(mbs, roads, sbs, veh, t, R)


def write_realization(realization: NetworkRealization, path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(("kind", "road_index", "x_km", "y_km"))
        for kind, i, x, y in realization.records():
            w.writerow((kind, i, repr(x), repr(y)))
