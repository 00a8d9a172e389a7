"""Route-free SB-TTE neighbor baseline and the MLP benchmark presets.

SB-TTE predicts the mean duration of training trips whose origin lies within
``radius_o`` km of the query origin and whose destination lies within
``radius_d`` km of the query destination. With fewer than ``min_neighbors``
matches both radii grow by ``growth``, up to ``max_expansions`` times; the
last expansion's matches are used even when short, and the global training
mean when there are none.

Trips are bucketed by (origin cell, destination cell) on a regular degree
grid, so a query only inspects cells that can hold a match.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .architectures import MLP_PRESETS, preset_spec
from .config import SBTTEParams, worker_threads
from .dataset import Dataset
from .errors import ContractError
from .featurization import EARTH_RADIUS_KM, DeliveryRecord, haversine
from .schema import ModelSpec

Cell = Tuple[int, int]


def _day_class(weekday: int) -> int:
    return 1 if weekday >= 5 else 0


class NeighborIndex:
    """Write-once grid of training trips keyed by origin cell, then destination cell."""

    def __init__(self, cell_size: float):
        if not cell_size > 0:
            raise ContractError(f"cell_size must be > 0, got {cell_size}")
        self.cell_size = cell_size
        self.buckets: Dict[Cell, Dict[Cell, List[int]]] = {}
        self.o_lat: List[float] = []
        self.o_lon: List[float] = []
        self.d_lat: List[float] = []
        self.d_lon: List[float] = []
        self.durations: List[float] = []
        self.hours: List[int] = []
        self.day_classes: List[int] = []
        self.global_mean = math.nan

    def __len__(self) -> int:
        return len(self.durations)

    def cell(self, lat: float, lon: float) -> Cell:
        return (math.floor(lat / self.cell_size), math.floor(lon / self.cell_size))

    def _add(self, rec: DeliveryRecord) -> None:
        i = len(self.durations)
        self.o_lat.append(rec.o_lat)
        self.o_lon.append(rec.o_lon)
        self.d_lat.append(rec.d_lat)
        self.d_lon.append(rec.d_lon)
        self.durations.append(rec.duration)
        self.hours.append(rec.ofd_time.hour)
        self.day_classes.append(_day_class(rec.ofd_time.weekday()))
        inner = self.buckets.setdefault(self.cell(rec.o_lat, rec.o_lon), {})
        inner.setdefault(self.cell(rec.d_lat, rec.d_lon), []).append(i)

    def cell_range(self, lat: float, lon: float, radius_km: float) -> Tuple[int, int, int, int]:
        """(i_lo, i_hi, j_lo, j_hi) of cells that can hold points within ``radius_km``."""
        delta = radius_km / EARTH_RADIUS_KM
        dlat = math.degrees(delta) * (1 + 1e-6) + 1e-9
        cap = math.radians(abs(lat)) + delta
        if cap >= math.pi / 2:
            dlon = 180.0
        else:
            dlon = math.degrees(math.asin(min(1.0, math.sin(delta) / math.cos(cap)))) * (1 + 1e-6) + 1e-9
        cs = self.cell_size
        return (math.floor((lat - dlat) / cs), math.floor((lat + dlat) / cs),
                math.floor((lon - dlon) / cs), math.floor((lon + dlon) / cs))

    def candidates(self, query: DeliveryRecord, radius_o: float, radius_d: float) -> List[int]:
        """Indices in cells that may match; a superset of the true neighbors."""
        oi_lo, oi_hi, oj_lo, oj_hi = self.cell_range(query.o_lat, query.o_lon, radius_o)
        di_lo, di_hi, dj_lo, dj_hi = self.cell_range(query.d_lat, query.d_lon, radius_d)
        found: List[int] = []
        for (oi, oj), inner in self.buckets.items():
            if not (oi_lo <= oi <= oi_hi and oj_lo <= oj <= oj_hi):
                continue
            for (di, dj), members in inner.items():
                if di_lo <= di <= di_hi and dj_lo <= dj <= dj_hi:
                    found.extend(members)
        return found

    def matches(self, i: int, query: DeliveryRecord, radius_o: float, radius_d: float,
                temporal_filter: bool) -> bool:
        """The exact neighbor rule shared by the indexed and the linear-scan paths."""
        if temporal_filter:
            if self.day_classes[i] != _day_class(query.ofd_time.weekday()):
                return False
            if abs(self.hours[i] - query.ofd_time.hour) > 1:
                return False
        return (haversine(self.o_lat[i], self.o_lon[i], query.o_lat, query.o_lon) <= radius_o
                and haversine(self.d_lat[i], self.d_lon[i], query.d_lat, query.d_lon) <= radius_d)

    def mean_duration(self, indices: Sequence[int]) -> float:
        return math.fsum(self.durations[i] for i in sorted(indices)) / len(indices)


def build_index(train_set: Dataset, cell_size: float = 0.01) -> NeighborIndex:
    """Bucket every training record; the index is not modified afterwards."""
    index = NeighborIndex(cell_size)
    if len(train_set) == 0:
        raise ContractError("cannot index an empty training set")
    for rec in train_set.records:
        index._add(rec)
    index.global_mean = math.fsum(index.durations) / len(index.durations)
    return index


def _radii(params: SBTTEParams):
    for e in range(params.max_expansions + 1):
        scale = params.growth ** e
        yield params.radius_o * scale, params.radius_d * scale


def sbtte_predict(index: NeighborIndex, query: DeliveryRecord, params: SBTTEParams) -> float:
    """Neighbor-mean estimate in hours using the grid index."""
    if len(index) == 0:
        raise ContractError("SB-TTE index is empty")
    neighbors: List[int] = []
    for r_o, r_d in _radii(params):
        neighbors = [i for i in index.candidates(query, r_o, r_d)
                     if index.matches(i, query, r_o, r_d, params.temporal_filter)]
        if len(neighbors) >= params.min_neighbors:
            break
    return index.mean_duration(neighbors) if neighbors else index.global_mean


def sbtte_predict_linear(index: NeighborIndex, query: DeliveryRecord, params: SBTTEParams) -> float:
    """Same rule as ``sbtte_predict`` by scanning every training trip."""
    if len(index) == 0:
        raise ContractError("SB-TTE index is empty")
    neighbors: List[int] = []
    for r_o, r_d in _radii(params):
        neighbors = [i for i in range(len(index))
                     if index.matches(i, query, r_o, r_d, params.temporal_filter)]
        if len(neighbors) >= params.min_neighbors:
            break
    return index.mean_duration(neighbors) if neighbors else index.global_mean


def sbtte_predict_many(index: NeighborIndex, queries: Sequence[DeliveryRecord],
                       params: SBTTEParams) -> np.ndarray:
    """Predictions for many queries; runs on ODTTE_THREADS threads, order preserved."""
    threads = worker_threads()
    if threads > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(lambda q: sbtte_predict(index, q, params), queries))
    else:
        out = [sbtte_predict(index, q, params) for q in queries]
    return np.array(out, dtype=np.float64)


def mlp_spec(name: str) -> ModelSpec:
    """MLP-1 (2 x 50) or MLP-2 (5 x 50) benchmark network."""
    if name.lower() not in MLP_PRESETS:
        raise ContractError(f"unknown MLP benchmark {name!r}; choose from {sorted(MLP_PRESETS)}")
    return preset_spec(name)
