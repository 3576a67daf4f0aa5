"""Traffic graph construction: Gaussian-kernel adjacency, normalized
propagation matrix, and pairwise travel times."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DegenerateGraphError, IngestionError


@dataclass
class TrafficGraph:
    node_ids: list[str]
    adjacency: np.ndarray
    distances: np.ndarray
    travel_time: np.ndarray
    threshold: float = 0.1
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index(self) -> dict[str, int]:
        return {n: k for k, n in enumerate(self.node_ids)}


def build_adjacency(distances: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)``.

    ``sigma`` is the standard deviation of all finite off-diagonal distances.
    Weights below ``threshold`` are zeroed and the diagonal is always zero.
    """
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n or n < 2:
        raise DegenerateGraphError(f"distance matrix must be square with >= 2 nodes, got {d.shape}")
    if np.any(d < 0):
        raise DegenerateGraphError("distances must be nonnegative")
    off = ~np.eye(n, dtype=bool)
    finite = np.isfinite(d) & off
    if not finite.any():
        raise DegenerateGraphError("every pairwise distance is infinite")
    sigma = d[finite].std()
    with np.errstate(divide="ignore", invalid="ignore"):
        if sigma > 0:
            ratio = (d / sigma) ** 2
        else:
            ratio = np.where(d == 0, 0.0, np.inf)
    adj = np.exp(-ratio)
    adj[~np.isfinite(d)] = 0.0
    adj[adj < threshold] = 0.0
    np.fill_diagonal(adj, 0.0)
    return adj


def normalized_matrix(adjacency: np.ndarray) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; zero-degree nodes contribute a zero scaling."""
    a = np.asarray(adjacency, dtype=float)
    deg = a.sum(axis=1)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return np.eye(a.shape[0]) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def build_travel_time(distances: np.ndarray, mean_speed_kmh: float | None = None,
                      overrides: dict[tuple[int, int], float] | None = None) -> np.ndarray:
    """Travel time in minutes from meters at a constant mean speed.

    Pairs with infinite distance stay unreachable (``inf``).  Explicit
    ``overrides`` keyed by ``(from, to)`` index pairs take precedence.
    """
    d = np.asarray(distances, dtype=float)
    if mean_speed_kmh is None:
        if not overrides:
            raise ValueError("need a mean speed or explicit travel times")
        m = np.full(d.shape, np.inf)
    else:
        if mean_speed_kmh <= 0:
            raise ValueError(f"mean speed must be positive, got {mean_speed_kmh}")
        m = d / 1000.0 / mean_speed_kmh * 60.0
    for (i, j), minutes in (overrides or {}).items():
        if minutes < 0:
            raise IngestionError(f"negative travel time for pair {(i, j)}")
        m[i, j] = minutes
    np.fill_diagonal(m, 0.0)
    return m


# ------------------------------------------------------------------ file I/O

def read_node_list(path) -> list[str]:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def write_node_list(node_ids, path) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in node_ids))


def _read_pairs(path, value_column: str, index: dict[str, int] | None):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"from", "to", value_column} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for k, row in enumerate(reader, start=2):
            src, dst = row["from"].strip(), row["to"].strip()
            if index is not None:
                for node in (src, dst):
                    if node not in index:
                        raise IngestionError(f"{path}:{k}: unknown node {node!r}")
            try:
                rows.append((src, dst, float(row[value_column])))
            except ValueError:
                raise IngestionError(f"{path}:{k}: bad value {row[value_column]!r}") from None
    return rows


def read_distances(path, node_ids: list[str] | None = None, directed: bool = False):
    """Load ``from,to,distance_m`` into a dense matrix (``inf`` where unknown).

    Without ``node_ids`` the node order is first appearance in the file.
    Undirected files are mirrored; if both directions appear the shorter wins.
    """
    index = None if node_ids is None else {n: k for k, n in enumerate(node_ids)}
    rows = _read_pairs(path, "distance_m", index)
    if node_ids is None:
        node_ids = []
        for src, dst, _ in rows:
            for node in (src, dst):
                if node not in node_ids:
                    node_ids.append(node)
        index = {n: k for k, n in enumerate(node_ids)}
    n = len(node_ids)
    d = np.full((n, n), np.inf)
    for src, dst, value in rows:
        i, j = index[src], index[dst]
        d[i, j] = min(d[i, j], value)
        if not directed:
            d[j, i] = min(d[j, i], value)
    np.fill_diagonal(d, 0.0)
    return list(node_ids), d


def write_distances(node_ids, distances, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from", "to", "distance_m"])
        for i, src in enumerate(node_ids):
            for j, dst in enumerate(node_ids):
                if i != j and np.isfinite(distances[i, j]):
                    w.writerow([src, dst, repr(float(distances[i, j]))])


def read_travel_times(path, node_ids: list[str]) -> dict[tuple[int, int], float]:
    index = {n: k for k, n in enumerate(node_ids)}
    return {(index[s], index[t]): v for s, t, v in _read_pairs(path, "minutes", index)}


def write_travel_times(node_ids, travel_time, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from", "to", "minutes"])
        for i, src in enumerate(node_ids):
            for j, dst in enumerate(node_ids):
                if i != j and np.isfinite(travel_time[i, j]):
                    w.writerow([src, dst, repr(float(travel_time[i, j]))])


def load_graph(distance_file, node_list=None, travel_time_file=None,
               mean_speed_kmh: float | None = None, threshold: float = 0.1) -> TrafficGraph:
    node_ids = read_node_list(node_list) if node_list else None
    node_ids, d = read_distances(distance_file, node_ids)
    overrides = read_travel_times(travel_time_file, node_ids) if travel_time_file else None
    if mean_speed_kmh is None and overrides is None:
        raise IngestionError("travel times need either a travel-time file or a mean speed")
    m = build_travel_time(d, mean_speed_kmh, overrides)
    return TrafficGraph(node_ids, build_adjacency(d, threshold), d, m, threshold)
