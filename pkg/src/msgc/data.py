"""Sensor series ingestion, sliding windows with chronological splits, fault
and sparsity perturbations, and a synthetic diffusion dataset."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .embeddings import temporal_index
from .exceptions import DatasetTooSmallError, IngestionError
from .graph import TrafficGraph, build_adjacency, build_travel_time

MINUTES_PER_DAY = 1440


@dataclass
class SeriesTable:
    timestamps: np.ndarray  # datetime64[s], uniformly spaced
    node_ids: list
    values: np.ndarray  # (Total, N, F_I)
    mask: np.ndarray  # (Total, N, F_I) bool, True where observed
    interval_minutes: float

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    @property
    def steps_per_day(self) -> int:
        t = MINUTES_PER_DAY / self.interval_minutes
        if abs(t - round(t)) > 1e-9:
            raise IngestionError(f"interval {self.interval_minutes} min does not divide a day")
        return int(round(t))

    def slots(self) -> np.ndarray:
        """Weekly slot index (day_of_week * T + slot_of_day) of every step."""
        ts = self.timestamps.astype("datetime64[s]").astype(np.int64)
        days = ts // 86400
        dow = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday is 0
        minute = (ts % 86400) // 60
        slot = (minute // self.interval_minutes).astype(np.int64)
        return temporal_index(dow, slot, self.steps_per_day)

    def take(self, start: int, stop: int) -> "SeriesTable":
        return replace(self, timestamps=self.timestamps[start:stop],
                       values=self.values[start:stop], mask=self.mask[start:stop])


def ingest(readings_file, node_list: list[str] | None = None,
           interval_minutes: float | None = None) -> SeriesTable:
    """Read ``timestamp,node_id,feature_0[,...]`` rows into a dense table.

    Absent rows and empty cells are marked unobserved.  The spacing is the
    most common gap between consecutive timestamps unless given; every gap
    must be a whole multiple of it.
    """
    df = pd.read_csv(readings_file, dtype={"node_id": str}, float_precision="round_trip")
    if list(df.columns[:2]) != ["timestamp", "node_id"] or df.shape[1] < 3:
        raise IngestionError(f"{readings_file}: expected columns timestamp,node_id,feature_0,...")
    features = list(df.columns[2:])
    try:
        ts = pd.to_datetime(df["timestamp"]).values.astype("datetime64[s]")
    except (ValueError, TypeError) as exc:
        raise IngestionError(f"{readings_file}: unparseable timestamp ({exc})") from None
    if node_list is None:
        node_list = list(dict.fromkeys(df["node_id"]))
    index = {n: k for k, n in enumerate(node_list)}
    unknown = sorted(set(df["node_id"]) - set(index))
    if unknown:
        raise IngestionError(f"{readings_file}: unknown node ids {unknown[:5]}")
    uniq = np.unique(ts)
    if uniq.size < 2:
        raise IngestionError(f"{readings_file}: need at least two timestamps")
    diffs = np.diff(uniq).astype(np.int64)
    if interval_minutes is not None:
        step = int(round(interval_minutes * 60))
    else:
        gaps, counts = np.unique(diffs, return_counts=True)
        step = int(gaps[np.argmax(counts)])
    bad = np.flatnonzero(diffs % step != 0)
    if bad.size:
        offenders = [f"{uniq[k]} -> {uniq[k + 1]}" for k in bad[:5]]
        raise IngestionError(f"{readings_file}: irregular spacing at {offenders}")
    if step % 60:
        raise IngestionError(f"{readings_file}: spacing of {step}s is not whole minutes")
    total = int((uniq[-1] - uniq[0]).astype(np.int64) // step) + 1
    grid = uniq[0] + np.arange(total) * np.timedelta64(step, "s")
    rows = ((ts - uniq[0]).astype(np.int64) // step).astype(np.int64)
    cols = df["node_id"].map(index).to_numpy()
    vals = df[features].to_numpy(dtype=float)
    values = np.zeros((total, len(node_list), len(features)))
    mask = np.zeros(values.shape, dtype=bool)
    observed = ~np.isnan(vals)
    values[rows, cols] = np.where(observed, vals, 0.0)
    mask[rows, cols] = observed
    return SeriesTable(grid, list(node_list), values, mask, step / 60.0)


def export(table: SeriesTable, path) -> None:
    """Write the readings CSV; fully unobserved rows are omitted."""
    f = table.n_features
    stamps = pd.to_datetime(table.timestamps).strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "node_id"] + [f"feature_{k}" for k in range(f)])
        for t in range(table.n_steps):
            for j, node in enumerate(table.node_ids):
                m = table.mask[t, j]
                if not m.any():
                    continue
                cells = [repr(float(v)) if ok else "" for v, ok in zip(table.values[t, j], m)]
                w.writerow([stamps[t], node] + cells)


@dataclass
class Windows:
    """One split of sliding windows (raw units)."""

    x: np.ndarray  # (n, P, N, F_I)
    x_mask: np.ndarray
    y: np.ndarray  # (n, Q, N, F_O)
    y_mask: np.ndarray
    x_slots: np.ndarray  # (n, P)
    y_slots: np.ndarray  # (n, Q)
    start: np.ndarray  # (n,) table row of the first input step
    timestamps: np.ndarray  # (n, P + Q)
    node_ids: list
    interval_minutes: float
    steps_per_day: int

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Windows":
        pick = lambda a: a[idx]  # noqa: E731
        return replace(self, x=pick(self.x), x_mask=pick(self.x_mask), y=pick(self.y),
                       y_mask=pick(self.y_mask), x_slots=pick(self.x_slots),
                       y_slots=pick(self.y_slots), start=pick(self.start),
                       timestamps=pick(self.timestamps))

    def series(self):
        """Flatten overlapping windows back into ``(values, mask, slots)`` over
        the covered steps (input features only)."""
        if len(self) == 0:
            raise DatasetTooSmallError("no windows to flatten")
        p = self.x.shape[1]
        first, last = int(self.start.min()), int(self.start.max()) + p
        n_steps = last - first
        values = np.zeros((n_steps,) + self.x.shape[2:])
        mask = np.zeros(values.shape, dtype=bool)
        slots = np.zeros(n_steps, dtype=np.int64)
        rows = self.start - first
        for k in range(p):
            values[rows + k] = self.x[:, k]
            mask[rows + k] = self.x_mask[:, k]
            slots[rows + k] = self.x_slots[:, k]
        return values, mask, slots


@dataclass
class WindowedDataset:
    train: Windows
    val: Windows
    test: Windows
    table: SeriesTable
    boundaries: tuple[int, int]

    @property
    def train_table(self) -> SeriesTable:
        return self.table.take(0, self.boundaries[0])


def windowize(table: SeriesTable, n_input_steps: int, n_output_steps: int,
              n_output_features: int = 1, stride: int = 1,
              split: tuple[float, float] = (0.7, 0.8)) -> WindowedDataset:
    """Stride-``stride`` sliding windows split chronologically.

    Rows before ``split[0] * Total`` form the training range, rows before
    ``split[1] * Total`` the validation range, the rest testing.  A window is
    kept only if all of its steps lie in a single range.
    """
    p, q = n_input_steps, n_output_steps
    total = table.n_steps
    if total < p + q:
        raise DatasetTooSmallError(f"{total} steps cannot hold a window of {p}+{q}")
    b1, b2 = int(split[0] * total), int(split[1] * total)
    slots = table.slots()

    def build(lo, hi):
        starts = np.arange(lo, hi - p - q + 1, stride, dtype=np.int64)
        span = starts[:, None] + np.arange(p + q)[None, :]
        vals, msk = table.values[span], table.mask[span]
        return Windows(
            x=vals[:, :p], x_mask=msk[:, :p],
            y=vals[:, p:, :, :n_output_features], y_mask=msk[:, p:, :, :n_output_features],
            x_slots=slots[span[:, :p]], y_slots=slots[span[:, p:]], start=starts,
            timestamps=table.timestamps[span], node_ids=table.node_ids,
            interval_minutes=table.interval_minutes, steps_per_day=table.steps_per_day)

    return WindowedDataset(build(0, b1), build(b1, b2), build(b2, total), table, (b1, b2))


def count_windows(total: int, p: int, q: int, stride: int = 1) -> int:
    return max(0, (total - p - q) // stride + 1)


def inject_faults(table: SeriesTable, ratio: float, seed: int = 0,
                  rows: slice | None = None) -> SeriesTable:
    """Zero a uniformly chosen ``ratio`` of observed cells (optionally only
    within ``rows``).  The observation mask is left untouched."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"fault ratio must lie in [0, 1], got {ratio}")
    values = table.values.copy()
    region = np.zeros(table.mask.shape, dtype=bool)
    region[rows if rows is not None else slice(None)] = True
    cells = np.flatnonzero(table.mask & region)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(cells)[:int(round(ratio * cells.size))]
    values.reshape(-1)[chosen] = 0.0
    return replace(table, values=values)


def subsample(table: SeriesTable, proportion: float, seed: int = 0,
              min_steps: int | None = None, contiguous: bool = True) -> SeriesTable:
    """Keep ``proportion`` of the days.

    Contiguous mode keeps the chronological prefix.  Otherwise a random set
    of days is kept and the others are marked unobserved, so spacing stays
    uniform.
    """
    if not 0.0 < proportion <= 1.0:
        raise ValueError(f"proportion must lie in (0, 1], got {proportion}")
    t = table.steps_per_day
    n_days = int(np.ceil(table.n_steps / t))
    keep_days = max(1, int(round(proportion * n_days)))
    if contiguous:
        out = table.take(0, min(table.n_steps, keep_days * t))
    else:
        rng = np.random.default_rng(seed)
        days = np.sort(rng.choice(n_days, size=keep_days, replace=False))
        keep = np.zeros(table.n_steps, dtype=bool)
        for d in days:
            keep[d * t:(d + 1) * t] = True
        out = replace(table, mask=table.mask & keep[:, None, None])
    if min_steps is not None and out.n_steps < min_steps:
        raise DatasetTooSmallError(f"subsample keeps {out.n_steps} steps, need {min_steps}")
    return out


def synthesize(n_nodes: int = 8, days: int = 28, interval_minutes: float = 5.0, seed: int = 0,
               diffusion: float = 0.8, persistence: float = 0.9, shock_scale: float = 4.0,
               seasonal_amplitude: float = 10.0, noise: float = 0.5, mean_speed_kmh: float = 60.0,
               area_km: float | None = None, start: str = "2012-03-05T00:00:00",
               threshold: float = 0.1) -> tuple[SeriesTable, TrafficGraph]:
    """Speed series on a random geometric graph with travel-time-lagged diffusion.

    Each node gets a base speed, a daily sinusoid (weaker at weekends) and a
    latent AR(1) fluctuation.  Node ``j`` additionally echoes the fluctuation
    of each graph neighbour ``i`` delayed by ``round(M_ij / interval)``
    steps, scaled by ``diffusion`` and the adjacency weight share.  Gaussian
    observation noise is added last.
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    if area_km is None:
        # neighbours sit roughly 1-3 steps apart in travel time
        area_km = 2.5 * interval_minutes * mean_speed_kmh / 60.0 * np.sqrt(n_nodes / 4)
    pos = rng.uniform(0.0, area_km * 1000.0, size=(n_nodes, 2))
    dist = np.sqrt(((pos[:, None] - pos[None]) ** 2).sum(-1))
    adj = build_adjacency(dist, threshold)
    travel = build_travel_time(dist, mean_speed_kmh)
    ids = [f"s{k:03d}" for k in range(n_nodes)]
    graph = TrafficGraph(ids, adj, dist, travel, threshold)

    t_per_day = int(round(MINUTES_PER_DAY / interval_minutes))
    total = days * t_per_day
    lags = np.maximum(1, np.rint(travel / interval_minutes).astype(int))
    max_lag = int(lags[adj > 0].max()) if (adj > 0).any() else 1
    burn = max_lag + 200
    latent = np.zeros((total + burn, n_nodes))
    shocks = rng.normal(0.0, shock_scale * np.sqrt(1 - persistence ** 2), size=latent.shape)
    for t in range(1, total + burn):
        latent[t] = persistence * latent[t - 1] + shocks[t]
    echo = np.zeros((total, n_nodes))
    weight = adj / np.maximum(adj.sum(axis=0, keepdims=True), 1e-12)
    for i in range(n_nodes):
        for j in range(n_nodes):
            if adj[i, j] > 0:
                lag = lags[i, j]
                echo[:, j] += diffusion * weight[i, j] * latent[burn - lag:burn - lag + total, i]

    step = np.arange(total)
    phase_day = 2 * np.pi * (step % t_per_day) / t_per_day
    weekday = ((step // t_per_day) % 7) < 5
    amp = seasonal_amplitude * np.where(weekday, 1.0, 0.5)
    base = rng.uniform(55.0, 65.0, size=n_nodes)
    phase = rng.uniform(0, 2 * np.pi, size=n_nodes)
    seasonal = base[None] + amp[:, None] * np.sin(phase_day[:, None] + phase[None])
    speed = seasonal + latent[burn:] + echo + rng.normal(0.0, noise, size=(total, n_nodes))

    stamps = np.datetime64(start, "s") + np.arange(total) * np.timedelta64(int(interval_minutes * 60), "s")
    table = SeriesTable(stamps, ids, speed[:, :, None], np.ones((total, n_nodes, 1), dtype=bool),
                        float(interval_minutes))
    graph.meta.update(positions=pos, lags=lags, base_speed=base, phases=phase)
    return table, graph
