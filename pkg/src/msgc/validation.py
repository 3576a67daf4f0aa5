"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, IngestionError


def check_finite(name: str, array) -> np.ndarray:
    arr = np.asarray(array, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise IngestionError(f"{name} contains non-finite values")
    return arr


def check_windowed(dataset, config) -> None:
    """Window geometry and feature counts must agree with the model config."""
    train = dataset.train
    if len(train) == 0:
        raise DimensionError("training split holds no windows")
    _, p, n, f = train.x.shape
    if p != config.n_input_steps or train.y.shape[1] != config.n_output_steps:
        raise DimensionError(f"windows are {p}->{train.y.shape[1]} steps, config wants "
                             f"{config.n_input_steps}->{config.n_output_steps}")
    if f != config.n_input_features:
        raise DimensionError(f"data has {f} features, config wants {config.n_input_features}")
    if train.y.shape[-1] != config.n_output_features:
        raise DimensionError(f"targets carry {train.y.shape[-1]} features, config wants "
                             f"{config.n_output_features}")
    if abs(dataset.table.interval_minutes - config.interval_minutes) > 1e-9:
        raise DimensionError(f"data spacing {dataset.table.interval_minutes} min != "
                             f"configured {config.interval_minutes} min")
    check_finite("inputs", dataset.table.values)


def check_graph(graph, table) -> None:
    if graph.n_nodes != table.n_nodes:
        raise DimensionError(f"graph has {graph.n_nodes} nodes, data has {table.n_nodes}")
    if list(graph.node_ids) != list(table.node_ids):
        raise IngestionError("graph and readings list nodes in different orders")
    a = np.asarray(graph.adjacency)
    if a.shape != (graph.n_nodes, graph.n_nodes) or np.any(a < 0):
        raise DimensionError("adjacency must be a nonnegative square matrix")
