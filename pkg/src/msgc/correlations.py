"""The three spatial correlation views and graph convolution over them.

* adjacent trend: static scores counting how often neighbouring nodes sit on
  the same side of their own historical means;
* semantic: per-step key/query attention over fused node features;
* reachability: cross-step scores from the overlap between a departure
  window shifted by travel time and the prediction window.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import DimensionError
from .graph import normalized_matrix


def adjacent_trend_scores(history: np.ndarray, adjacency: np.ndarray,
                          mask: np.ndarray | None = None) -> np.ndarray:
    """Co-movement scores for adjacent node pairs.

    ``history`` is ``(Total, N, F_I)`` raw values.  For each adjacent pair the
    score is the number of (slot, feature) cells where both nodes are at or
    above their own mean, plus those where both are below, divided by
    ``F_I * Total``.  Non-adjacent pairs score 0.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim == 2:
        h = h[:, :, None]
    total, n, f = h.shape
    m = np.ones(h.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    counts = np.maximum(m.sum(axis=0), 1)
    means = np.where(m, h, 0.0).sum(axis=0) / counts
    above = ((h >= means) & m).astype(float)
    below = ((h < means) & m).astype(float)
    agree = np.zeros((n, n))
    for k in range(f):
        agree += above[:, :, k].T @ above[:, :, k] + below[:, :, k].T @ below[:, :, k]
    scores = agree / (f * total)
    scores[np.asarray(adjacency) <= 0] = 0.0
    return scores


def reachability_score(p, q, delta: float, travel_time, n_input_steps: int,
                       same_node=False):
    """Fraction of the prediction window covered by the shifted departure window.

    Departures during input step ``p`` arrive during
    ``[(p-1)*delta + M, p*delta + M]``; output step ``q`` spans
    ``[(P+q-1)*delta, (P+q)*delta]`` on the same time axis.  The score is the
    overlap length over ``delta``.  A node always scores 1 with itself and an
    infinite travel time scores 0.  Works elementwise on arrays.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = np.asarray(travel_time, dtype=float)
    finite = np.isfinite(m)
    m_safe = np.where(finite, m, 0.0)
    arrive_lo = (p - 1.0) * delta + m_safe
    arrive_hi = p * delta + m_safe
    pred_lo = (n_input_steps + q - 1.0) * delta
    pred_hi = (n_input_steps + q) * delta
    overlap = np.minimum(arrive_hi, pred_hi) - np.maximum(arrive_lo, pred_lo)
    score = np.clip(overlap / delta, 0.0, 1.0)
    score = np.where(finite, score, 0.0)
    score = np.where(same_node, 1.0, score)
    return float(score) if score.ndim == 0 else score


def build_reachability_stack(travel_time: np.ndarray, delta: float, n_input_steps: int,
                             n_output_steps: int) -> np.ndarray:
    """All ``(Q, P, N, N)`` reachability matrices.

    Entry ``[q, p, j, i]`` weighs source node ``i`` at input step ``p`` for
    target node ``j`` at output step ``q``, using the travel time ``i -> j``.
    """
    m = np.asarray(travel_time, dtype=float)
    n = m.shape[0]
    eye = np.eye(n, dtype=bool)
    stack = np.empty((n_output_steps, n_input_steps, n, n))
    for qi in range(n_output_steps):
        for pi in range(n_input_steps):
            s = reachability_score(pi + 1, qi + 1, delta, m, n_input_steps)
            stack[qi, pi] = np.where(eye, 1.0, s.T)
    return stack


def propagation_matrix(s: np.ndarray, normalize: bool) -> np.ndarray:
    """Matrix actually multiplied into node features by a GCN layer."""
    if not normalize:
        return np.asarray(s, dtype=float)
    s = np.asarray(s, dtype=float)
    if s.ndim == 2:
        return normalized_matrix(s)
    flat = s.reshape(-1, *s.shape[-2:])
    return np.stack([normalized_matrix(x) for x in flat]).reshape(s.shape)


def normalized_matrix_tensor(s: Tensor) -> Tensor:
    """Differentiable ``I - D^-1/2 S D^-1/2`` for (batched) attention matrices
    whose row sums are strictly positive."""
    n = s.shape[-1]
    deg = ag.sum(s, axis=-1)
    inv_sqrt = _pow_neg_half(deg)
    left = ag.expand(inv_sqrt, -1, n)
    right = ag.swapaxes(left, -1, -2)
    eye = np.broadcast_to(np.eye(n), s.shape).copy()
    return ag.sub(Tensor(eye), ag.mul(ag.mul(left, s), right))


def _pow_neg_half(x: Tensor) -> Tensor:
    y = x.data ** -0.5
    return ag._result(y, (x,), lambda g: (g * -0.5 * y / x.data,), "rsqrt")


def gcn_layer(s, x, weight, activation=ag.relu) -> Tensor:
    """``activation(S X W)`` where ``S`` is already the propagation matrix."""
    s, x = ag.as_tensor(s), ag.as_tensor(x)
    if s.shape[-1] != x.shape[-2]:
        raise DimensionError(f"gcn: matrix {s.shape} does not match features {x.shape}")
    return activation(ag.matmul(s, ag.matmul(x, weight)))


def gcn(s, x, weights: Sequence[Tensor], activation=ag.relu) -> Tensor:
    """Stack of GCN layers sharing one propagation matrix."""
    h = x
    for w in weights:
        h = gcn_layer(s, h, w, activation)
    return h


def semantic_attention(xst: Tensor, w_k1, w_k2, w_q1, w_q2) -> Tensor:
    """Row-softmaxed key/query scores ``K_i . Q_j`` for each batch element."""
    keys = ag.matmul(ag.relu(ag.matmul(xst, w_k1)), w_k2)
    queries = ag.matmul(ag.relu(ag.matmul(xst, w_q1)), w_q2)
    scores = ag.matmul(keys, ag.swapaxes(queries, -1, -2))
    return ag.softmax(scores, axis=-1)


def semantic_gcn(xst: Tensor, projector: Sequence[Tensor], weights: Sequence[Tensor],
                 normalize: bool = False, return_attention: bool = False):
    att = semantic_attention(xst, *projector)
    s = normalized_matrix_tensor(att) if normalize else att
    out = gcn(s, xst, weights)
    return (out, att) if return_attention else out


def adjacent_gcn(xst: Tensor, propagation: np.ndarray, weights: Sequence[Tensor]) -> Tensor:
    return gcn(Tensor(propagation), xst, weights)


def reachability_gcn(xst_steps: Tensor, propagation_q: np.ndarray,
                     weights: Sequence[Tensor]) -> Tensor:
    """Features for one output step from all input steps.

    ``xst_steps`` is ``(B, P, N, F)``; ``propagation_q`` is ``(P, N, N)``.
    Returns ``(B, N, P * F_R)``, input-step blocks in order.
    """
    s = Tensor(propagation_q)
    h = gcn(s, xst_steps, weights)
    b, p, n, f = h.shape
    return ag.reshape(ag.transpose(h, (0, 2, 1, 3)), (b, n, p * f))
