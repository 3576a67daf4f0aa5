"""Node embeddings for the spatial graph (node2vec) and for the weekly chain of
time slots (DeepWalk), both trained with skip-gram and negative sampling."""
from __future__ import annotations

import csv

import numpy as np

from .exceptions import ContractError, TrainingError


def random_walks(adjacency: np.ndarray, walks_per_node: int = 10, walk_length: int = 80,
                 p: float = 1.0, q: float = 1.0, seed: int = 0) -> list[list[int]]:
    """Biased second-order random walks over a weighted graph.

    From the previous node ``t`` and current node ``v``, a candidate ``x`` gets
    weight ``w(v, x)`` scaled by ``1/p`` if ``x == t``, by 1 if ``x`` neighbors
    ``t`` and by ``1/q`` otherwise.  Walks stop early at nodes without
    out-edges.  With ``p == q == 1`` this is a plain first-order walk and all
    walks are advanced together.
    """
    if walk_length < 2:
        raise ContractError("walk_length must be at least 2")
    if p <= 0 or q <= 0:
        raise ContractError("p and q must be positive")
    adj = np.asarray(adjacency, dtype=float)
    n = adj.shape[0]
    rng = np.random.default_rng(seed)
    neighbors = [np.flatnonzero(adj[v] > 0) for v in range(n)]
    starts = np.tile(np.arange(n), walks_per_node)
    if p == 1.0 and q == 1.0:
        return _first_order_walks(adj, neighbors, starts, walk_length, rng)

    nbr_sets = [set(nb.tolist()) for nb in neighbors]
    walks = []
    for start in starts:
        walk = [int(start)]
        while len(walk) < walk_length:
            cur = walk[-1]
            cand = neighbors[cur]
            if cand.size == 0:
                break
            w = adj[cur, cand].copy()
            if len(walk) > 1:
                prev = walk[-2]
                for k, x in enumerate(cand):
                    if x == prev:
                        w[k] /= p
                    elif x not in nbr_sets[prev]:
                        w[k] /= q
            walk.append(int(cand[_draw(w, rng)]))
        walks.append(walk)
    return walks


def _draw(weights: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(weights)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def _first_order_walks(adj, neighbors, starts, walk_length, rng):
    n = adj.shape[0]
    deg = np.array([nb.size for nb in neighbors])
    width = max(int(deg.max()), 1)
    table = np.zeros((n, width), dtype=np.int64)
    cum = np.zeros((n, width))
    for v, nb in enumerate(neighbors):
        if nb.size:
            table[v, :nb.size] = nb
            c = np.cumsum(adj[v, nb])
            cum[v, :nb.size] = c / c[-1]
            cum[v, nb.size:] = 2.0  # never selected
    path = np.full((starts.size, walk_length), -1, dtype=np.int64)
    path[:, 0] = starts
    alive = deg[starts] > 0
    for step in range(1, walk_length):
        cur = path[:, step - 1]
        u = rng.random(starts.size)
        k = (cum[np.where(alive, cur, 0)] <= u[:, None]).sum(axis=1)
        k = np.minimum(k, np.maximum(deg[np.where(alive, cur, 0)] - 1, 0))
        nxt = table[np.where(alive, cur, 0), k]
        path[:, step] = np.where(alive, nxt, -1)
        alive = alive & (deg[np.where(alive, nxt, 0)] > 0)
    return [row[row >= 0].tolist() for row in path]


def skipgram_train(walks: list[list[int]], n_vocab: int, dims: int = 64, window: int = 10,
                   negatives: int = 5, epochs: int = 5, lr: float = 0.025, seed: int = 0,
                   batch_size: int = 512) -> np.ndarray:
    """Skip-gram with negative sampling; returns the input-side vectors.

    Per (center, context) pair the loss is
    ``-log s(u_ctx . v_c) - sum_neg log s(-u_neg . v_c)``.  Updates are applied
    in mini-batches of pairs with the learning rate decaying linearly to
    ``1e-4 * lr``.  Negatives come from the unigram distribution to the 3/4.
    """
    if dims < 1:
        raise ContractError("dims must be >= 1")
    if not walks or all(len(w) < 2 for w in walks):
        raise TrainingError("empty walk corpus")
    rng = np.random.default_rng(seed)
    w_in = (rng.random((n_vocab, dims)) - 0.5) / dims
    w_out = np.zeros((n_vocab, dims))
    if epochs <= 0:
        return w_in

    length = max(len(w) for w in walks)
    padded = np.full((len(walks), length), -1, dtype=np.int64)
    for k, w in enumerate(walks):
        padded[k, :len(w)] = w
    centers, contexts = [], []
    for off in range(1, window + 1):
        a, b = padded[:, :-off].ravel(), padded[:, off:].ravel()
        keep = (a >= 0) & (b >= 0)
        centers += [a[keep], b[keep]]
        contexts += [b[keep], a[keep]]
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)
    if centers.size == 0:
        raise TrainingError("walk corpus produced no training pairs")

    counts = np.bincount(padded[padded >= 0], minlength=n_vocab).astype(float)
    noise = counts ** 0.75
    noise_table = _unigram_table(noise / noise.sum())

    n_batches = epochs * int(np.ceil(centers.size / batch_size))
    done = 0
    for _ in range(epochs):
        order = rng.permutation(centers.size)
        for lo in range(0, order.size, batch_size):
            idx = order[lo:lo + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = noise_table[rng.integers(0, noise_table.size, (idx.size, negatives))]
            alpha = lr * max(1e-4, 1.0 - done / n_batches)
            done += 1

            v = w_in[c]
            u = w_out[o]
            un = w_out[neg]
            g_pos = _sigmoid(np.einsum("bd,bd->b", v, u)) - 1.0
            g_neg = _sigmoid(np.einsum("bkd,bd->bk", un, v))
            grad_v = g_pos[:, None] * u + np.einsum("bk,bkd->bd", g_neg, un)
            rows = np.concatenate([o, neg.ravel()])
            upd = np.concatenate([g_pos[:, None] * v,
                                  (g_neg[:, :, None] * v[:, None, :]).reshape(-1, dims)])
            _scatter_add(w_out, rows, -alpha * upd)
            _scatter_add(w_in, c, -alpha * grad_v)
    return w_in


def _unigram_table(probs: np.ndarray, size: int = 1 << 20) -> np.ndarray:
    """Lookup table where each id fills a share of slots proportional to its
    probability, so a uniform slot draw samples the distribution."""
    bounds = np.round(np.cumsum(probs) * size).astype(np.int64)
    return np.repeat(np.arange(probs.size), np.diff(bounds, prepend=0))


def _scatter_add(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``target[rows] += values`` with repeated rows accumulated."""
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((uniq.size, target.shape[1]))
    dims = target.shape[1]
    flat = (inv[:, None] * dims + np.arange(dims)).ravel()
    acc.ravel()[:] = np.bincount(flat, weights=values.ravel(), minlength=acc.size)
    target[uniq] += acc


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def build_week_line_graph(steps_per_day: int, wrap: bool = False) -> np.ndarray:
    """Adjacency of the 7*T weekly slots chained as a path (a cycle if ``wrap``)."""
    if steps_per_day < 1:
        raise ContractError("steps_per_day must be >= 1")
    n = 7 * steps_per_day
    adj = np.zeros((n, n))
    k = np.arange(n - 1)
    adj[k, k + 1] = adj[k + 1, k] = 1.0
    if wrap and n > 2:
        adj[0, n - 1] = adj[n - 1, 0] = 1.0
    return adj


def temporal_index(day_of_week, slot_of_day, steps_per_day: int):
    """Row of the weekly embedding table for ``slot_of_day`` on ``day_of_week``."""
    d = np.asarray(day_of_week)
    i = np.asarray(slot_of_day)
    if np.any((d < 0) | (d > 6)) or np.any((i < 0) | (i >= steps_per_day)):
        raise IndexError(f"slot out of range: day={day_of_week}, slot={slot_of_day}, T={steps_per_day}")
    out = d * steps_per_day + i
    return int(out) if out.ndim == 0 else out


def node2vec_embedding(adjacency: np.ndarray, dims: int = 64, walks_per_node: int = 10,
                       walk_length: int = 80, p: float = 1.0, q: float = 1.0, window: int = 10,
                       negatives: int = 5, epochs: int = 5, lr: float = 0.025, seed: int = 0):
    walks = random_walks(adjacency, walks_per_node, walk_length, p, q, seed)
    return skipgram_train(walks, adjacency.shape[0], dims, window, negatives, epochs, lr, seed + 1)


def deepwalk_week_embedding(steps_per_day: int, dims: int = 64, walks_per_node: int = 10,
                            walk_length: int = 80, window: int = 10, negatives: int = 5,
                            epochs: int = 5, lr: float = 0.025, seed: int = 0, wrap: bool = False):
    adj = build_week_line_graph(steps_per_day, wrap)
    walks = random_walks(adj, walks_per_node, walk_length, 1.0, 1.0, seed)
    return skipgram_train(walks, adj.shape[0], dims, window, negatives, epochs, lr, seed + 1)


def save_embedding(matrix: np.ndarray, path, ids=None) -> None:
    ids = list(range(matrix.shape[0])) if ids is None else list(ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"e{k}" for k in range(matrix.shape[1])])
        for key, row in zip(ids, matrix):
            w.writerow([key] + [repr(float(x)) for x in row])


def load_embedding(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = [r[0] for r in rows[1:]]
    return ids, np.array([[float(x) for x in r[1:]] for r in rows[1:]])
