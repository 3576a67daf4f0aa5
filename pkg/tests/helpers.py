"""Builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from msgc.correlations import build_reachability_stack, propagation_matrix
from msgc.graph import normalized_matrix
from msgc.network import MSGCNetwork, ModelConfig

TINY = dict(n_input_steps=2, n_output_steps=2, fusion_dim=8, spatial_emb_dim=8,
            temporal_emb_dim=8, semantic_dim=8, adjacent_dim=8, reach_dim=8, encoder_dim=8,
            decoder_dim=8, n_heads=2, walk_length=10, walks_per_node=2, embed_window=3,
            embed_epochs=1, batch_size=32, linear_head=True)

# small but learnable settings shared by the training-level tests
SMALL = dict(fusion_dim=16, spatial_emb_dim=8, temporal_emb_dim=8, semantic_dim=16,
             adjacent_dim=16, reach_dim=16, encoder_dim=16, decoder_dim=16, n_heads=2,
             walk_length=20, walks_per_node=2, embed_window=5, embed_epochs=1, batch_size=64,
             linear_head=True, lr=3e-3, sampling_tau=100.0)


def tiny_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**TINY, **overrides}).validate()


def random_constants(config: ModelConfig, n_nodes: int = 4, steps_per_day: int = 6,
                     seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    adj = rng.uniform(0.2, 1.0, (n_nodes, n_nodes))
    adj = (adj + adj.T) / 2
    np.fill_diagonal(adj, 0.0)
    travel = rng.uniform(0.0, 3 * config.interval_minutes, (n_nodes, n_nodes))
    np.fill_diagonal(travel, 0.0)
    reach = build_reachability_stack(travel, config.interval_minutes, config.n_input_steps,
                                     config.n_output_steps)
    return {"spatial_embedding": rng.normal(size=(n_nodes, config.spatial_emb_dim)),
            "temporal_embedding": rng.normal(size=(7 * steps_per_day, config.temporal_emb_dim)),
            "adjacent_propagation": normalized_matrix(adj),
            "reachability": propagation_matrix(reach, config.normalize_attention_matrices)}


def random_batch(config: ModelConfig, batch: int = 3, n_nodes: int = 4, steps_per_day: int = 6,
                 seed: int = 1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, config.n_input_steps, n_nodes, config.n_input_features))
    y = rng.normal(size=(batch, config.n_output_steps, n_nodes, config.n_output_features))
    slots = rng.integers(0, 7 * steps_per_day, size=(batch, config.n_input_steps))
    return x, slots, y



# parameters and constants feeding each switchable branch
BRANCH_INPUTS = {
    "temporal_emb": (["fusion.W_t"], ["temporal_embedding"]),
    "spatial_emb": (["fusion.W_i"], ["spatial_embedding"]),
    "adjacent": (["adjacent_gcn.W1", "adjacent_gcn.W2"], ["adjacent_propagation"]),
    "semantic": (["semantic.W_k1", "semantic.W_k2", "semantic.W_q1", "semantic.W_q2",
                  "semantic_gcn.W1", "semantic_gcn.W2"], []),
    "reachability": (["reach_gcn.W1", "reach_gcn.W2"], ["reachability"]),
    "temporal_attention": (["attention.W_H", "attention.W_S", "attention.v", "attention.W_C"], []),
}


def perturbed_output(branch: str, enabled: bool, seed: int = 0):
    """Forward outputs before and after perturbing everything feeding ``branch``."""
    from msgc.network import MSGCNetwork
    cfg = tiny_config(seed=seed, **({} if enabled else {f"use_{branch}": False}))
    consts = random_constants(cfg, seed=seed)
    net = MSGCNetwork(cfg, consts)
    x, slots, _ = random_batch(cfg, seed=seed + 1)
    before = net.forward(x, slots).data.copy()
    rng = np.random.default_rng(seed + 99)
    names, constant_keys = BRANCH_INPUTS[branch]
    for name in names:
        p = net.params[name]
        p.data = p.data + rng.normal(size=p.shape)
    for key in constant_keys:
        consts[key] = consts[key] + rng.normal(size=consts[key].shape)
    if branch == "temporal_emb":
        slots = (slots + 5) % consts["temporal_embedding"].shape[0]
    return before, net.forward(x, slots).data
