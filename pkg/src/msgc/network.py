"""Forward model: feature fusion, three GCN branches, and a two-layer GRU
encoder/decoder with multi-head temporal attention."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .correlations import adjacent_gcn, reachability_gcn, semantic_gcn
from .exceptions import ConfigError, DimensionError

ABLATIONS = ("temporal_emb", "spatial_emb", "adjacent", "semantic", "reachability",
             "temporal_attention")


@dataclass
class ModelConfig:
    """Every hyperparameter and switch of a run.  Together with the seed and
    the data it fully determines training."""

    n_input_steps: int = 3
    n_output_steps: int = 3
    interval_minutes: float = 5.0
    n_input_features: int = 1
    n_output_features: int = 1
    fusion_dim: int = 256
    spatial_emb_dim: int = 64
    temporal_emb_dim: int = 64
    semantic_dim: int = 64
    adjacent_dim: int = 64
    reach_dim: int = 64
    encoder_dim: int = 64
    decoder_dim: int = 64
    attention_dim: int | None = None
    key_dim: int | None = None
    n_heads: int = 5
    gcn_layers: int = 2
    rnn_layers: int = 2
    use_temporal_emb: bool = True
    use_spatial_emb: bool = True
    use_adjacent: bool = True
    use_semantic: bool = True
    use_reachability: bool = True
    use_temporal_attention: bool = True
    normalize_attention_matrices: bool = False
    linear_head: bool = False
    # graph / embedding preprocessing
    adjacency_threshold: float = 0.1
    walk_length: int = 80
    walks_per_node: int = 10
    embed_window: int = 10
    embed_negatives: int = 5
    embed_epochs: int = 5
    embed_lr: float = 0.025
    node2vec_p: float = 1.0
    node2vec_q: float = 1.0
    week_wrap: bool = False
    # optimisation
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 1000
    patience: int = 10
    stall: int = 50
    sampling_tau: float = 2000.0
    grad_clip: float | None = None

    @property
    def resolved_attention_dim(self) -> int:
        return self.attention_dim or self.encoder_dim

    @property
    def resolved_key_dim(self) -> int:
        return self.key_dim or self.fusion_dim

    def validate(self) -> "ModelConfig":
        problems = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name.endswith(("_dim", "_steps", "_features", "n_heads", "_layers")) and v is not None:
                if not isinstance(v, (int, np.integer)) or v < 1:
                    problems.append(f"{f.name} must be a positive integer, got {v!r}")
        if self.n_output_features > self.n_input_features:
            problems.append("n_output_features cannot exceed n_input_features")
        if self.interval_minutes <= 0:
            problems.append("interval_minutes must be positive")
        if self.lr < 0:
            problems.append("lr must be nonnegative")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_epochs < 0:
            problems.append("max_epochs must be >= 0")
        if self.sampling_tau <= 0:
            problems.append("sampling_tau must be positive")
        if self.n_heads < 1:
            problems.append("n_heads must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    def ablate(self, *branches: str) -> "ModelConfig":
        changes = {}
        for b in branches:
            if b not in ABLATIONS:
                raise ConfigError(f"unknown ablation {b!r}; choose from {ABLATIONS}")
            changes[f"use_{b}"] = False
        return dataclasses.replace(self, **changes)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_parameters(config: ModelConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, stored as ``(in, out)`` matrices."""
    c = config
    rng = np.random.default_rng(c.seed if seed is None else seed)
    params: dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out):
        params[name] = glorot(rng, fan_in, fan_out)

    fst, fe, h = c.fusion_dim, c.resolved_attention_dim, c.n_heads
    dense("fusion.W_x", c.n_input_features, fst)
    dense("fusion.W_t", c.temporal_emb_dim, fst)
    dense("fusion.W_i", c.spatial_emb_dim, fst)
    kd = c.resolved_key_dim
    dense("semantic.W_k1", 3 * fst, kd)
    dense("semantic.W_k2", kd, kd)
    dense("semantic.W_q1", 3 * fst, kd)
    dense("semantic.W_q2", kd, kd)
    for branch, width in (("semantic_gcn", c.semantic_dim), ("adjacent_gcn", c.adjacent_dim),
                          ("reach_gcn", c.reach_dim)):
        fan_in = 3 * fst
        for layer in range(c.gcn_layers):
            dense(f"{branch}.W{layer + 1}", fan_in, width)
            fan_in = width
    dense("encoder.W_1", c.semantic_dim + c.adjacent_dim, c.encoder_dim)
    _gru_params(params, rng, "encoder", c.encoder_dim, c.encoder_dim, c.rnn_layers)
    dense("attention.W_H", c.encoder_dim, h * fe)
    dense("attention.W_S", c.decoder_dim, h * fe)
    params["attention.v"] = glorot(rng, fe, h).T.reshape(-1)
    dense("attention.W_C", h * c.encoder_dim, c.encoder_dim)
    dense("decoder.W_2", c.encoder_dim + c.n_input_steps * c.reach_dim + c.n_output_features,
          c.decoder_dim)
    _gru_params(params, rng, "decoder", c.decoder_dim, c.decoder_dim, c.rnn_layers)
    dense("head.W_3", c.decoder_dim, c.n_output_features)
    return {k: ag.parameter(v, name=k) for k, v in params.items()}


def _gru_params(params, rng, prefix, in_dim, hidden, layers):
    for layer in range(layers):
        fan_in = (in_dim if layer == 0 else hidden) + hidden
        params[f"{prefix}.l{layer}.W_zr"] = glorot(rng, fan_in, 2 * hidden)
        params[f"{prefix}.l{layer}.b_zr"] = np.zeros(2 * hidden)
        params[f"{prefix}.l{layer}.W_h"] = glorot(rng, fan_in, hidden)
        params[f"{prefix}.l{layer}.b_h"] = np.zeros(hidden)


def gru_cell(x: Tensor, h: Tensor, w_zr, b_zr, w_h, b_h) -> Tensor:
    """``h' = (1 - z) * h + z * h~`` with ``z, r`` sigmoid gates over ``[x || h]``
    and candidate ``h~ = tanh(W [x || r * h] + b)``."""
    hidden = h.shape[-1]
    gates = ag.sigmoid(ag.add(ag.matmul(ag.concat([x, h], -1), w_zr), b_zr))
    z = gates[..., :hidden]
    r = gates[..., hidden:]
    cand = ag.tanh(ag.add(ag.matmul(ag.concat([x, ag.mul(r, h)], -1), w_h), b_h))
    return ag.add(h, ag.mul(z, ag.sub(cand, h)))


def _gru_stack(params, prefix, x, states):
    new = []
    inp = x
    for layer, h in enumerate(states):
        p = f"{prefix}.l{layer}."
        h = gru_cell(inp, h, params[p + "W_zr"], params[p + "b_zr"], params[p + "W_h"],
                     params[p + "b_h"])
        new.append(h)
        inp = h
    return new


def temporal_attention(params, config: ModelConfig, encoder_states: Tensor, keys_h: Tensor,
                       decoder_state: Tensor):
    """Context for one output step.

    ``encoder_states`` is ``(B, N, P, F_H)`` and ``keys_h`` its projection by
    ``attention.W_H``.  Returns the ``(B, N, F_H)`` context and the
    ``(B, N, H, P)`` attention weights.
    """
    b, n, p, fh = encoder_states.shape
    h, fe = config.n_heads, config.resolved_attention_dim
    keys_s = ag.expand(ag.matmul(decoder_state, params["attention.W_S"]), 2, p)
    energy = ag.mul(ag.tanh(ag.add(keys_h, keys_s)), params["attention.v"])
    scores = ag.sum(ag.reshape(energy, (b, n, p, h, fe)), axis=-1)
    alpha = ag.softmax(ag.transpose(scores, (0, 1, 3, 2)), axis=-1)
    heads = ag.matmul(alpha, encoder_states)
    context = ag.matmul(ag.reshape(heads, (b, n, h * fh)), params["attention.W_C"])
    return context, alpha


class MSGCNetwork:
    """Parameter container plus the forward pass.

    ``constants`` must provide ``spatial_embedding`` (N, F_S),
    ``temporal_embedding`` (7T, F_T), ``adjacent_propagation`` (N, N) and
    ``reachability`` (Q, P, N, N) propagation matrices.
    """

    def __init__(self, config: ModelConfig, constants: dict, params: dict[str, Tensor] | None = None):
        self.config = config.validate()
        self.constants = constants
        self.params = params if params is not None else init_parameters(config)
        self._check_constants()

    def _check_constants(self):
        c, k = self.config, self.constants
        sp, tp = k["spatial_embedding"], k["temporal_embedding"]
        if sp.shape[1] != c.spatial_emb_dim:
            raise DimensionError(f"spatial embedding width {sp.shape[1]} != {c.spatial_emb_dim}")
        if tp.shape[1] != c.temporal_emb_dim:
            raise DimensionError(f"temporal embedding width {tp.shape[1]} != {c.temporal_emb_dim}")
        n = sp.shape[0]
        if k["adjacent_propagation"].shape != (n, n):
            raise DimensionError("adjacent propagation matrix does not match node count")
        if k["reachability"].shape != (c.n_output_steps, c.n_input_steps, n, n):
            raise DimensionError(f"reachability stack has shape {k['reachability'].shape}")

    @property
    def n_nodes(self) -> int:
        return self.constants["spatial_embedding"].shape[0]

    def fuse(self, x: Tensor, slots: np.ndarray) -> Tensor:
        """Fused features ``relu(x W_x) || relu(tp W_t) || relu(sp W_i)``.

        ``x`` is ``(M, N, F_I)`` and ``slots`` the ``M`` weekly slot indices.
        """
        c, prm = self.config, self.params
        m, n, _ = x.shape
        if x.shape[-1] != c.n_input_features:
            raise DimensionError(f"input features {x.shape[-1]} != {c.n_input_features}")
        parts = [ag.relu(ag.matmul(x, prm["fusion.W_x"]))]
        if c.use_temporal_emb:
            tp = Tensor(self.constants["temporal_embedding"][np.asarray(slots)])
            parts.append(ag.expand(ag.relu(ag.matmul(tp, prm["fusion.W_t"])), 1, n))
        else:
            parts.append(ag.zeros((m, n, c.fusion_dim)))
        if c.use_spatial_emb:
            sp = Tensor(self.constants["spatial_embedding"])
            parts.append(ag.expand(ag.relu(ag.matmul(sp, prm["fusion.W_i"])), 0, m))
        else:
            parts.append(ag.zeros((m, n, c.fusion_dim)))
        return ag.concat(parts, -1)

    def forward(self, x: np.ndarray, x_slots: np.ndarray, y: np.ndarray | None = None,
                teacher: list[bool] | None = None, trace: dict | None = None) -> Tensor:
        """Predictions ``(B, Q, N, F_O)`` for normalized inputs ``(B, P, N, F_I)``.

        ``teacher[q]`` selects whether the ground truth ``y[:, q-1]`` (rather
        than the model's own previous output) feeds decoder step ``q``; step 0
        always receives the last observed input.  If ``trace`` is a dict the
        semantic and temporal attention weights are stored in it.
        """
        c, prm = self.config, self.params
        x = np.asarray(x, dtype=float)
        if x.ndim != 4:
            raise DimensionError(f"expected (B, P, N, F_I) input, got {x.shape}")
        b, p, n, fi = x.shape
        if p != c.n_input_steps or n != self.n_nodes:
            raise DimensionError(f"input {x.shape} does not match P={c.n_input_steps}, N={self.n_nodes}")
        qn = c.n_output_steps
        xst = self.fuse(Tensor(x.reshape(b * p, n, fi)), np.asarray(x_slots).reshape(-1))

        semantic_w = [prm[f"semantic_gcn.W{k + 1}"] for k in range(c.gcn_layers)]
        adjacent_w = [prm[f"adjacent_gcn.W{k + 1}"] for k in range(c.gcn_layers)]
        reach_w = [prm[f"reach_gcn.W{k + 1}"] for k in range(c.gcn_layers)]

        if c.use_semantic:
            projector = [prm[k] for k in ("semantic.W_k1", "semantic.W_k2", "semantic.W_q1",
                                          "semantic.W_q2")]
            xf, att = semantic_gcn(xst, projector, semantic_w, c.normalize_attention_matrices,
                                   return_attention=True)
            if trace is not None:
                trace["semantic_attention"] = att.data.reshape(b, p, n, n)
        else:
            xf = ag.zeros((b * p, n, c.semantic_dim))
        if c.use_adjacent:
            xa = adjacent_gcn(xst, self.constants["adjacent_propagation"], adjacent_w)
        else:
            xa = ag.zeros((b * p, n, c.adjacent_dim))

        enc_in = ag.reshape(ag.matmul(ag.concat([xf, xa], -1), prm["encoder.W_1"]),
                            (b, p, n, c.encoder_dim))
        states = [ag.zeros((b, n, c.encoder_dim)) for _ in range(c.rnn_layers)]
        hidden = []
        for step in range(p):
            states = _gru_stack(prm, "encoder", enc_in[:, step], states)
            hidden.append(states[-1])
        enc_states = ag.stack(hidden, axis=2)
        if c.use_temporal_attention:
            keys_h = ag.matmul(enc_states, prm["attention.W_H"])
        if c.use_reachability:
            xst_steps = ag.reshape(xst, (b, p, n, 3 * c.fusion_dim))

        dec = [ag.zeros((b, n, c.decoder_dim)) for _ in range(c.rnn_layers)]
        y_prev = Tensor(x[:, -1, :, :c.n_output_features])
        outputs, alphas = [], []
        for q in range(qn):
            if q > 0:
                if teacher is not None and teacher[q] and y is not None:
                    y_prev = Tensor(np.asarray(y, dtype=float)[:, q - 1])
                else:
                    y_prev = outputs[-1]
            if c.use_temporal_attention:
                context, alpha = temporal_attention(prm, c, enc_states, keys_h, dec[-1])
                alphas.append(alpha.data)
            else:
                context = hidden[-1]
            if c.use_reachability:
                xr = reachability_gcn(xst_steps, self.constants["reachability"][q], reach_w)
            else:
                xr = ag.zeros((b, n, p * c.reach_dim))
            dec_in = ag.matmul(ag.concat([context, xr, y_prev], -1), prm["decoder.W_2"])
            dec = _gru_stack(prm, "decoder", dec_in, dec)
            out = ag.matmul(dec[-1], prm["head.W_3"])
            outputs.append(out if c.linear_head else ag.relu(out))
        if trace is not None and alphas:
            trace["temporal_attention"] = np.stack(alphas, axis=1)
        return ag.stack(outputs, axis=1)

    __call__ = forward
