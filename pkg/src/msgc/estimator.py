"""scikit-learn style forecaster wrapping preprocessing, the network and
training, with checkpoint save/load."""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .autograd import parameter
from .checkpoint import load_archive, save_archive
from .correlations import adjacent_trend_scores, build_reachability_stack, propagation_matrix
from .data import Windows, WindowedDataset
from .embeddings import deepwalk_week_embedding, node2vec_embedding
from .exceptions import DimensionError
from .graph import normalized_matrix
from .network import MSGCNetwork, ModelConfig
from .training import (TrainState, ZScoreScaler, metrics, predict_normalized, prepare_split,
                       train)
from .validation import check_graph, check_windowed

_CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(ModelConfig))


class MSGCForecaster(RegressorMixin, BaseEstimator):
    """Multi-view spatial graph convolution Seq2Seq traffic forecaster.

    Hyperparameters mirror :class:`~msgc.network.ModelConfig`.  ``fit`` takes a
    :class:`~msgc.data.WindowedDataset` and the :class:`~msgc.graph.TrafficGraph`;
    ``predict`` returns ``(n, Q, N, F_O)`` forecasts in raw units.  With
    ``warm_start=True`` a fitted (or loaded) model resumes training from its
    saved optimizer state.
    """

    def __init__(self, *,
                 n_input_steps=3,
                 n_output_steps=3,
                 interval_minutes=5.0,
                 n_input_features=1,
                 n_output_features=1,
                 fusion_dim=256,
                 spatial_emb_dim=64,
                 temporal_emb_dim=64,
                 semantic_dim=64,
                 adjacent_dim=64,
                 reach_dim=64,
                 encoder_dim=64,
                 decoder_dim=64,
                 attention_dim=None,
                 key_dim=None,
                 n_heads=5,
                 gcn_layers=2,
                 rnn_layers=2,
                 use_temporal_emb=True,
                 use_spatial_emb=True,
                 use_adjacent=True,
                 use_semantic=True,
                 use_reachability=True,
                 use_temporal_attention=True,
                 normalize_attention_matrices=False,
                 linear_head=False,
                 adjacency_threshold=0.1,
                 walk_length=80,
                 walks_per_node=10,
                 embed_window=10,
                 embed_negatives=5,
                 embed_epochs=5,
                 embed_lr=0.025,
                 node2vec_p=1.0,
                 node2vec_q=1.0,
                 week_wrap=False,
                 seed=0,
                 lr=0.001,
                 batch_size=16,
                 max_epochs=1000,
                 patience=10,
                 stall=50,
                 sampling_tau=2000.0,
                 grad_clip=None,
                 warm_start=False):
        self.n_input_steps = n_input_steps
        self.n_output_steps = n_output_steps
        self.interval_minutes = interval_minutes
        self.n_input_features = n_input_features
        self.n_output_features = n_output_features
        self.fusion_dim = fusion_dim
        self.spatial_emb_dim = spatial_emb_dim
        self.temporal_emb_dim = temporal_emb_dim
        self.semantic_dim = semantic_dim
        self.adjacent_dim = adjacent_dim
        self.reach_dim = reach_dim
        self.encoder_dim = encoder_dim
        self.decoder_dim = decoder_dim
        self.attention_dim = attention_dim
        self.key_dim = key_dim
        self.n_heads = n_heads
        self.gcn_layers = gcn_layers
        self.rnn_layers = rnn_layers
        self.use_temporal_emb = use_temporal_emb
        self.use_spatial_emb = use_spatial_emb
        self.use_adjacent = use_adjacent
        self.use_semantic = use_semantic
        self.use_reachability = use_reachability
        self.use_temporal_attention = use_temporal_attention
        self.normalize_attention_matrices = normalize_attention_matrices
        self.linear_head = linear_head
        self.adjacency_threshold = adjacency_threshold
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.embed_window = embed_window
        self.embed_negatives = embed_negatives
        self.embed_epochs = embed_epochs
        self.embed_lr = embed_lr
        self.node2vec_p = node2vec_p
        self.node2vec_q = node2vec_q
        self.week_wrap = week_wrap
        self.seed = seed
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.stall = stall
        self.sampling_tau = sampling_tau
        self.grad_clip = grad_clip
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, config: ModelConfig, **kwargs) -> "MSGCForecaster":
        return cls(**config.to_dict(), **kwargs)

    def get_config(self) -> ModelConfig:
        params = self.get_params()
        return ModelConfig(**{k: params[k] for k in _CONFIG_FIELDS}).validate()

    # ------------------------------------------------------------ fitting
    def build_constants(self, X: WindowedDataset, graph, spatial_embedding=None,
                        temporal_embedding=None) -> dict:
        """Embeddings and correlation matrices derived from the training range."""
        c = self.get_config()
        table = X.train_table
        if spatial_embedding is None:
            spatial_embedding = node2vec_embedding(
                graph.adjacency, c.spatial_emb_dim, c.walks_per_node, c.walk_length,
                c.node2vec_p, c.node2vec_q, c.embed_window, c.embed_negatives, c.embed_epochs,
                c.embed_lr, seed=c.seed)
        if temporal_embedding is None:
            temporal_embedding = deepwalk_week_embedding(
                table.steps_per_day, c.temporal_emb_dim, c.walks_per_node, c.walk_length,
                c.embed_window, c.embed_negatives, c.embed_epochs, c.embed_lr, seed=c.seed + 7,
                wrap=c.week_wrap)
        if temporal_embedding.shape[0] != 7 * table.steps_per_day:
            raise DimensionError(f"temporal embedding has {temporal_embedding.shape[0]} rows, "
                                 f"data needs {7 * table.steps_per_day}")
        trend = adjacent_trend_scores(table.values, graph.adjacency, table.mask)
        reach = build_reachability_stack(graph.travel_time, c.interval_minutes, c.n_input_steps,
                                         c.n_output_steps)
        return {"spatial_embedding": np.asarray(spatial_embedding, dtype=float),
                "temporal_embedding": np.asarray(temporal_embedding, dtype=float),
                "adjacent_trend": trend,
                "adjacent_propagation": normalized_matrix(trend),
                "reachability_scores": reach,
                "reachability": propagation_matrix(reach, c.normalize_attention_matrices)}

    def fit(self, X: WindowedDataset, y=None, *, graph, spatial_embedding=None,
            temporal_embedding=None, epoch_callback=None):
        config = self.get_config()
        check_windowed(X, config)
        check_graph(graph, X.table)
        resume = self.warm_start and hasattr(self, "train_state_")
        if resume:
            network = MSGCNetwork(config, self.constants_, self._current_tensors())
            state = self.train_state_
            scaler = self.scaler_
        else:
            scaler = ZScoreScaler().fit(X.train_table.values, mask=X.train_table.mask)
            constants = self.build_constants(X, graph, spatial_embedding, temporal_embedding)
            network = MSGCNetwork(config, constants)
            state = None
        self.scaler_ = scaler
        self.constants_ = network.constants
        self.node_ids_ = list(X.table.node_ids)
        self.steps_per_day_ = X.table.steps_per_day

        def callback(st):
            self._absorb(network, st, config)
            if epoch_callback is not None:
                epoch_callback(self, st)

        state = train(network, prepare_split(X.train, scaler, config.n_output_features),
                      prepare_split(X.val, scaler, config.n_output_features), state, callback)
        self._absorb(network, state, config)
        return self

    def _absorb(self, network, state: TrainState, config: ModelConfig):
        self.config_ = config
        self.train_state_ = state
        self.current_params_ = {k: p.data.copy() for k, p in network.params.items()}
        self.params_ = {k: v.copy() for k, v in state.best_params.items()}
        self.history_ = list(state.history)

    def _current_tensors(self):
        return {k: parameter(v.copy(), name=k) for k, v in self.current_params_.items()}

    @property
    def network_(self) -> MSGCNetwork:
        check_is_fitted(self, "params_")
        return MSGCNetwork(self.config_, self.constants_,
                           {k: parameter(v, name=k) for k, v in self.params_.items()})

    # ---------------------------------------------------------- inference
    def _windows(self, X) -> Windows:
        return X.test if isinstance(X, WindowedDataset) else X

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        check_is_fitted(self, "params_")
        w = self._windows(X)
        split = prepare_split(w, self.scaler_, self.config_.n_output_features)
        out = predict_normalized(self.network_, split, batch_size)
        return self.scaler_.inverse_transform(out, self.config_.n_output_features)

    def evaluate(self, X) -> dict:
        w = self._windows(X)
        return metrics(self.predict(w), w.y, w.y_mask)

    def score(self, X, y=None) -> float:
        """Negative test MAE, so that larger is better."""
        return -self.evaluate(X)["MAE"]

    # -------------------------------------------------------- persistence
    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        st = self.train_state_
        arrays = {}
        for k, v in self.params_.items():
            arrays[f"params/{k}"] = v
        for k, v in self.current_params_.items():
            arrays[f"current/{k}"] = v
        for k, v in self.constants_.items():
            arrays[f"buffers/{k}"] = v
        arrays["scaler/mean"] = self.scaler_.mean_
        arrays["scaler/scale"] = self.scaler_.scale_
        if st.adam is not None:
            for k, v in st.adam["m"].items():
                arrays[f"adam_m/{k}"] = v
            for k, v in st.adam["v"].items():
                arrays[f"adam_v/{k}"] = v
        meta = {
            "config": self.config_.to_dict(),
            "node_ids": self.node_ids_,
            "steps_per_day": self.steps_per_day_,
            "parameters": {k: list(v.shape) for k, v in self.params_.items()},
            "parameter_order": list(self.params_),
            "train_state": {
                "epoch": st.epoch, "iteration": st.iteration, "lr": st.lr,
                "best_val": _json_float(st.best_val), "best_epoch": st.best_epoch,
                "bad_epochs": st.bad_epochs, "stall_epochs": st.stall_epochs,
                "stopped": st.stopped, "rng_state": st.rng_state,
                "adam_step": None if st.adam is None else st.adam["step"],
                "history": st.history,
            },
        }
        save_archive(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "MSGCForecaster":
        meta, arrays = load_archive(path)
        config = ModelConfig.from_dict(meta["config"])
        est = cls.from_config(config)

        order = meta["parameter_order"]

        def group(prefix):
            found = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            ranked = [k for k in order if k in found] + sorted(set(found) - set(order))
            return {k: found[k] for k in ranked}

        ts = meta["train_state"]
        adam = None
        if ts["adam_step"] is not None:
            adam = {"step": ts["adam_step"], "m": group("adam_m/"), "v": group("adam_v/")}
        best = group("params/")
        est.config_ = config
        est.params_ = best
        est.current_params_ = group("current/")
        est.constants_ = group("buffers/")
        est.scaler_ = ZScoreScaler()
        est.scaler_.mean_ = arrays["scaler/mean"]
        est.scaler_.scale_ = arrays["scaler/scale"]
        est.node_ids_ = meta["node_ids"]
        est.steps_per_day_ = meta["steps_per_day"]
        est.train_state_ = TrainState(
            epoch=ts["epoch"], iteration=ts["iteration"], lr=ts["lr"],
            best_val=float(ts["best_val"]), best_epoch=ts["best_epoch"],
            bad_epochs=ts["bad_epochs"], stall_epochs=ts["stall_epochs"], stopped=ts["stopped"],
            rng_state=ts["rng_state"], adam=adam, best_params={k: v.copy() for k, v in best.items()},
            history=ts["history"])
        est.history_ = list(ts["history"])
        return est


def _json_float(x: float):
    return x if np.isfinite(x) else str(x)
