"""Normalization, masked loss, scheduled sampling, the optimisation loop,
evaluation metrics and the historical-average reference."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from .autograd import Adam, Tape, Tensor
from .exceptions import ContractError, MetricError, NumericError, TrainingError

log = logging.getLogger(__name__)


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Per-feature standardization over every axis but the last.

    Statistics use observed entries only; a constant feature gets ``std = 1``.
    """

    def fit(self, X, y=None, mask=None):
        X = np.asarray(X, dtype=float)
        m = np.ones(X.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        f = X.shape[-1]
        flat, fm = X.reshape(-1, f), m.reshape(-1, f)
        count = fm.sum(axis=0)
        if np.any(count == 0):
            raise ContractError("a feature has no observed values to fit on")
        mean = np.where(fm, flat, 0.0).sum(axis=0) / count
        var = np.where(fm, (flat - mean) ** 2, 0.0).sum(axis=0) / count
        std = np.sqrt(var)
        self.mean_ = mean
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, X, n_features: int | None = None):
        check_is_fitted(self, "mean_")
        k = slice(None) if n_features is None else slice(0, n_features)
        return (np.asarray(X, dtype=float) - self.mean_[k]) / self.scale_[k]

    def inverse_transform(self, X, n_features: int | None = None):
        check_is_fitted(self, "mean_")
        k = slice(None) if n_features is None else slice(0, n_features)
        return np.asarray(X, dtype=float) * self.scale_[k] + self.mean_[k]


def zscore(x, scaler: ZScoreScaler):
    return scaler.transform(x)


def inverse_zscore(x, scaler: ZScoreScaler):
    return scaler.inverse_transform(x)


def masked_mae_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean absolute error over observed cells."""
    target = np.asarray(target, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if pred.shape != target.shape or target.shape != mask.shape:
        raise ContractError(f"loss shapes differ: {pred.shape}, {target.shape}, {mask.shape}")
    count = mask.sum()
    if count == 0:
        raise ContractError("loss mask selects no entries")
    err = ag.absolute(ag.sub(pred, Tensor(np.where(mask > 0, target, 0.0))))
    return ag.scale(ag.sum(ag.mul(err, Tensor(mask))), 1.0 / count)


def sampling_probability(iteration, tau: float):
    """Inverse-sigmoid decay ``tau / (tau + exp(i / tau))`` of teacher forcing."""
    i = np.asarray(iteration, dtype=float)
    out = tau / (tau + np.exp(i / tau))
    return float(out) if out.ndim == 0 else out


def metrics(pred, truth, mask=None, mape_threshold: float = 1e-6) -> dict:
    """MAE, RMSE and MAPE (%) over masked entries, overall and per output step.

    Arrays are ``(n, Q, ...)``; axis 1 indexes the output step.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    out = _metric_block(pred, truth, mask, mape_threshold)
    if pred.ndim >= 2:
        out["per_step"] = [_metric_block(pred[:, q], truth[:, q], mask[:, q], mape_threshold)
                           for q in range(pred.shape[1])]
    return out


def _metric_block(pred, truth, mask, thr):
    if not mask.any():
        raise MetricError("no observed entries to score")
    err = (pred - truth)[mask]
    keep = mask & (np.abs(truth) > thr)
    if not keep.any():
        raise MetricError("MAPE undefined: every observed ground-truth value is zero")
    mape = np.mean(np.abs((pred[keep] - truth[keep]) / truth[keep])) * 100.0
    return {"MAE": float(np.mean(np.abs(err))), "RMSE": float(np.sqrt(np.mean(err ** 2))),
            "MAPE": float(mape), "count": int(mask.sum())}


class HistoricalAverage(RegressorMixin, BaseEstimator):
    """Predict each node's training average at the same weekly slot."""

    def __init__(self, n_output_features: int = 1):
        self.n_output_features = n_output_features

    def fit(self, X, y=None):
        """``X`` is a :class:`~msgc.data.SeriesTable` (the training range)."""
        values = X.values[..., :self.n_output_features]
        mask = X.mask[..., :self.n_output_features]
        slots = X.slots()
        n_slots = 7 * X.steps_per_day
        sums = np.zeros((n_slots,) + values.shape[1:])
        counts = np.zeros(sums.shape)
        np.add.at(sums, slots, np.where(mask, values, 0.0))
        np.add.at(counts, slots, mask)
        node_count = counts.sum(axis=0)
        self.node_mean_ = np.where(node_count > 0, sums.sum(axis=0) / np.maximum(node_count, 1), 0.0)
        seen = counts > 0
        self.slot_mean_ = np.where(seen, sums / np.maximum(counts, 1), self.node_mean_[None])
        return self

    def predict(self, X):
        """``X`` is a :class:`~msgc.data.Windows` or an array of weekly slots."""
        check_is_fitted(self, "slot_mean_")
        slots = np.asarray(getattr(X, "y_slots", X))
        return self.slot_mean_[slots]

    def score(self, X, y=None):
        m = metrics(self.predict(X), X.y, X.y_mask)
        return -m["MAE"]


# ------------------------------------------------------------------ training

@dataclass
class TrainState:
    """Everything needed to continue training exactly where it stopped."""

    epoch: int = 0
    iteration: int = 0
    lr: float = 1e-3
    best_val: float = float("inf")
    best_epoch: int = -1
    bad_epochs: int = 0
    stall_epochs: int = 0
    stopped: bool = False
    rng_state: dict | None = None
    adam: dict | None = None
    best_params: dict | None = None
    history: list = field(default_factory=list)


def prepare_split(windows, scaler: ZScoreScaler, n_output_features: int) -> dict:
    """Normalized arrays the network consumes."""
    return {"x": scaler.transform(np.where(windows.x_mask, windows.x, scaler.mean_)),
            "x_slots": windows.x_slots,
            "y": scaler.transform(windows.y, n_output_features),
            "y_mask": windows.y_mask}


def predict_normalized(network, split: dict, batch_size: int = 256) -> np.ndarray:
    n = split["x"].shape[0]
    outs = []
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        outs.append(network.forward(split["x"][sl], split["x_slots"][sl]).data)
    if not outs:
        c = network.config
        return np.zeros((0, c.n_output_steps, network.n_nodes, c.n_output_features))
    return np.concatenate(outs)


def evaluate_loss(network, split: dict, batch_size: int = 256) -> float:
    pred = predict_normalized(network, split, batch_size)
    mask = split["y_mask"]
    if not mask.any():
        return float("nan")
    return float(np.abs(pred - split["y"])[mask].mean())


def _snapshot(params) -> dict:
    return {k: p.data.copy() for k, p in params.items()}


def train(network, train_split: dict, val_split: dict | None, state: TrainState | None = None,
          epoch_callback=None) -> TrainState:
    """Mini-batch Adam with scheduled sampling and plateau learning-rate halving.

    The learning rate halves after ``patience`` epochs without a validation
    improvement; training stops after ``stall`` such epochs or at
    ``max_epochs``.  The returned state holds the best-validation parameters.
    """
    cfg = network.config
    params = network.params
    if state is None:
        state = TrainState(lr=cfg.lr, best_params=_snapshot(params))
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = copy.deepcopy(state.rng_state)
    opt = Adam(params, lr=state.lr)
    if state.adam is not None:
        opt.state = copy.deepcopy(state.adam)

    n = train_split["x"].shape[0]
    if n == 0:
        raise TrainingError("no training windows")
    has_val = val_split is not None and val_split["y_mask"].any()

    while state.epoch < cfg.max_epochs and not state.stopped:
        order = rng.permutation(n)
        total_loss, total_count, eps = 0.0, 0.0, sampling_probability(state.iteration, cfg.sampling_tau)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            mask = train_split["y_mask"][idx]
            eps = sampling_probability(state.iteration, cfg.sampling_tau)
            teacher = [bool(rng.random() < eps) for _ in range(cfg.n_output_steps)]
            if not mask.any():
                state.iteration += 1
                continue
            opt.zero_grad()
            with Tape() as tape:
                pred = network.forward(train_split["x"][idx], train_split["x_slots"][idx],
                                       train_split["y"][idx], teacher)
                loss = masked_mae_loss(pred, train_split["y"][idx], mask)
            value = loss.item()
            if not np.isfinite(value):
                norms = {k: float(np.linalg.norm(p.data)) for k, p in params.items()}
                raise TrainingError(f"non-finite loss at epoch {state.epoch + 1}, batch {b}; "
                                    f"parameter norms {norms}")
            tape.backward(loss)
            if cfg.grad_clip:
                _clip(params, cfg.grad_clip)
            opt.lr = state.lr
            try:
                opt.step()
            except NumericError as exc:
                raise TrainingError(f"epoch {state.epoch + 1}, batch {b}: {exc}") from exc
            state.iteration += 1
            total_loss += value * mask.sum()
            total_count += mask.sum()

        state.epoch += 1
        train_loss = total_loss / max(total_count, 1)
        val_loss = evaluate_loss(network, val_split) if has_val else train_loss
        state.history.append({"epoch": state.epoch, "train_loss": train_loss,
                              "val_loss": val_loss, "epsilon": eps, "lr": state.lr})
        log.info("epoch %d train %.5f val %.5f eps %.3f lr %.2e", state.epoch, train_loss,
                 val_loss, eps, state.lr)
        if val_loss < state.best_val:
            state.best_val, state.best_epoch = val_loss, state.epoch
            state.best_params = _snapshot(params)
            state.bad_epochs = state.stall_epochs = 0
        else:
            state.bad_epochs += 1
            state.stall_epochs += 1
            if state.bad_epochs >= cfg.patience:
                state.lr *= 0.5
                state.bad_epochs = 0
            if state.stall_epochs >= cfg.stall:
                state.stopped = True
        state.rng_state = copy.deepcopy(rng.bit_generator.state)
        state.adam = copy.deepcopy(opt.state)
        if epoch_callback is not None:
            epoch_callback(state)
    if state.rng_state is None:
        state.rng_state = copy.deepcopy(rng.bit_generator.state)
        state.adam = copy.deepcopy(opt.state)
    return state


def _clip(params, limit):
    total = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values() if p.grad is not None))
    if total > limit:
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * (limit / total)
