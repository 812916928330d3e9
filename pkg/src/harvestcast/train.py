"""Mini-batch MAE/Adam training with patience-based early stopping."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import fit_normalizer, normalize_arrays
from .errors import ContractError, NumericError, TrainingDiverged
from .optim import AdamState, adam_step, mae_loss
from .tensor import Tape, Tensor, backprop

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 50
    batch_size: int = 128
    seed: int = 0
    learning_rate: float = 0.0005
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.eval_batch_size < 1:
            raise ValueError("patience, batch_size, max_epochs and eval_batch_size must be >= 1")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float
    batch_size: int


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    best_epoch: int


def early_stop_decision(val_losses, patience):
    """Stop once ``patience`` epochs have passed since the best one.

    Epochs are 1-based; improvement means a strictly smaller loss, so ties
    keep the earlier epoch as best.
    """
    if len(val_losses) == 0:
        raise ContractError("early_stop_decision needs a non-empty history")
    best_epoch, best = 1, val_losses[0]
    for k, v in enumerate(val_losses[1:], start=2):
        if v < best:
            best, best_epoch = v, k
    current = len(val_losses)
    return StopDecision(current - best_epoch >= patience, best_epoch)


def batched_predict(net, dynamic, static, batch_size=512):
    """Raw outputs in fixed-size chunks (chunking fixed => results reproducible)."""
    out = np.empty(len(dynamic))
    for start in range(0, len(dynamic), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = net.forward(Tensor(dynamic[sl]), Tensor(static[sl])).data
    return out


def evaluate_loss(net, dynamic, static, y, batch_size=512):
    pred = batched_predict(net, dynamic, static, batch_size)
    return float(np.mean(np.abs(pred - y)))


def train_loop(net, dataset, config=TrainConfig(), on_epoch=None):
    """Train ``net`` in place and return ``(net, history)``.

    The train split is reshuffled every epoch from ``config.seed``. The
    reported training loss is the sample-weighted mean of the batch losses
    seen during the epoch. Validation loss is a full pass over the
    validation split. On return ``net`` holds the parameters of the epoch
    with the lowest validation loss. Normalization statistics are fitted on
    the train split unless ``net.norm`` is already set.
    """
    tr = dataset.indices("train")
    va = dataset.indices("validation")
    if len(tr) == 0 or len(va) == 0:
        raise ContractError("train_loop needs non-empty train and validation splits")
    if net.norm is None:
        net.norm = fit_normalizer(dataset)
    static, dynamic = normalize_arrays(dataset.static, dataset.dynamic, net.norm)
    y = dataset.yields
    d_val, s_val, y_val = dynamic[va], static[va], y[va]

    params = net.parameters()
    state = AdamState.for_params(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best_params = [p.data.copy() for p in params]
    best_loss = np.inf
    history = []
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(tr)
        total = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                with Tape() as tape:
                    pred = net.forward(Tensor(dynamic[idx]), Tensor(static[idx]))
                    loss = mae_loss(pred, Tensor(y[idx]))
                backprop(tape, loss)
                adam_step(state, params, [p.grad for p in params])
            except NumericError as exc:
                _restore(params, best_params)
                raise TrainingDiverged(str(exc), epoch, b, net) from exc
            finally:
                for p in params:
                    p.grad = None
            total += float(loss.data) * len(idx)
        train_loss = total / len(tr)
        try:
            val_loss = evaluate_loss(net, d_val, s_val, y_val, config.eval_batch_size)
        except NumericError as exc:
            _restore(params, best_params)
            raise TrainingDiverged(str(exc), epoch, -1, net) from exc
        if not np.isfinite(val_loss):
            _restore(params, best_params)
            raise TrainingDiverged("non-finite validation loss", epoch, -1, net)
        entry = EpochLog(epoch, train_loss, val_loss, time.perf_counter() - t0, config.batch_size)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        logger.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, train_loss, val_loss, entry.seconds)
        if val_loss < best_loss:
            best_loss = val_loss
            for dst, p in zip(best_params, params):
                np.copyto(dst, p.data)
        if early_stop_decision([h.val_loss for h in history], config.patience).stop:
            break
    _restore(params, best_params)
    return net, history


def _restore(params, snapshot):
    for p, saved in zip(params, snapshot):
        np.copyto(p.data, saved)


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for h in history:
            w.writerow([h.epoch, repr(h.train_loss), repr(h.val_loss), f"{h.seconds:.3f}"])
