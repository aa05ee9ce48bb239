"""Training loop: cross-entropy on softmax outputs, Adam, evaluation.

Runs are deterministic for a fixed (config, data, thread count): batch order
comes from per-epoch seeded shuffles, dropout masks are keyed by a global
step counter, and multi-threaded gradient shards are reduced in shard order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .data import prepare_batch
from .errors import DataError, NumericError
from .metrics import average_precision, roc_auc


def softmax_bce_loss(tape, probs, labels):
    """Mean negative log-likelihood of the true class.

    ``probs`` holds (B, 2) softmax rows; the picked entries are clipped away
    from zero before the log so a confidently wrong model produces a large
    finite loss instead of an infinity.
    """
    y = np.asarray(labels)
    if y.ndim != 1 or probs.value.shape != (y.size, 2):
        raise DataError(
            f"loss needs probs (B, 2) and labels (B,), got "
            f"{probs.value.shape} and {y.shape}"
        )
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    picked = ad.select_rows(tape, probs, y.astype(np.int64))
    log_p = ad.log(tape, ad.clip(tape, picked, 1e-12, 1.0))
    return ad.neg(tape, ad.mean_axis(tape, log_p, 0))


class Adam:
    """Adam with bias correction; the step count advances before correcting.

    Raises NumericError naming the offending parameter if a gradient goes
    non-finite, leaving all parameters untouched for that step.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p.name: np.zeros_like(p.value) for p in self.params}
        self._v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, grads):
        for p in self.params:
            if not np.isfinite(grads[p.name]).all():
                raise NumericError(f"non-finite gradient for {p.name}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = grads[p.name]
            m = self._m[p.name] = self.beta1 * self._m[p.name] + (1 - self.beta1) * g
            v = self._v[p.name] = self.beta2 * self._v[p.name] + (1 - self.beta2) * (
                g * g
            )
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainReport:
    """Per-epoch curves plus final held-out metrics."""

    epoch_losses: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    val_auc: list = field(default_factory=list)
    val_ap: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    test_auc: float = float("nan")
    test_ap: float = float("nan")


def predict_scores(model, table, cfg, samples, batch=256):
    """Positive-class probabilities in sample order, plus the labels."""
    scores = []
    labels = []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        inputs, y = prepare_batch(chunk, table, cfg)
        probs, _ = model.forward(inputs, mode="eval")
        scores.extend(probs.value[:, 1].tolist())
        labels.extend(y.tolist())
    return np.asarray(scores), np.asarray(labels, dtype=np.int64)


def evaluate(model, table, cfg, samples):
    """AUC, average precision and 0.5-threshold accuracy on ``samples``."""
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    scores, labels = predict_scores(model, table, cfg, samples)
    return {
        "auc": roc_auc(labels, scores),
        "ap": average_precision(labels, scores),
        "accuracy": float(((scores >= 0.5).astype(np.int64) == labels).mean()),
    }


def _shard(chunk, threads):
    """Split a batch into up to ``threads`` contiguous, non-empty shards."""
    n = len(chunk)
    k = min(threads, n)
    bounds = [round(i * n / k) for i in range(k + 1)]
    return [chunk[bounds[i] : bounds[i + 1]] for i in range(k)]


def _grad_step(model, table, cfg, chunk, step):
    inputs, labels = prepare_batch(chunk, table, cfg)
    probs, tape = model.forward(inputs, mode="train", step=step)
    loss = softmax_bce_loss(tape, probs, labels)
    grads = ad.backward(tape, loss, params=model.params)
    return float(loss.value), grads


def train_loop(
    model,
    table,
    cfg,
    train_samples,
    val_samples,
    test_samples,
    threads=1,
    checkpoint_path=None,
    log=None,
):
    """Run the full optimization and return a TrainReport.

    Each epoch reshuffles the training set with its own seeded stream, walks
    it in batches of ``cfg.batch``, and evaluates on the validation split.
    With ``threads > 1`` every batch fans out into contiguous shards whose
    gradients are averaged with weights n_i / B, so the reduced gradient
    equals the full-batch mean regardless of shard boundaries.
    """
    if not train_samples:
        raise DataError("training split is empty")
    if not val_samples:
        raise DataError("validation split is empty")
    if not test_samples:
        raise DataError("test split is empty")

    opt = Adam(model.params, lr=cfg.lr)
    report = TrainReport()
    say = log if log is not None else (lambda msg: None)
    step = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            tic = time.monotonic()
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, epoch])
            ).permutation(len(train_samples))
            shuffled = [train_samples[i] for i in order]

            loss_sum = 0.0
            seen = 0
            for start in range(0, len(shuffled), cfg.batch):
                chunk = shuffled[start : start + cfg.batch]
                if pool is None or len(chunk) < 2:
                    loss_value, grads = _grad_step(model, table, cfg, chunk, step)
                else:
                    shards = _shard(chunk, threads)
                    futures = [
                        pool.submit(_grad_step, model, table, cfg, s, step)
                        for s in shards
                    ]
                    results = [f.result() for f in futures]
                    loss_value = 0.0
                    grads = {p.name: np.zeros_like(p.value) for p in opt.params}
                    for shard, (shard_loss, shard_grads) in zip(shards, results):
                        w = len(shard) / len(chunk)
                        loss_value += w * shard_loss
                        for name in grads:
                            grads[name] += w * shard_grads[name]
                opt.step(grads)
                loss_sum += loss_value * len(chunk)
                seen += len(chunk)
                step += 1

            report.epoch_losses.append(loss_sum / seen)
            report.epoch_seconds.append(time.monotonic() - tic)
            val = evaluate(model, table, cfg, val_samples)
            report.val_auc.append(val["auc"])
            report.val_ap.append(val["ap"])
            say(
                f"epoch {epoch + 1}/{cfg.epochs}  "
                f"loss {report.epoch_losses[-1]:.4f}  "
                f"val_auc {val['auc']:.4f}  val_ap {val['ap']:.4f}  "
                f"({report.epoch_seconds[-1]:.1f}s)"
            )
    finally:
        if pool is not None:
            pool.shutdown()

    train_eval = evaluate(model, table, cfg, train_samples)
    test_eval = evaluate(model, table, cfg, test_samples)
    report.train_accuracy = train_eval["accuracy"]
    report.test_auc = test_eval["auc"]
    report.test_ap = test_eval["ap"]
    say(
        f"final  train_acc {report.train_accuracy:.4f}  "
        f"test_auc {report.test_auc:.4f}  test_ap {report.test_ap:.4f}"
    )

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.params, cfg)
        say(f"checkpoint written to {checkpoint_path}")
    return report
