"""Training loop: sample a batch, forward, image gradients, backward, SGD."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .nn import SGD, build_model, save_checkpoint
from .objective import (
    ObjectiveConfig,
    loss_and_gradient,
    regularizer_gradient,
    triplet_gradients,
)
from .triplets import sample_batch

log = logging.getLogger(__name__)


def beta_schedule(it, total, start=2.0, end=1000.0, shape="geometric"):
    """Relaxation sharpness at iteration ``it`` of ``total``; exact at both ends."""
    if shape not in ("geometric", "linear", "constant"):
        raise ValueError(f"unknown beta schedule shape {shape!r}")
    if not 0 <= it <= total:
        raise ValueError(f"iteration {it} outside [0, {total}]")
    if shape == "constant" or it == 0:
        return float(start)
    if it == total:
        return float(end)
    frac = it / total
    if shape == "geometric":
        return float(start * (end / start) ** frac)
    return float(start + (end - start) * frac)


@dataclass
class TrainConfig:
    iterations: int = 1000
    k_hat: int = 10
    o_hat: int = 20
    triplet_budget: int = 200_000
    negatives_per_pair: int | None = None
    lr: float = 0.01
    lr_decay: float = 0.5
    lr_decay_every: int | None = None  # None -> iterations // 4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lam: float = 0.001
    clamp: float | None = None
    normalize_margin: bool = True
    beta_start: float = 2.0
    beta_end: float = 1000.0
    beta_shape: str = "geometric"
    preset: str = "mlp"
    width: float = 1.0
    code_length: int = 16
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")

    def objective(self):
        return ObjectiveConfig(self.lam, self.clamp, self.normalize_margin)

    def lr_at(self, it):
        every = self.lr_decay_every or max(1, self.iterations // 4)
        return self.lr * self.lr_decay ** (it // every)

    def beta_at(self, it):
        return beta_schedule(it, max(self.iterations - 1, 1), self.beta_start, self.beta_end, self.beta_shape)


@dataclass
class IterationRecord:
    iter: int
    loss: float
    margin: float
    reg: float
    active_frac: float
    beta: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    FIELDS = ("iter", "loss", "margin", "reg", "active_frac", "beta", "lr")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for r in self.records:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(r).items()})

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([IterationRecord(int(r["iter"]), *(float(r[k]) for k in cls.FIELDS[1:])) for r in rows])


def per_image_parameter_gradient(model, images, out_grad):
    """Forward/backward one image at a time and sum, in image order."""
    total = None
    for j in range(len(images)):
        _, cache = model.forward(images[j:j + 1])
        g = model.backward(cache, out_grad[j:j + 1])
        total = g if total is None else [a + b for a, b in zip(total, g)]
    return total


def triplet_route_parameter_gradient(model, images, triplets, L, cfg):
    """Parameter gradient assembled triplet by triplet.

    Each active triplet's derivative is pushed through its three images
    separately, and the regularizer part image by image; nothing is
    aggregated at the output level first.  Slow; used to cross-check the
    image-based path.
    """
    outputs, _ = model.forward(images)
    blocks = triplet_gradients(outputs, triplets, cfg)
    total = [np.zeros_like(p) for p in model.params]
    caches = [model.forward(images[j:j + 1])[1] for j in range(len(images))]
    for t, blk in zip(np.asarray(triplets).reshape(-1, 3), blocks):
        if not blk.any():
            continue
        for role in range(3):
            g = model.backward(caches[t[role]], blk[role][None, :])
            for acc, gi in zip(total, g):
                acc += gi
    if cfg.lam:
        reg = cfg.lam * regularizer_gradient(outputs, L)
        for j in range(len(images)):
            g = model.backward(caches[j], reg[j:j + 1])
            for acc, gi in zip(total, g):
                acc += gi
    return total


def _check_finite(it, terms):
    for name in ("margin", "reg", "total"):
        if not np.isfinite(getattr(terms, name)):
            raise NumericError(f"iteration {it}: non-finite {name} term ({getattr(terms, name)})")


def train(config, dataset, model=None, callback=None):
    """Run ``config.iterations`` SGD steps on ``dataset``; returns (model, history)."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if model is None:
        model = build_model(config.preset, config.code_length, dataset.item_shape,
                            seed=config.seed, beta=config.beta_start, width=config.width)
    cfg = config.objective()
    opt = SGD(config.momentum, config.weight_decay)
    history = TrainHistory()
    for it in range(config.iterations):
        model.beta = config.beta_at(it)
        lr = config.lr_at(it)
        batch = sample_batch(dataset, config.k_hat, config.o_hat, config.triplet_budget,
                             seed=[config.seed, it], negatives_per_pair=config.negatives_per_pair)
        x = dataset.x[batch.image_ids]
        out, cache = model.forward(x)
        terms, out_grad = loss_and_gradient(out, batch.triplets, batch.L, cfg)
        _check_finite(it, terms)
        grads = model.backward(cache, out_grad)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError(f"iteration {it}: non-finite parameter gradient")
        opt.step(model.params, grads, lr)
        model.iteration = it + 1
        history.records.append(IterationRecord(it, terms.total, terms.margin, terms.reg,
                                               terms.active_frac, model.beta, lr))
        if it % 100 == 0:
            log.info("iter %d loss %.5f margin %.5f reg %.5f active %.3f beta %.2f",
                     it, terms.total, terms.margin, terms.reg, terms.active_frac, model.beta)
        if config.checkpoint_every and config.checkpoint_path and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, config.checkpoint_path)
        if callback is not None:
            callback(it, model, terms)
    return model, history
