"""Adam training of the embedding network, one instance per step."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import ValidationError, one_hot
from .inference import kmeans
from .losses import get_loss
from .metrics import error_rate, evaluate
from .network import (
    NetworkConfig,
    NetworkParams,
    backward,
    embed,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: str = "mimi"
    learning_rate: float = 1e-3
    epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    label_fraction: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    normalize_loss: bool = False
    val_restarts: int = 5

    def __post_init__(self):
        get_loss(self.loss)
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0 < self.label_fraction <= 1:
            raise ValidationError("label_fraction must be in (0, 1]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def _check_finite(params, grads):
    if np.all(np.isfinite(grads.flat)):
        return
    for name, arr in zip(params.names(), grads.arrays):
        if not np.all(np.isfinite(arr)):
            raise TrainingError(f"non-finite gradient in {name}")


def adam_step(params, grads, state, config):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    g = grads.flat if isinstance(grads, NetworkParams) else np.asarray(grads)
    if g.shape != params.flat.shape:
        raise ValidationError("gradient shape does not match parameters")
    if isinstance(grads, NetworkParams):
        _check_finite(params, grads)
    elif not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    params.flat -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


def label_mask(labels, fraction, seed):
    """Stratified labeled-point mask keeping at least two points per cluster."""
    labels = np.asarray(labels)
    n = labels.size
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    if np.any(sizes < 2):
        raise ValidationError("every cluster needs at least two points to subsample")
    if fraction >= 1.0:
        return np.ones(n, dtype=bool)
    if not fraction > 0:
        raise ValidationError("fraction must be in (0, 1]")
    # largest-remainder allocation of round(fraction * N) across clusters
    target = int(round(fraction * n))
    quota = fraction * sizes
    take = np.floor(quota).astype(int)
    extra = target - take.sum()
    if extra > 0:
        order = np.argsort(-(quota - take), kind="stable")
        take[order[:extra]] += 1
    take = np.clip(take, 2, sizes)
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        mask[rng.choice(idx, size=take[c], replace=False)] = True
    return mask


def subsample_labels(instance, fraction, seed):
    """Copy of ``instance`` with a seeded labeled-point mask in ``labeled``."""
    mask = label_mask(instance.labels, fraction, seed)
    return replace(instance, meta=dict(instance.meta), labeled=mask)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_error"])
        for r in self.records:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]),
                        repr(r["val_error"])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                     "val_loss": float(r["val_loss"]), "val_error": float(r["val_error"])}
                    for r in rows])


def loss_and_grad(z, instance, loss_fn, mask=None, normalize=False):
    """Loss on labeled columns; the gradient is zero on unlabeled ones."""
    y = one_hot(instance.labels)
    if mask is None or mask.all():
        return loss_fn(z, y, normalize=normalize)
    sub_y = y[:, mask]
    keep = sub_y.sum(axis=1) > 0
    ev = loss_fn(z[:, mask], sub_y[keep], normalize=normalize)
    grad = np.zeros_like(z)
    grad[:, mask] = ev.grad
    ev.grad = grad
    return ev


def evaluate_instance(params, instance, restarts=5, seed=0, k=None):
    z = embed(instance.points, params)
    k = instance.n_clusters if k is None else k
    result = kmeans(z, k, restarts=restarts, seed=seed)
    return result.assignments, z


def validate(params, instances, train_config):
    if not instances:
        return float("nan"), float("nan")
    loss_fn = get_loss(train_config.loss)
    losses, errors = [], []
    for i, inst in enumerate(instances):
        z = embed(inst.points, params)
        try:
            losses.append(loss_and_grad(z, inst, loss_fn,
                                        normalize=train_config.normalize_loss).value)
        except ValidationError:
            pass
        res = kmeans(z, inst.n_clusters, restarts=train_config.val_restarts,
                     seed=[train_config.seed, i])
        errors.append(error_rate(res.assignments, inst.labels))
    val_loss = float(np.mean(losses)) if losses else float("nan")
    return val_loss, float(np.mean(errors))


def train(dataset, net_config, train_config, val_dataset=None, checkpoint_dir=None,
          resume_from=None, callback=None):
    """Train on every instance of ``dataset`` for ``train_config.epochs`` epochs.

    Each epoch visits the instances in a seeded random order and takes one
    Adam step per instance. With ``resume_from`` (a checkpoint written by this
    function) training continues from the stored epoch and optimizer state.
    Returns ``(params, TrainLog)``.
    """
    instances = list(dataset)
    if not instances:
        raise TrainingError("empty training set")
    val_instances = list(val_dataset) if val_dataset is not None else []
    for inst in instances + val_instances:
        if inst.dim != net_config.input_dim:
            raise ValidationError(
                f"instance {inst.name!r} has D={inst.dim}, network expects {net_config.input_dim}")
    loss_fn = get_loss(train_config.loss)
    masks = []
    for i, inst in enumerate(instances):
        if inst.labeled is not None:
            masks.append(inst.labeled)
        elif train_config.label_fraction < 1.0:
            masks.append(label_mask(inst.labels, train_config.label_fraction,
                                    [train_config.seed, i]))
        else:
            masks.append(None)

    trainlog = TrainLog()
    start_epoch = 0
    if resume_from is not None:
        params, header, blobs = load_checkpoint(resume_from)
        if params.config != net_config:
            raise ValidationError("checkpoint network config differs from the requested one")
        state = AdamState(blobs["adam_m"], blobs["adam_v"], header["adam_t"])
        start_epoch = header["epoch"]
        extra = header.get("extra", {})
        if "log" in extra:
            trainlog = TrainLog.from_csv(extra["log"])
    else:
        params = init_params(net_config)
        state = AdamState.zeros(params)

    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, train_config.epochs):
        tic = time.perf_counter()
        order = np.random.default_rng([train_config.seed, epoch]).permutation(len(instances))
        losses = []
        for idx in order:
            inst = instances[idx]
            z, tape = forward(inst.points, params)
            try:
                ev = loss_and_grad(z, inst, loss_fn, masks[idx], train_config.normalize_loss)
            except ValidationError as exc:
                log.warning("skipping instance %s: %s", inst.name, exc)
                continue
            grads, _ = backward(tape, params, ev.grad)
            adam_step(params, grads, state, train_config)
            losses.append(ev.value)
        if not losses:
            raise TrainingError(f"every instance was skipped in epoch {epoch + 1}")
        val_loss, val_err = validate(params, val_instances, train_config)
        trainlog.append(epoch=epoch + 1, train_loss=float(np.mean(losses)),
                        val_loss=val_loss, val_error=val_err,
                        wall=time.perf_counter() - tic)
        log.info("epoch %d train_loss %.6g val_loss %.6g val_error %.4f",
                 epoch + 1, trainlog.records[-1]["train_loss"], val_loss, val_err)
        if callback is not None:
            callback(epoch + 1, params, state, trainlog)
        if checkpoint_dir is not None:
            last = epoch + 1 == train_config.epochs
            every = train_config.checkpoint_every
            if last or (every and (epoch + 1) % every == 0):
                save_checkpoint(checkpoint_dir / f"epoch_{epoch + 1:04d}.ckpt", params,
                                epoch=epoch + 1, seed=train_config.seed,
                                adam_state=state, extra={"log": trainlog.to_csv(),
                                                         "train": train_config.to_dict()})
    return params, trainlog


def loocv(dataset, net_config, train_config, restarts=5):
    """Leave-one-out: train on all but one instance, evaluate on the held-out one.

    Returns ``{name: MetricReport}`` in dataset order.
    """
    instances = list(dataset)
    if len(instances) < 2:
        raise TrainingError("leave-one-out needs at least two instances")
    reports = {}
    for i, held in enumerate(instances):
        rest = instances[:i] + instances[i + 1:]
        params, _ = train(rest, net_config, train_config)
        pred, _ = evaluate_instance(params, held, restarts=restarts, seed=[train_config.seed, i])
        reports[held.name] = evaluate(pred, held.labels)
    return reports
