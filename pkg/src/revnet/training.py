"""Per-batch training procedure, SGD schedule, epoch loop, and evaluation.

Each batch runs up to six blocks in a fixed order: feed-forward,
feed-backward (reconstruction), latent generation from transformed
likelihoods, one-step feed-forward of the generated latents, loss
computing, and a single parameter update. Gradients from all enabled
loss terms are summed into that one update. With reconstruction and
generation disabled the step degenerates to plain supervised SGD.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericError
from .layers import sgd_update
from .losses import LossReport, cross_entropy, one_hot, reconstruction_mse
from .network import TransformConfig, transform_likelihood

METRICS_COLUMNS = [
    "epoch", "step", "lr", "loss_total", "loss_cls", "loss_rec",
    "loss_gen", "train_err", "test_err", "seconds",
]


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple = (20, 40, 60)
    lr_drop_factor: float = 0.1
    epochs: int = 1
    train_batch: int = 128
    eval_batch: int = 100
    enable_reverse_loss: bool = True
    enable_generation: bool = True
    transform: TransformConfig = field(default_factory=TransformConfig)
    seed: int = 0
    determinism: bool = False
    augment: bool = False
    w_cls: float = 1.0
    w_rec: float = 1.0
    w_gen: float = 1.0
    warmup_epochs: int = 0
    # gradient routing for the generated-latent term: full differentiation
    # through the tied reverse weights, or treat the latent as a fresh
    # training input (stop-gradient at alpha-bar)
    gen_stop_grad: bool = False
    # score the one-step output against the true label or against the
    # transformed likelihood as a soft target
    gen_target: str = "label"
    # global gradient-norm cap applied to the summed per-batch gradient;
    # 0 disables. The reverse path produces heavy-tailed gradient spikes
    # once outputs saturate (log-likelihoods hit the clamp floor), and a
    # single spike can destroy float32 weights.
    clip_grad_norm: float = 0.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0,1)")
        if self.train_batch < 1 or self.eval_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        drops = tuple(self.lr_drop_epochs)
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("lr_drop_epochs must be strictly increasing")
        self.lr_drop_epochs = drops
        if self.gen_target not in ("label", "transformed"):
            raise ConfigError("gen_target must be label|transformed")


def lr_at(epoch, cfg):
    """Piecewise-constant step schedule: lr0 scaled by lr_drop_factor once
    per drop epoch already reached."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    n = sum(1 for e in cfg.lr_drop_epochs if e <= epoch)
    return cfg.lr0 * cfg.lr_drop_factor ** n


def train_step(net, batch, cfg, rng, epoch=0):
    """One Algorithm-style step on (x, labels); applies the update in place
    and returns the pre-update LossReport plus the batch error count."""
    x, labels = batch
    target = one_hot(labels, net.layers[net.final_dense_idx].out_features, dtype=x.dtype)
    acc = net.new_grad_acc()

    # feed-forward
    o, _, trace = net.feed_forward(x)
    rep = LossReport(w_cls=cfg.w_cls, w_rec=cfg.w_rec, w_gen=cfg.w_gen)
    rep.cls, g_logits = cross_entropy(o, target)
    mis = int(np.sum(tensor.argmax_last(o) != labels))
    net.backward_from_logits(x.dtype.type(cfg.w_cls) * g_logits, trace, acc)

    # feed-backward: reconstruct the input from the output likelihood;
    # the resulting gradient flows through the tied reverse chain only
    # (o itself is treated as data here)
    if cfg.enable_reverse_loss:
        xbar, rcaches = net.feed_backward(o, trace=trace, want_caches=True)
        rep.rec, g_rec = reconstruction_mse(xbar, x)
        net.reverse_adjoint(x.dtype.type(cfg.w_rec) * g_rec, rcaches, acc)

    # latent generation and one-step feed-forward: the generated latent
    # should still classify as the annotated label (or, optionally, as
    # the transformed likelihood treated as a soft target)
    if cfg.enable_generation and epoch >= cfg.warmup_epochs:
        obar = transform_likelihood(o, cfg.transform, rng)
        alphabar, gcaches = net.generate_latent(obar, want_caches=True)
        ohat, tail_caches = net.one_step_forward(alphabar, want_caches=True)
        gen_target = target if cfg.gen_target == "label" else obar
        rep.gen, g_hat = cross_entropy(ohat, gen_target)
        g_alpha = net.one_step_adjoint(x.dtype.type(cfg.w_gen) * g_hat, tail_caches, acc)
        if not cfg.gen_stop_grad:
            net.reverse_adjoint(g_alpha, gcaches, acc, lo=net.final_dense_idx)

    if not np.isfinite(rep.total):
        raise NumericError(
            f"non-finite loss (cls={rep.cls} rec={rep.rec} gen={rep.gen}); aborting"
        )

    if cfg.clip_grad_norm > 0:
        total = 0.0
        for entry in acc:
            for g in entry.values():
                total += float(np.sum(np.square(g, dtype=np.float64)))
        total = np.sqrt(total)
        if total > cfg.clip_grad_norm:
            factor = x.dtype.type(cfg.clip_grad_norm / total)
            for entry in acc:
                for name in entry:
                    entry[name] = entry[name] * factor

    lr = lr_at(epoch, cfg)
    for i, layer in enumerate(net.layers):
        if layer.has_params and acc[i]:
            sgd_update(layer, acc[i], lr, cfg.momentum, cfg.weight_decay)
    return rep, mis


def confusion_counts(labels, preds, n_classes):
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def evaluate(net, images, labels, n_classes, batch_size=100):
    """Returns (error %, mean loss, per-class recall). Classes absent from
    the set get recall 0 by convention."""
    n = images.shape[0]
    if n == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    total_loss = 0.0
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for lo in range(0, n, batch_size):
        xb = images[lo:lo + batch_size]
        yb = labels[lo:lo + batch_size]
        o, _, _ = net.feed_forward(xb)
        loss, _ = cross_entropy(o, one_hot(yb, n_classes, dtype=o.dtype))
        total_loss += loss * xb.shape[0]
        conf += confusion_counts(yb, tensor.argmax_last(o), n_classes)
    correct = np.trace(conf)
    per_class = conf.sum(axis=1)
    recall = np.where(per_class > 0, np.diag(conf) / np.maximum(per_class, 1), 0.0)
    err = 100.0 * (n - correct) / n
    return float(err), total_loss / n, recall


@dataclass
class MetricsRow:
    epoch: int
    step: int
    lr: float
    report: LossReport
    train_err: float
    test_err: float = None
    seconds: float = 0.0

    def to_csv(self):
        te = "" if self.test_err is None else f"{self.test_err:.4f}"
        return [
            str(self.epoch), str(self.step), f"{self.lr:.8g}",
            f"{self.report.total:.8g}", f"{self.report.cls:.8g}",
            f"{self.report.rec:.8g}", f"{self.report.gen:.8g}",
            f"{self.train_err:.4f}", te, f"{self.seconds:.3f}",
        ]


def batch_order(n, batch_size, rng):
    idx = rng.permutation(n)
    return [idx[lo:lo + batch_size] for lo in range(0, n, batch_size)]


def run_experiment(net, train_images, train_labels, test_images, test_labels,
                   n_classes, cfg, out_dir=None, log=None, augment_fn=None,
                   epoch_hook=None):
    """Epoch loop: per-step metric rows, evaluation at each epoch end,
    checkpoints at every lr drop and at the end.

    Returns (rows, final_eval). out_dir, when given, receives metrics.csv
    and checkpoint files; log, when given, gets one text line per epoch;
    epoch_hook(epoch, net), when given, runs after each epoch's evaluation.
    """
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, transform_rng, augment_rng = (
        np.random.default_rng(s) for s in ss.spawn(3)
    )
    rows = []
    step = 0
    final_eval = None
    writer = None
    fh = None
    if out_dir is not None:
        fh = open(f"{out_dir}/metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
    try:
        for epoch in range(cfg.epochs):
            order = batch_order(train_images.shape[0], cfg.train_batch, shuffle_rng)
            for bi, idx in enumerate(order):
                t0 = time.perf_counter()
                xb = train_images[idx]
                yb = train_labels[idx]
                if cfg.augment and augment_fn is not None:
                    xb = augment_fn(xb, augment_rng)
                rep, mis = train_step(net, (xb, yb), cfg, transform_rng, epoch=epoch)
                seconds = 0.0 if cfg.determinism else time.perf_counter() - t0
                test_err = None
                if bi == len(order) - 1:
                    final_eval = evaluate(
                        net, test_images, test_labels, n_classes, cfg.eval_batch
                    )
                    test_err = final_eval[0]
                row = MetricsRow(
                    epoch, step, lr_at(epoch, cfg), rep,
                    100.0 * mis / xb.shape[0], test_err, seconds,
                )
                rows.append(row)
                if writer is not None:
                    writer.writerow(row.to_csv())
                step += 1
            if log is not None:
                log(f"epoch {epoch}: lr {lr_at(epoch, cfg):.8g} "
                    f"loss {rows[-1].report.total:.6g} test_err {final_eval[0]:.4f}%")
            if epoch_hook is not None:
                epoch_hook(epoch, net)
            if out_dir is not None and (epoch + 1) in cfg.lr_drop_epochs:
                save_checkpoint(f"{out_dir}/checkpoint-epoch{epoch + 1:03d}.rvnt",
                                net, extra={"epoch": epoch + 1, "step": step})
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/checkpoint-final.rvnt", net,
                        extra={"epoch": cfg.epochs, "step": step})
    return rows, final_eval
