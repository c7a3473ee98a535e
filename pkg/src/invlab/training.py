"""Alternating adversarial training with Adam and early stopping."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model
from . import nncore as nn
from .nncore import Mode

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_L_c", "train_L_a", "val_L_c", "val_L_a",
                   "val_acc_c", "val_acc_a")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    batch_size: int = 40
    max_epochs: int = 500
    patience: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
              direction="descent"):
    """One bias-corrected Adam update of ``params`` (a name -> array dict) in place.

    ``direction="ascent"`` is implemented as descent on the negated gradient.
    """
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if direction == "ascent":
            g = -g
        dt = p.dtype.type
        m = dt(beta1) * state.m[k] + dt(1 - beta1) * g
        v = dt(beta2) * state.v[k] + dt(1 - beta2) * (g * g)
        state.m[k], state.v[k] = m, v
        params[k] = p - dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))
    return params, state


class EarlyStopping:
    """Tracks the minimum of a monitored value; epochs are numbered from 1."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value):
        """Record one epoch; True when it set a new minimum."""
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch = value, self.epoch
            return True
        return False

    @property
    def should_stop(self):
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    best_epoch: int = 0

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in HISTORY_COLUMNS[1:]])


@dataclass
class Checkpoint:
    net: model.NetworkParams
    epoch: int
    config: TrainConfig

    def save(self, path):
        return model.save_checkpoint(self.net, path,
                                     extra={"epoch": self.epoch, "config": asdict(self.config)})


def _batch_arrays(trials, idx, spec):
    X = trials.X[idx][:, None].astype(np.float32, copy=False)
    ys = nn.one_hot(trials.l_s[idx], spec.n_classes)
    ym = nn.one_hot(trials.l_m[idx], spec.n_nuisance)
    return X, ys, ym


def _accuracy(probs, labels):
    return float(np.mean(model.decide(probs) == labels))


def train_adversarial(train_set, val_set, net, config, update_adversary=True, on_step=None):
    """Fit ``net`` by alternating adversary and encoder/classifier updates.

    Per minibatch a single train-mode encoder pass feeds both heads. Step A
    moves the adversary down its own (unweighted) cross-entropy with the
    encoder and classifier frozen; step B then moves encoder and classifier
    down ``L_c - lam * L_a`` evaluated with the updated adversary.

    ``on_step(kind, epoch, batch, net)`` is called after each step, kind
    being ``"A"`` or ``"B"``. Returns ``(Checkpoint, TrainHistory)`` where
    the checkpoint is the epoch with the lowest validation classifier loss.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    net = net.copy()
    spec, lam = net.spec, config.lam
    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    enc_clf_names = model.ENCODER + model.CLASSIFIER
    state_b = AdamState.zeros_like({k: net.weights[k] for k in enc_clf_names})
    state_a = AdamState.zeros_like(net.group("adversary"))
    adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    Xv, ysv, ymv = _batch_arrays(val_set, np.arange(len(val_set)), spec)
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()
    best = None
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        batches = [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]
        batches = [b for b in batches if len(b) >= 2]
        sum_c = sum_a = 0.0
        for bi, idx in enumerate(batches):
            X, ys, ym = _batch_arrays(train_set, idx, spec)
            losses = model.forward_losses(X, ys, ym, net, lam, Mode.TRAIN, dropout_rng)
            if not (np.isfinite(losses.L_c) and np.isfinite(losses.L_a)):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            sum_c += losses.L_c * len(idx)
            sum_a += losses.L_a * len(idx)

            if update_adversary:
                # descent on the adversary cross-entropy == ascent on its log-likelihood
                adv = net.group("adversary")
                adam_step(adv, model.adversary_gradients(losses), state_a, **adam)
                net.weights.update(adv)
                model.refresh_adversary(losses, net)
                if on_step:
                    on_step("A", epoch, bi, net)

            grads = model.combined_gradients(losses)
            main = {k: net.weights[k] for k in enc_clf_names}
            adam_step(main, grads, state_b, **adam)
            net.weights.update(main)
            if on_step:
                on_step("B", epoch, bi, net)

        val = model.forward_losses(Xv, ysv, ymv, net, lam, Mode.INFER)
        if not np.isfinite(val.L_c):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        history.rows.append({
            "epoch": epoch, "train_L_c": sum_c / n, "train_L_a": sum_a / n,
            "val_L_c": val.L_c, "val_L_a": val.L_a,
            "val_acc_c": _accuracy(val.probs_c, val_set.l_s),
            "val_acc_a": _accuracy(val.probs_a, val_set.l_m),
        })
        if stopper.update(val.L_c):
            best = Checkpoint(net.copy(), epoch, config)
        log.debug("epoch %d val L_c %.4f best %d", epoch, val.L_c, stopper.best_epoch)
        if stopper.should_stop:
            break

    history.best_epoch = stopper.best_epoch
    return best, history


def confusion(true, pred, k):
    m = np.zeros((k, k), dtype=int)
    np.add.at(m, (true, pred), 1)
    return m


def evaluate(net, test_set):
    """Infer-mode accuracies and confusion matrices (rows = true label)."""
    if isinstance(net, Checkpoint):
        net = net.net
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    X = test_set.X[:, None].astype(np.float32, copy=False)
    z, _ = model.encode(X, net, Mode.INFER)
    pc = model.decide(model.classify(z, net))
    pa = model.decide(model.adversary_predict(z, net))
    cm_c = confusion(test_set.l_s, pc, net.spec.n_classes)
    cm_a = confusion(test_set.l_m, pa, net.spec.n_nuisance)
    return {
        "classifier_accuracy": float(np.trace(cm_c) / cm_c.sum()),
        "adversary_accuracy": float(np.trace(cm_a) / cm_a.sum()),
        "confusion_3x3": cm_c,
        "confusion_2x2": cm_a,
    }
