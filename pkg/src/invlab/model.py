"""Encoder, classifier and adversary heads for 14x100 multichannel trials."""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nncore as nn
from .nncore import Mode


@dataclass(frozen=True)
class ArchSpec:
    n_channels: int = 14
    n_samples: int = 100
    temporal_filters: int = 8
    temporal_kernel: int = 75
    depth_multiplier: int = 2
    separable_filters: int = 16
    separable_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    latent_dim: int = 48
    n_classes: int = 3
    n_nuisance: int = 2
    dropout_p: float = 0.5

    @property
    def depth_maps(self):
        return self.temporal_filters * self.depth_multiplier

    def validate(self):
        t = (self.n_samples // self.pool1) // self.pool2
        expected = self.separable_filters * t
        if self.latent_dim != expected:
            raise ValueError(
                f"inconsistent ArchSpec: latent_dim ({self.latent_dim}) != "
                f"separable_filters * floor(floor(n_samples/pool1)/pool2) "
                f"= {self.separable_filters}*{t} = {expected}")
        for name in ("n_channels", "n_samples", "temporal_filters", "temporal_kernel",
                     "depth_multiplier", "separable_filters", "separable_kernel",
                     "pool1", "pool2", "n_classes", "n_nuisance"):
            if getattr(self, name) < 1:
                raise ValueError(f"inconsistent ArchSpec: {name} must be >= 1")
        if t < 1:
            raise ValueError("inconsistent ArchSpec: pooling leaves no time samples")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("inconsistent ArchSpec: dropout_p must lie in [0, 1)")


ENCODER = ("conv1.w", "bn1.gamma", "bn1.beta", "depth.w", "bn2.gamma", "bn2.beta",
           "sep.depth", "sep.point", "bn3.gamma", "bn3.beta")
CLASSIFIER = ("clf.w", "clf.b")
ADVERSARY = ("adv.w", "adv.b")
GROUPS = {"encoder": ENCODER, "classifier": CLASSIFIER, "adversary": ADVERSARY}

# Layer rows: (row name, parameter names)
LAYER_ROWS = (
    ("conv2d", ("conv1.w",)),
    ("batchnorm1", ("bn1.gamma", "bn1.beta")),
    ("depthwise_conv2d", ("depth.w",)),
    ("batchnorm2", ("bn2.gamma", "bn2.beta")),
    ("separable_conv2d", ("sep.depth", "sep.point")),
    ("batchnorm3", ("bn3.gamma", "bn3.beta")),
    ("classifier", CLASSIFIER),
    ("adversary", ADVERSARY),
)
BN_LAYERS = ("bn1", "bn2", "bn3")


@dataclass
class NetworkParams:
    """Trainable arrays by name plus batch-norm running statistics."""

    spec: ArchSpec
    weights: dict
    bn_state: dict
    seed: int = 0

    def group(self, name):
        return {k: self.weights[k] for k in GROUPS[name]}

    def copy(self):
        return NetworkParams(
            self.spec,
            {k: v.copy() for k, v in self.weights.items()},
            {k: {s: a.copy() for s, a in v.items()} for k, v in self.bn_state.items()},
            self.seed)

    def astype(self, dtype):
        out = self.copy()
        out.weights = {k: v.astype(dtype) for k, v in out.weights.items()}
        out.bn_state = {k: {s: a.astype(dtype) for s, a in v.items()}
                        for k, v in out.bn_state.items()}
        return out

    def digest(self, group=None):
        """SHA-1 over the raw bytes of one parameter group (or all weights)."""
        names = GROUPS[group] if group else sorted(self.weights)
        h = hashlib.sha1()
        for k in names:
            h.update(np.ascontiguousarray(self.weights[k]).tobytes())
        return h.hexdigest()


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_network(spec=None, seed=0, zero_heads=False, dtype=np.float32):
    spec = spec or ArchSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    f1, k1, d = spec.temporal_filters, spec.temporal_kernel, spec.depth_multiplier
    c, f2, ks = spec.n_channels, spec.depth_maps, spec.separable_kernel
    fs = spec.separable_filters
    w = {
        "conv1.w": _glorot(rng, (f1, 1, k1), k1, f1 * k1, dtype),
        "depth.w": _glorot(rng, (f1, d, c, 1), c, d * c, dtype),
        "sep.depth": _glorot(rng, (f2, 1, ks), ks, ks, dtype),
        "sep.point": _glorot(rng, (fs, f2), f2, fs, dtype),
    }
    for name, n in (("bn1", f1), ("bn2", f2), ("bn3", fs)):
        w[f"{name}.gamma"] = np.ones(n, dtype=dtype)
        w[f"{name}.beta"] = np.zeros(n, dtype=dtype)
    for head, k in (("clf", spec.n_classes), ("adv", spec.n_nuisance)):
        if zero_heads:
            w[f"{head}.w"] = np.zeros((spec.latent_dim, k), dtype=dtype)
        else:
            w[f"{head}.w"] = _glorot(rng, (spec.latent_dim, k), spec.latent_dim, k, dtype)
        w[f"{head}.b"] = np.zeros(k, dtype=dtype)
    bn_state = {name: {"mean": np.zeros(n, dtype=dtype), "var": np.ones(n, dtype=dtype)}
                for name, n in (("bn1", f1), ("bn2", f2), ("bn3", fs))}
    return NetworkParams(spec, w, bn_state, seed)


def count_parameters(net):
    """Per-layer trainable counts in architecture order, and their total."""
    rows = [(row, int(sum(net.weights[k].size for k in names)))
            for row, names in LAYER_ROWS]
    return rows, sum(n for _, n in rows)


def expected_parameter_count(spec):
    f1, k, d, c = spec.temporal_filters, spec.temporal_kernel, spec.depth_multiplier, spec.n_channels
    f, ks, fo = spec.depth_maps, spec.separable_kernel, spec.separable_filters
    z = spec.latent_dim
    return (f1 * k + 2 * f1 + f1 * d * c + 2 * f1 * d + (f * ks + fo * f) + 2 * fo
            + (z * spec.n_classes + spec.n_classes) + (z * spec.n_nuisance + spec.n_nuisance))


# ---------------------------------------------------------------------------
# forward / backward


def encode(X, net, mode=Mode.INFER, rng=None, update_state=True):
    """Map trials (B, 1, C, T) to latents (B, latent_dim).

    Returns ``(z, cache)``; ``cache["shapes"]`` records every intermediate
    per-trial output shape.
    """
    spec, w = net.spec, net.weights
    expected = (1, spec.n_channels, spec.n_samples)
    if X.ndim != 4 or X.shape[1:] != expected:
        raise nn.ShapeError(f"encoder input must be (B, {expected}), got {X.shape}")
    p = spec.dropout_p
    caches, shapes = [], []

    h, c = nn.conv2d_temporal_forward(X, w["conv1.w"]); caches.append(c)
    h, c = nn.batchnorm_forward(h, w["bn1.gamma"], w["bn1.beta"], net.bn_state["bn1"],
                                mode, update_state); caches.append(c)
    h, c = nn.elu_forward(h); caches.append(c); shapes.append(h.shape[1:])
    h, c = nn.depthwise_conv2d_forward(h, w["depth.w"]); caches.append(c)
    h, c = nn.batchnorm_forward(h, w["bn2.gamma"], w["bn2.beta"], net.bn_state["bn2"],
                                mode, update_state); caches.append(c)
    h, c = nn.elu_forward(h); caches.append(c); shapes.append(h.shape[1:])
    h, c = nn.avg_pool_forward(h, spec.pool1); caches.append(c)
    h, c = nn.dropout_forward(h, p, mode, rng); caches.append(c); shapes.append(h.shape[1:])
    h, c = nn.separable_conv2d_forward(h, w["sep.depth"], w["sep.point"]); caches.append(c)
    h, c = nn.batchnorm_forward(h, w["bn3.gamma"], w["bn3.beta"], net.bn_state["bn3"],
                                mode, update_state); caches.append(c)
    h, c = nn.elu_forward(h); caches.append(c); shapes.append(h.shape[1:])
    h, c = nn.avg_pool_forward(h, spec.pool2); caches.append(c)
    h, c = nn.dropout_forward(h, p, mode, rng); caches.append(c); shapes.append(h.shape[1:])
    pre_flatten = h.shape
    z = h.reshape(h.shape[0], -1)
    shapes.append(z.shape[1:])
    return z, {"layers": caches, "shapes": shapes, "pre_flatten": pre_flatten}


def encode_backward(dz, cache):
    """Gradients of a scalar loss w.r.t. every encoder parameter given dL/dz."""
    (conv1, bn1, elu1, depth, bn2, elu2, pool1, drop1,
     sep, bn3, elu3, pool2, drop2) = cache["layers"]
    g = {}
    d = dz.reshape(cache["pre_flatten"])
    d = nn.dropout_backward(d, drop2)
    d = nn.avg_pool_backward(d, pool2)
    d = nn.elu_backward(d, elu3)
    d, g["bn3.gamma"], g["bn3.beta"] = nn.batchnorm_backward(d, bn3)
    d, g["sep.depth"], g["sep.point"] = nn.separable_conv2d_backward(d, sep)
    d = nn.dropout_backward(d, drop1)
    d = nn.avg_pool_backward(d, pool1)
    d = nn.elu_backward(d, elu2)
    d, g["bn2.gamma"], g["bn2.beta"] = nn.batchnorm_backward(d, bn2)
    d, g["depth.w"] = nn.depthwise_conv2d_backward(d, depth)
    d = nn.elu_backward(d, elu1)
    d, g["bn1.gamma"], g["bn1.beta"] = nn.batchnorm_backward(d, bn1)
    _, g["conv1.w"] = nn.conv2d_temporal_backward(d, conv1, need_input_grad=False)
    return g


def _head_logits(z, net, head):
    w, b = net.weights[f"{head}.w"], net.weights[f"{head}.b"]
    if z.ndim != 2 or z.shape[1] != w.shape[0]:
        raise nn.ShapeError(f"latent must be (B, {w.shape[0]}), got {z.shape}")
    return nn.dense_forward(z, w, b)


def classify(z, net):
    return nn.softmax(_head_logits(z, net, "clf")[0])


def adversary_predict(z, net):
    return nn.softmax(_head_logits(z, net, "adv")[0])


def decide(probs):
    # np.argmax returns the first maximum: lowest-index tie-break
    return np.argmax(probs, axis=1)


@dataclass
class Losses:
    L_c: float
    L_a: float
    combined: float
    probs_c: np.ndarray
    probs_a: np.ndarray
    cache: dict = field(repr=False)


def forward_losses(X, ys, ym, net, lam, mode=Mode.TRAIN, rng=None, update_state=True):
    """Both head losses from one shared encoder pass.

    ``ys``/``ym`` are one-hot texture and movement labels. The combined
    objective minimized by the encoder and classifier is ``L_c - lam * L_a``.
    """
    if lam < 0:
        raise ValueError(f"adversarial weight must be >= 0, got {lam}")
    z, enc_cache = encode(X, net, mode, rng, update_state)
    logits_c, clf_cache = _head_logits(z, net, "clf")
    logits_a, adv_cache = _head_logits(z, net, "adv")
    L_c, probs_c, dlog_c = nn.softmax_cross_entropy(logits_c, ys)
    L_a, probs_a, dlog_a = nn.softmax_cross_entropy(logits_a, ym)
    cache = {"enc": enc_cache, "clf": clf_cache, "adv": adv_cache, "z": z,
             "ym": ym, "dlog_c": dlog_c, "dlog_a": dlog_a, "lam": lam}
    return Losses(L_c, L_a, L_c - lam * L_a, probs_c, probs_a, cache)


def refresh_adversary(losses, net):
    """Re-evaluate the adversary head on the cached latent after its weights moved."""
    cache = losses.cache
    logits_a, cache["adv"] = _head_logits(cache["z"], net, "adv")
    L_a, losses.probs_a, cache["dlog_a"] = nn.softmax_cross_entropy(logits_a, cache["ym"])
    losses.L_a = L_a
    losses.combined = losses.L_c - cache["lam"] * L_a
    return losses


def adversary_gradients(losses):
    """dL_a / d(adversary params): the direction step A descends on."""
    _, dw, db = nn.dense_backward(losses.cache["dlog_a"], losses.cache["adv"])
    return {"adv.w": dw, "adv.b": db}


def combined_gradients(losses):
    """d(L_c - lam*L_a) w.r.t. encoder and classifier parameters."""
    cache = losses.cache
    dz, dw, db = nn.dense_backward(cache["dlog_c"], cache["clf"])
    lam = cache["lam"]
    if lam != 0:
        dz_a, _, _ = nn.dense_backward(cache["dlog_a"], cache["adv"])
        dz = dz - dz.dtype.type(lam) * dz_a
    g = encode_backward(dz, cache["enc"])
    g["clf.w"], g["clf.b"] = dw, db
    return g


# ---------------------------------------------------------------------------
# checkpoint file: uint32 LE header length | JSON header | float32 LE payload

CHECKPOINT_VERSION = 1


def save_checkpoint(net, path, extra=None):
    arrays = [(k, net.weights[k]) for k in sorted(net.weights)]
    arrays += [(f"{layer}.running_{s}", net.bn_state[layer][s])
               for layer in BN_LAYERS for s in ("mean", "var")]
    entries, offset = [], 0
    for name, a in arrays:
        nbytes = a.size * 4
        entries.append({"name": name, "shape": list(a.shape), "offset": offset,
                        "nbytes": nbytes, "trainable": ".running_" not in name})
        offset += nbytes
    header = {"version": CHECKPOINT_VERSION, "dtype": "<f4", "arch": asdict(net.spec),
              "seed": net.seed, "layers": entries}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return path


def load_checkpoint(path):
    """Returns ``(net, header)``."""
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4:4 + n])
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = raw[4 + n:]
    spec = ArchSpec(**header["arch"])
    net = build_network(spec, header["seed"])
    for e in header["layers"]:
        a = np.frombuffer(payload, dtype="<f4", count=e["nbytes"] // 4,
                          offset=e["offset"]).reshape(e["shape"]).astype(np.float32)
        name = e["name"]
        if ".running_" in name:
            layer, stat = name.split(".running_")
            net.bn_state[layer][stat] = a
        else:
            net.weights[name] = a
    return net, header
