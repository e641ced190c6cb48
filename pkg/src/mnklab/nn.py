"""A small convolutional network engine in numpy (float64).

Tensors are batch-first arrays (B, C, H, W). Convolutions are stride 1 with
zero padding, computed through an im2col matrix product. Hidden layers use
ReLU; the head is a 1x1 convolution to a single plane, read either as move
logits (policy network) or averaged and squashed to [0, 1] (value network).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL_SIZES = (1, 3, 5)


@dataclass
class ConvLayer:
    w: np.ndarray  # (out, in, p, q)
    b: np.ndarray  # (out,)
    pad: int

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.w.ndim != 4 or self.b.shape != (self.w.shape[0],):
            raise ValueError(f"bad layer shapes w{self.w.shape} b{self.b.shape}")
        if self.w.shape[2] not in KERNEL_SIZES or self.w.shape[3] not in KERNEL_SIZES:
            raise ValueError(f"kernel size must be one of {KERNEL_SIZES}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer weights must be finite")

    @classmethod
    def init(cls, n_in: int, n_out: int, size: int, rng: np.random.Generator, pad: int | None = None) -> "ConvLayer":
        s = 1.0 / np.sqrt(n_in * size * size)
        w = rng.uniform(-s, s, size=(n_out, n_in, size, size))
        b = rng.uniform(-s, s, size=n_out)
        return cls(w, b, size // 2 if pad is None else pad)

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @property
    def n_out(self) -> int:
        return self.w.shape[0]


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (B,C,H,W) input, got shape {x.shape}")
    return x, False


def _im2col(x: np.ndarray, p: int, q: int, pad: int) -> tuple[np.ndarray, tuple]:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (p, q), axis=(2, 3))  # B, C, Ho, Wo, p, q
    B, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * p * q)
    return cols, (B, C, Ho, Wo, xp.shape)


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """z[o, r, c] = sum over input channels and kernel offsets of w * x (zero padded) + b[o]."""
    xb, single = _as_batch(x)
    if xb.shape[1] != layer.n_in:
        raise ValueError(f"input has {xb.shape[1]} channels, layer expects {layer.n_in}")
    out, _ = _conv(xb, layer)
    return out[0] if single else out


def _conv(x: np.ndarray, layer: ConvLayer):
    O, C, p, q = layer.w.shape
    cols, (B, _, Ho, Wo, xp_shape) = _im2col(x, p, q, layer.pad)
    z = cols @ layer.w.reshape(O, -1).T + layer.b
    return z.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2), (cols, xp_shape, Ho, Wo)


def _conv_backward(dz: np.ndarray, layer: ConvLayer, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols, xp_shape, Ho, Wo = cache
    O, C, p, q = layer.w.shape
    d2 = dz.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = (d2.T @ cols).reshape(layer.w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ layer.w.reshape(O, -1)).reshape(-1, Ho, Wo, C, p, q)
    dxp = np.zeros(xp_shape)
    for i in range(p):
        for j in range(q):
            dxp[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    pad = layer.pad
    dx = dxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad] if pad else dxp
    return dx, dw, db


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0)


def softmax_masked(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over entries where ``mask`` is true (last axis); exactly 0 elsewhere."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax over an empty legal mask")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_masked(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.where(mask, np.exp(z - zmax), 0.0).sum(axis=-1, keepdims=True))
    return np.where(mask, logits - lse, -np.inf)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ------------------------------------------------------------------ networks

@dataclass
class ConvNet:
    """Hidden conv layers with ReLU, then a 1x1 head to one plane.

    ``kind`` is "policy" (head plane = move logits) or "value" (head plane
    averaged over the board, then a sigmoid).
    """

    layers: list[ConvLayer]
    kind: str = "policy"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("policy", "value"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        for i in range(1, len(self.layers)):
            if self.layers[i].n_in != self.layers[i - 1].n_out:
                raise ValueError(f"layer {i} expects {self.layers[i].n_in} channels, "
                                 f"layer {i - 1} produces {self.layers[i - 1].n_out}")
        head = self.layers[-1]
        if head.n_out != 1 or head.w.shape[2:] != (1, 1):
            raise ValueError("output head must be a 1x1 convolution to one channel")

    @classmethod
    def build(cls, in_channels: int, channels=(16, 16, 16), kernel: int = 3, first_kernel: int | None = None,
              kind: str = "policy", seed: int = 0) -> "ConvNet":
        rng = np.random.default_rng(seed)
        layers = []
        n_in = in_channels
        for i, c in enumerate(channels):
            size = first_kernel if (i == 0 and first_kernel) else kernel
            layers.append(ConvLayer.init(n_in, c, size, rng))
            n_in = c
        layers.append(ConvLayer.init(n_in, 1, 1, rng))
        meta = {"in_channels": in_channels, "channels": list(channels), "kernel": kernel,
                "first_kernel": first_kernel, "seed": seed}
        return cls(layers, kind, meta)

    @property
    def n_params(self) -> int:
        return sum(layer.w.size + layer.b.size for layer in self.layers)

    def forward(self, x: np.ndarray, keep: bool = False):
        """Head plane flattened to (B, H*W) for policy nets, (B,) pre-sigmoid for value nets."""
        h, _ = _as_batch(x)
        caches = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, cache = _conv(h, layer)
            caches.append((cache, z))
            h = z if i == last else relu(z)
        out = h.reshape(h.shape[0], -1)
        if self.kind == "value":
            out = out.mean(axis=1)
        return (out, caches) if keep else out

    def predict(self, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        out = self.forward(x)
        if self.kind == "value":
            return sigmoid(out)
        return softmax_masked(out, mask)

    def loss(self, x: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None,
             weight: np.ndarray | None = None) -> float:
        """Mean cross-entropy (policy: target = action index; value: target in [0, 1])."""
        out = self.forward(x)
        return _loss_and_grad(self.kind, out, target, mask, weight)[0]

    def backward(self, x: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None,
                 weight: np.ndarray | None = None):
        """(loss, [(dw, db) per layer]) for the (weighted) mean cross-entropy."""
        out, caches = self.forward(x, keep=True)
        loss, dout = _loss_and_grad(self.kind, out, target, mask, weight)
        B = out.shape[0]
        H, W = caches[-1][1].shape[2:]
        if self.kind == "value":
            dh = np.repeat(dout[:, None] / (H * W), H * W, axis=1)
        else:
            dh = dout
        dz = dh.reshape(B, 1, H, W)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            cache, z = caches[i]
            if i != len(self.layers) - 1:
                dz = dz * (z > 0)
            dx, dw, db = _conv_backward(dz, self.layers[i], cache)
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise FloatingPointError(f"non-finite gradient in layer {i}")
            grads[i] = (dw, db)
            dz = dx
        return loss, grads

    # ---- parameter vector view (used by the optimizer and gradient checks)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([lay.w.ravel(), lay.b]) for lay in self.layers])

    def set_flat(self, v: np.ndarray) -> None:
        i = 0
        for lay in self.layers:
            n = lay.w.size
            lay.w = v[i:i + n].reshape(lay.w.shape).copy()
            i += n
            lay.b = v[i:i + lay.b.size].copy()
            i += lay.b.size

    @staticmethod
    def flatten_grads(grads) -> np.ndarray:
        return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])

    def copy(self) -> "ConvNet":
        return ConvNet([ConvLayer(lay.w.copy(), lay.b.copy(), lay.pad) for lay in self.layers], self.kind,
                       dict(self.meta))

    # ---- I/O

    def to_json(self, path=None, extra: dict | None = None) -> str:
        doc = {
            "kind": self.kind,
            "meta": self.meta,
            "layers": [{"shape": list(lay.w.shape), "pad": lay.pad, "w": lay.w.ravel().tolist(),
                        "b": lay.b.tolist()} for lay in self.layers],
        }
        if extra:
            doc["training"] = extra
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "ConvNet":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        doc = json.loads(text)
        layers = []
        for d in doc["layers"]:
            w = np.array(d["w"], dtype=float)
            if w.size != int(np.prod(d["shape"])):
                raise ValueError("layer weight count does not match its declared shape")
            layers.append(ConvLayer(w.reshape(d["shape"]), np.array(d["b"]), d["pad"]))
        return cls(layers, doc["kind"], doc.get("meta", {}))


def _loss_and_grad(kind: str, out: np.ndarray, target: np.ndarray, mask: np.ndarray | None,
                   weight: np.ndarray | None = None):
    B = out.shape[0]
    w = np.full(B, 1.0 / B) if weight is None else np.asarray(weight, dtype=float) / np.sum(weight)
    if kind == "value":
        y = np.asarray(target, dtype=float)
        # log loss on logits, written stably
        loss = float(w @ (np.maximum(out, 0) - out * y + np.log1p(np.exp(-np.abs(out)))))
        return loss, (sigmoid(out) - y) * w
    if mask is None:
        raise ValueError("policy loss needs a legal mask")
    idx = np.asarray(target, dtype=np.int64)
    if not np.all(np.asarray(mask)[np.arange(B), idx]):
        raise ValueError("target action outside the legal mask")
    if not np.all(np.isfinite(out)):
        return float("nan"), np.zeros_like(out)
    logp = log_softmax_masked(out, mask)
    picked = logp[np.arange(B), idx]
    p = np.exp(np.where(mask, logp, -np.inf))
    d = p.copy()
    d[np.arange(B), idx] -= 1.0
    return float(-(w @ picked)), d * w[:, None]


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float, momentum: float = 0.0,
             velocity: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Momentum SGD: v <- momentum*v - lr*g; params <- params + v. Returns (params, v)."""
    if velocity is None:
        velocity = np.zeros_like(params)
    velocity = momentum * velocity - lr * grads
    return params + velocity, velocity


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)


def train(net: ConvNet, x: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None, epochs: int = 10,
          lr: float = 0.05, momentum: float = 0.9, batch: int = 256, seed: int = 0, lr_decay: float = 1.0,
          ridge: float = 0.0, weight: np.ndarray | None = None, callback=None) -> TrainLog:
    """Minibatch momentum SGD on the mean cross-entropy; deterministic given ``seed``."""
    if len(x) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    log = TrainLog()
    theta = net.get_flat()
    vel = np.zeros_like(theta)
    n = len(x)
    step = 0
    for ep in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            loss, grads = net.backward(x[idx], target[idx], None if mask is None else mask[idx],
                                       None if weight is None else weight[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss became non-finite at epoch {ep}, step {step}")
            g = ConvNet.flatten_grads(grads)
            if ridge:
                g = g + ridge * theta
            theta, vel = sgd_step(theta, g, lr, momentum, vel)
            net.set_flat(theta)
            total += loss * len(idx)
            step += 1
        entry = {"epoch": ep + 1, "train_loss": total / n, "lr": lr}
        if callback is not None:
            entry.update(callback(net) or {})
        log.epochs.append(entry)
        lr *= lr_decay
    return log
