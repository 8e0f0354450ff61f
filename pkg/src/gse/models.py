"""
Small differentiable classifiers with hand-written backpropagation.

Three architectures are built in:

``linear``  flatten -> dense
``mlp``     flatten -> dense -> tanh -> dense
``conv``    3x3 conv (zero padded) -> tanh -> average pool -> flatten -> dense

Inputs are batches of shape (B, M, N, C). Everything runs in float64.
"""

import hashlib
import json
import logging
import struct

import numpy as np

log = logging.getLogger(__name__)

ARCHITECTURES = ("linear", "mlp", "conv")
MODEL_MAGIC = b"GSEM"


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _conv_forward(x, W, b):
    n = W.shape[0]
    p = n // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (n, n), axis=(1, 2))
    # win: (B, M, N, C, n, n)
    return np.tensordot(win, W.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2])) + b, win


def _conv_backward_input(g, W):
    n = W.shape[0]
    p = n // 2
    gp = np.pad(g, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(gp, (n, n), axis=(1, 2))
    Wf = W[::-1, ::-1].transpose(3, 0, 1, 2)  # (F, n, n, C)
    return np.tensordot(win, Wf, axes=([3, 4, 5], [0, 1, 2]))


def _pool_forward(a, s):
    B, M, N, F = a.shape
    return a.reshape(B, M // s, s, N // s, s, F).mean(axis=(2, 4))


def _pool_backward(g, s):
    return np.repeat(np.repeat(g, s, axis=1), s, axis=2) / (s * s)


class ToyModel:
    """
    A small classifier usable as a gradient oracle.

    Parameters
    ----------
    architecture : str
        One of ``linear``, ``mlp``, ``conv``.
    input_shape : tuple of int
        (M, N, C) of a single image.
    num_classes : int
    params : dict of str -> ndarray
    hyper : dict
        Architecture sizes (``hidden`` for mlp, ``filters`` and ``pool``
        for conv).
    """

    def __init__(self, architecture, input_shape, num_classes, params, hyper=None):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        self.architecture = architecture
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.hyper = dict(hyper or {})
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {name} has non-finite entries")

    @classmethod
    def initialize(cls, architecture, input_shape, num_classes, seed=0, hidden=32,
                   filters=8, pool=4):
        rng = np.random.default_rng(seed)
        M, N, C = input_shape
        d = M * N * C
        hyper = {}
        if architecture == "linear":
            params = {
                "W": rng.normal(0, 1 / np.sqrt(d), (d, num_classes)),
                "b": np.zeros(num_classes),
            }
        elif architecture == "mlp":
            hyper = {"hidden": hidden}
            params = {
                "W1": rng.normal(0, 1 / np.sqrt(d), (d, hidden)),
                "b1": np.zeros(hidden),
                "W2": rng.normal(0, 1 / np.sqrt(hidden), (hidden, num_classes)),
                "b2": np.zeros(num_classes),
            }
        elif architecture == "conv":
            if M % pool or N % pool:
                raise ValueError(f"pool size {pool} must divide image size {M}x{N}")
            hyper = {"filters": filters, "pool": pool}
            feat = (M // pool) * (N // pool) * filters
            params = {
                "K": rng.normal(0, 1 / np.sqrt(9 * C), (3, 3, C, filters)),
                "bk": np.zeros(filters),
                "W": rng.normal(0, 1 / np.sqrt(feat), (feat, num_classes)),
                "b": np.zeros(num_classes),
            }
        else:
            raise ValueError(f"unknown architecture {architecture!r}")
        return cls(architecture, input_shape, num_classes, params, hyper)

    def __repr__(self):
        return (f"ToyModel({self.architecture}, input_shape={self.input_shape}, "
                f"num_classes={self.num_classes})")

    # forward / backward ---------------------------------------------------

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {X.shape[1:]} does not match model "
                             f"input shape {self.input_shape}")
        return X

    def forward(self, X):
        """Batched logits and the cache needed by :meth:`backward`."""
        X = self._check(X)
        p = self.params
        B = X.shape[0]
        if self.architecture == "linear":
            flat = X.reshape(B, -1)
            return flat @ p["W"] + p["b"], (flat,)
        if self.architecture == "mlp":
            flat = X.reshape(B, -1)
            h = np.tanh(flat @ p["W1"] + p["b1"])
            return h @ p["W2"] + p["b2"], (flat, h)
        s = self.hyper["pool"]
        pre, win = _conv_forward(X, p["K"], p["bk"])
        a = np.tanh(pre)
        pooled = _pool_forward(a, s)
        flat = pooled.reshape(B, -1)
        return flat @ p["W"] + p["b"], (win, a, pooled.shape, flat)

    def backward(self, cache, dz, need_params=False):
        """
        Backpropagate logit cotangents `dz` of shape (B, K).

        Returns the input gradient and, if `need_params`, a dict of
        parameter gradients summed over the batch.
        """
        p = self.params
        grads = {}
        B = dz.shape[0]
        if self.architecture == "linear":
            (flat,) = cache
            if need_params:
                grads = {"W": flat.T @ dz, "b": dz.sum(0)}
            dx = dz @ p["W"].T
        elif self.architecture == "mlp":
            flat, h = cache
            dh = (dz @ p["W2"].T) * (1 - h**2)
            if need_params:
                grads = {"W2": h.T @ dz, "b2": dz.sum(0),
                         "W1": flat.T @ dh, "b1": dh.sum(0)}
            dx = dh @ p["W1"].T
        else:
            win, a, pshape, flat = cache
            dflat = dz @ p["W"].T
            dpre = _pool_backward(dflat.reshape(pshape), self.hyper["pool"]) * (1 - a**2)
            if need_params:
                dK = np.tensordot(win, dpre, axes=([0, 1, 2], [0, 1, 2]))  # (C, n, n, F)
                grads = {"W": flat.T @ dz, "b": dz.sum(0),
                         "K": dK.transpose(1, 2, 0, 3), "bk": dpre.sum((0, 1, 2))}
            dx = _conv_backward_input(dpre, p["K"])
        return dx.reshape((B,) + self.input_shape), grads

    # oracle interface -----------------------------------------------------

    def logits_batch(self, X):
        return self.forward(X)[0]

    def logits(self, x):
        return self.logits_batch(np.asarray(x)[None])[0]

    def predict(self, X):
        return self.logits_batch(X).argmax(axis=1)

    def loss_grad(self, x, label):
        """Cross-entropy of a single image and its input gradient."""
        z, cache = self.forward(np.asarray(x)[None])
        logp = log_softmax(z)[0]
        dz = np.exp(logp)
        dz[label] -= 1.0
        dx, _ = self.backward(cache, dz[None])
        return float(-logp[label]), dx[0]

    def logit_grad(self, x, k):
        """Gradient of logit `k` with respect to every input entry."""
        if not 0 <= k < self.num_classes:
            raise ValueError(f"class index {k} out of range")
        z, cache = self.forward(np.asarray(x)[None])
        dz = np.zeros_like(z)
        dz[0, k] = 1.0
        return self.backward(cache, dz)[0][0]

    # persistence ----------------------------------------------------------

    def to_bytes(self):
        names = sorted(self.params)
        header = {
            "architecture": self.architecture,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "hyper": self.hyper,
            "params": [{"name": k, "shape": list(self.params[k].shape)} for k in names],
        }
        head = json.dumps(header, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes()
                        for k in names)
        return MODEL_MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        (hlen,) = struct.unpack_from("<I", buf, 4)
        header = json.loads(buf[8:8 + hlen])
        offset = 8 + hlen
        params = {}
        for spec in header["params"]:
            count = int(np.prod(spec["shape"]))
            if offset + 8 * count > len(buf):
                raise ValueError(f"model payload truncated at parameter {spec['name']}")
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
            params[spec["name"]] = arr.reshape(spec["shape"]).copy()
            offset += 8 * count
        if offset != len(buf):
            raise ValueError("trailing bytes after model payload")
        return cls(header["architecture"], header["input_shape"], header["num_classes"],
                   params, header.get("hyper"))

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def digest(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


def train_toy(images, labels, architecture="conv", epochs=10, lr=0.05, seed=0,
              batch_size=32, momentum=0.9, num_classes=None, **sizes):
    """
    Fit a :class:`ToyModel` with minibatch SGD and momentum.

    Deterministic for a fixed `seed`. Returns ``(model, train_accuracy)``.
    Raises ``FloatingPointError`` if the loss becomes non-finite.
    """
    X = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("labels out of range")
    model = ToyModel.initialize(architecture, X.shape[1:], num_classes, seed=seed, **sizes)
    rng = np.random.default_rng(seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            z, cache = model.forward(X[idx])
            logp = log_softmax(z)
            loss = -logp[np.arange(len(idx)), y[idx]].mean()
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged in epoch {epoch}")
            total += loss * len(idx)
            dz = np.exp(logp)
            dz[np.arange(len(idx)), y[idx]] -= 1.0
            _, grads = model.backward(cache, dz / len(idx), need_params=True)
            for k, g in grads.items():
                velocity[k] = momentum * velocity[k] - lr * g
                model.params[k] += velocity[k]
        log.debug("epoch %d loss %.4f", epoch, total / len(X))
    acc = float((model.predict(X) == y).mean())
    return model, acc
