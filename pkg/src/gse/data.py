"""Datasets, target-label plans and on-disk formats."""

import json
import os
from dataclasses import dataclass

import numpy as np

from .tensor import load_tensor, save_tensor

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


@dataclass
class LabeledDataset:
    """Images of shape (count, M, N, C) in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]


def parse_cifar10(buf, name="cifar10"):
    """Parse CIFAR-10 binary records (label byte + R, G, B 32x32 planes)."""
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) - len(buf) % CIFAR_RECORD
        raise ValueError(f"truncated CIFAR-10 record at byte offset {whole}")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(int)
    bad = np.nonzero(labels >= CIFAR_CLASSES)[0]
    if bad.size:
        raise ValueError(f"label {labels[bad[0]]} > 9 at byte offset {bad[0] * CIFAR_RECORD}")
    images = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1) / 255.0
    return LabeledDataset(images.reshape(-1, 32, 32, 3), labels, name, CIFAR_CLASSES)


def load_cifar10(*paths):
    """Load and concatenate one or more CIFAR-10 binary batch files."""
    parts = []
    for path in paths:
        with open(path, "rb") as f:
            parts.append(parse_cifar10(f.read(), os.path.basename(path)))
    images = np.concatenate([p.images for p in parts]) if parts else np.zeros((0, 32, 32, 3))
    labels = np.concatenate([p.labels for p in parts]) if parts else np.zeros(0, int)
    return LabeledDataset(images, labels, "cifar10", CIFAR_CLASSES)


def cifar10_bytes(dataset):
    """Serialize 32x32x3 images back to CIFAR-10 records (pixels rounded to bytes)."""
    if dataset.shape != (32, 32, 3):
        raise ValueError(f"CIFAR-10 records hold 32x32x3 images, got {dataset.shape}")
    pix = np.rint(dataset.images * 255).astype(np.uint8).transpose(0, 3, 1, 2)
    recs = np.concatenate([dataset.labels.astype(np.uint8)[:, None],
                           pix.reshape(len(dataset), -1)], axis=1)
    return recs.tobytes()


def synth_dataset(num_classes=3, per_class=50, M=16, N=16, C=3, seed=0, noise=0.1):
    """
    Class-dependent localized patches on a noisy gray background.

    Class k places a bright square of side ~M/4 at its own position and
    tints it with its own colour. Deterministic for a fixed `seed`.
    """
    rng = np.random.default_rng(seed)
    side = max(2, M // 4)
    layout = np.random.default_rng(10_000 + num_classes)
    slots = [(i, j) for i in range(0, M - side + 1, side) for j in range(0, N - side + 1, side)]
    picks = layout.permutation(len(slots))
    colours = layout.uniform(0.6, 1.0, size=(num_classes, C))
    images, labels = [], []
    for k in range(num_classes):
        i, j = slots[picks[k % len(slots)]]
        for _ in range(per_class):
            img = 0.4 + noise * rng.standard_normal((M, N, C))
            di, dj = rng.integers(-1, 2, size=2)
            a, b = np.clip(i + di, 0, M - side), np.clip(j + dj, 0, N - side)
            img[a:a + side, b:b + side] = colours[k] + noise * rng.standard_normal((side, side, C))
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
    images = np.array(images).reshape(-1, M, N, C)
    name = f"synth-{num_classes}x{per_class}-{M}x{N}x{C}-s{seed}"
    return LabeledDataset(images, np.array(labels, dtype=int), name, num_classes)


@dataclass(frozen=True)
class TargetPlan:
    """Distinct nonzero label offsets; target t_i = (l + a_i) mod num_classes."""

    offsets: tuple
    seed: int = 0

    def __post_init__(self):
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("target offsets must be distinct")

    @classmethod
    def random(cls, count, num_classes, seed=0):
        if count >= num_classes:
            raise ValueError(f"cannot draw {count} distinct wrong labels from {num_classes} classes")
        rng = np.random.default_rng(seed)
        offsets = rng.choice(np.arange(1, num_classes), size=count, replace=False)
        return cls(tuple(int(a) for a in offsets), seed)

    @classmethod
    def all_wrong(cls, num_classes):
        return cls(tuple(range(1, num_classes)))


def make_targets(label, plan, num_classes):
    """Target labels for an image of class `label` under `plan`."""
    if len(plan.offsets) >= num_classes:
        raise ValueError(f"{len(plan.offsets)} targets need more than {num_classes} classes")
    if any(a % num_classes == 0 for a in plan.offsets):
        raise ValueError("an offset congruent to 0 would target the true label")
    return [(label + a) % num_classes for a in plan.offsets]


def save_tensor_dir(dataset, path):
    """One GSET file per image plus a labels.json manifest."""
    os.makedirs(path, exist_ok=True)
    items = []
    for k, (img, lab) in enumerate(zip(dataset.images, dataset.labels)):
        fname = f"{k:06d}.gset"
        save_tensor(os.path.join(path, fname), img)
        items.append([fname, int(lab)])
    manifest = {"name": dataset.name, "num_classes": dataset.num_classes, "items": items}
    with open(os.path.join(path, "labels.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_tensor_dir(path):
    with open(os.path.join(path, "labels.json")) as f:
        manifest = json.load(f)
    images = [load_tensor(os.path.join(path, fname)) for fname, _ in manifest["items"]]
    labels = [lab for _, lab in manifest["items"]]
    images = np.array(images) if images else np.zeros((0, 1, 1, 1))
    return LabeledDataset(images, labels, manifest["name"], manifest["num_classes"])


def load_dataset(source):
    """
    Load a dataset from a tensor directory, a CIFAR-10 ``.bin`` file, or a
    ``synth:key=value,...`` specification (keys of :func:`synth_dataset`).
    """
    if source.startswith("synth:"):
        kwargs = {}
        for part in filter(None, source[len("synth:"):].split(",")):
            key, value = part.split("=")
            kwargs[key] = float(value) if key == "noise" else int(value)
        return synth_dataset(**kwargs)
    if os.path.isdir(source):
        return load_tensor_dir(source)
    return load_cifar10(source)
