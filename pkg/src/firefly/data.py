"""Synthetic benchmarks: the 1-D RBF regression toy and a 2-D continual suite."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import StructuralError
from .network import GrowableNetwork

TOY_DOMAIN = (-5.0, 5.0)


@dataclass
class ToyRbfTruth:
    thetas: np.ndarray  # (m, 2): slope and offset of each unit
    weights: np.ndarray  # (m,)
    seed: int

    @property
    def m(self):
        return len(self.weights)

    def network(self):
        return GrowableNetwork.rbf(self.thetas, self.weights)

    def __call__(self, x):
        return self.network().forward(np.asarray(x, dtype=np.float64).reshape(-1, 1))[:, 0]


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    kind: str = "regression"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        dtype = np.float64 if self.kind == "regression" else np.int64
        self.targets = np.asarray(self.targets, dtype=dtype)
        if len(self.inputs) != len(self.targets):
            raise StructuralError("inputs and targets differ in length")

    def __len__(self):
        return len(self.targets)

    @property
    def X(self):
        return self.inputs

    @property
    def y(self):
        return self.targets


def gen_toy_truth(seed, m=15, scale=np.sqrt(3.0)):
    """Ground-truth RBF net with slopes, offsets and weights i.i.d. ``N(0, scale**2)``."""
    rng = np.random.default_rng([int(seed), 0])
    weights = rng.normal(0.0, scale, m)
    thetas = rng.normal(0.0, scale, (m, 2))
    return ToyRbfTruth(thetas, weights, int(seed))


def gen_toy_dataset(truth, n_points=1000, seed=0, domain=TOY_DOMAIN):
    """Noiseless samples ``y = truth(x)`` with ``x ~ Uniform(domain)``."""
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    rng = np.random.default_rng([int(seed), 1])
    x = rng.uniform(domain[0], domain[1], n_points)
    return Dataset(x[:, None], truth(x), "regression")


def init_rbf_network(width, rng, scale=1.0):
    """Random RBF net used as the starting point of every toy method."""
    rng = np.random.default_rng(rng)
    return GrowableNetwork.rbf(rng.normal(0.0, scale, (width, 2)), rng.normal(0.0, scale, width))


def gen_cl_tasks(T=10, seed=0, n_per_class=100, n_classes=3, radius=2.0, spread=0.35):
    """``T`` 2-D classification tasks made of Gaussian clusters.

    Every class owns two clusters on opposite sides of a circle, so no task
    is linearly separable. Each task gets its own rotation, centre offset and
    label permutation.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng([int(seed), 2])
    tasks = []
    for _ in range(T):
        phi = rng.uniform(0.0, 2.0 * np.pi)
        centre = rng.uniform(-0.5, 0.5, 2)
        perm = rng.permutation(n_classes)
        xs, ys = [], []
        for c in range(n_classes):
            for side in (0.0, np.pi):
                angle = phi + np.pi * c / n_classes + side
                mean = centre + radius * np.array([np.cos(angle), np.sin(angle)])
                xs.append(mean + spread * rng.standard_normal((n_per_class // 2, 2)))
                ys.append(np.full(n_per_class // 2, perm[c]))
        order = rng.permutation(sum(len(y) for y in ys))
        tasks.append(Dataset(np.concatenate(xs)[order], np.concatenate(ys)[order],
                             "classification"))
    return tasks


def _fmt(v):
    return format(float(v), ".17g")


def write_dataset_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if dataset.kind == "regression":
            if dataset.inputs.shape[1] != 1:
                raise StructuralError("regression CSV holds 1-D inputs only")
            w.writerow(["x", "y"])
            for x, y in zip(dataset.inputs[:, 0], dataset.targets):
                w.writerow([_fmt(x), _fmt(y)])
        else:
            w.writerow(["x1", "x2", "label"])
            for (x1, x2), label in zip(dataset.inputs, dataset.targets):
                w.writerow([_fmt(x1), _fmt(x2), int(label)])


def read_dataset_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header == ["x", "y"]:
        arr = np.array(body, dtype=np.float64).reshape(-1, 2)
        return Dataset(arr[:, :1], arr[:, 1], "regression")
    if header == ["x1", "x2", "label"]:
        arr = np.array(body, dtype=np.float64).reshape(-1, 3)
        return Dataset(arr[:, :2], arr[:, 2].astype(np.int64), "classification")
    raise StructuralError(f"unrecognised CSV header {header}")
