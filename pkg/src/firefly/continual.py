"""Mask-based continual learning on a growing master network.

The master is one hidden rectifier layer shared by every task. Each task owns
a binary mask over the hidden neurons and its own linear head. Neurons used by
a finished task are locked forever; a later task that wants to change one gets
a fresh copy (copy-on-unlock) and the original stays where old masks expect it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, StructuralError
from .growth import GrowthConfig, integrated_gradient_scores, select_width, step_one
from .network import (
    AugmentedNetwork,
    CandidateGate,
    GrowableNetwork,
    Layer,
    Neuron,
    materialize,
    project_delta,
)
from .training import fit_parameters

KINDS = ("brand-new", "unlocked-copy")


@dataclass
class TaskMask:
    task_id: int
    bits: np.ndarray
    gates: np.ndarray | None = None  # relaxed values the bits were thresholded from

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).copy()

    @property
    def indices(self):
        return np.flatnonzero(self.bits)

    def extended(self, n):
        """Bits padded with ``False`` up to ``n`` neurons."""
        if n < self.bits.size:
            raise StructuralError("a mask can only be extended")
        return np.concatenate([self.bits, np.zeros(n - self.bits.size, dtype=bool)])


@dataclass
class Provenance:
    task: int
    kind: str
    source: int | None = None


@dataclass
class ContinualConfig:
    step_size: float = 0.05
    m_prime: int = 15
    width_budget: int = 4
    init_width: int = 4
    mask_epochs: int = 200
    mask_lr: float = 0.5
    mask_penalty: float = 1e-3
    finetune_iters: int = 300
    learning_rate: float = 0.2
    target_accuracy: float = 0.95
    max_grow_rounds: int = 4
    step_one_iters: int = 50
    step_one_lr: float = 1.0
    quadrature_points: int = 3
    init_scale: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("step_size", "mask_lr", "learning_rate", "step_one_lr", "init_scale"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        for name in ("m_prime", "width_budget", "mask_epochs", "finetune_iters",
                     "max_grow_rounds", "step_one_iters", "mask_penalty"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.init_width < 1 or self.quadrature_points < 1:
            raise ContractError("init_width and quadrature_points must be at least 1")
        if not 0 <= self.target_accuracy <= 1:
            raise ContractError("target_accuracy must lie in [0, 1]")

    def growth_config(self):
        return GrowthConfig(step_size=self.step_size, width_budget=self.width_budget,
                            m_prime=self.m_prime, quadrature_points=self.quadrature_points,
                            step_one_iters=self.step_one_iters, step_one_lr=self.step_one_lr,
                            init_scale=self.init_scale, rng_seed=self.rng_seed)


class MasterNetwork:
    """Union of all task subnetworks plus lock flags, masks and per-task heads."""

    def __init__(self, input_dim, n_classes):
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.neurons = []
        self.locked = []
        self.provenance = []
        self.masks = {}
        self.heads = {}

    def __len__(self):
        return len(self.neurons)

    @property
    def net(self):
        """The hidden layer as a head-less :class:`GrowableNetwork` (``None`` when empty)."""
        if not self.neurons:
            return None
        return GrowableNetwork(self.input_dim,
                               [Layer("relu", [Neuron(n.theta) for n in self.neurons])],
                               "classification", 0)

    def count_params(self):
        hidden = sum(n.theta.size for n in self.neurons)
        return hidden + sum(h.size for h in self.heads.values())

    def append(self, theta, task, kind, source=None):
        if kind not in KINDS:
            raise StructuralError(f"unknown provenance kind {kind!r}")
        self.neurons.append(Neuron(theta))
        self.locked.append(False)
        self.provenance.append(Provenance(int(task), kind, source))
        return len(self.neurons) - 1

    def mask_bits(self, task_id):
        if task_id not in self.masks:
            raise StructuralError(f"no mask recorded for task {task_id}")
        return self.masks[task_id].extended(len(self.neurons))

    def subnetwork(self, indices, head):
        indices = list(indices)
        if len(indices) != len(head):
            raise StructuralError("head rows do not match the selected neurons")
        neurons = [Neuron(self.neurons[i].theta.copy(), np.array(h)) for i, h in zip(indices, head)]
        return GrowableNetwork(self.input_dim, [Layer("relu", neurons)], "classification",
                               self.n_classes)

    def check(self):
        """Every masked neuron exists; neurons of finished tasks are locked."""
        for t, mask in self.masks.items():
            if mask.bits.size > len(self.neurons):
                raise StructuralError(f"mask of task {t} references missing neurons")
            if not all(self.locked[i] for i in mask.indices):
                raise StructuralError(f"mask of task {t} uses an unlocked neuron")
            if self.heads[t].shape != (mask.indices.size, self.n_classes):
                raise StructuralError(f"head of task {t} has the wrong shape")


def accuracy(net, X, y):
    return float(np.mean(np.argmax(net.forward(X), axis=1) == np.asarray(y)))


def retrieve_task_model(master, task_id):
    """The frozen subnetwork of ``task_id``: its masked neurons and its head."""
    bits = master.mask_bits(task_id)
    return master.subnetwork(np.flatnonzero(bits), master.heads[task_id])


def evaluate_all_tasks(master, tasks):
    """Per-task loss and accuracy; ``tasks`` maps task id to a :class:`Dataset`."""
    rows = []
    for t in sorted(tasks):
        net = retrieve_task_model(master, t)
        ds = tasks[t]
        rows.append({"task_id": t, "loss": float(net.loss(ds.X, ds.y)),
                     "accuracy": accuracy(net, ds.X, ds.y)})
    return {"tasks": rows,
            "average_accuracy": float(np.mean([r["accuracy"] for r in rows])) if rows else 0.0,
            "master_params": master.count_params()}


# -- mask training -----------------------------------------------------------

def _fit_gates(master, X, y, epochs, lr, penalty, rng):
    """Relaxed gates in [0, 1] plus a task head, with every neuron weight frozen."""
    thetas = np.stack([n.theta for n in master.neurons])
    A = np.maximum(X @ thetas[:, :-1].T + thetas[:, -1], 0.0)
    store = ad.ParameterStore()
    store.add("gate", np.ones(len(thetas)))
    store.add("head", rng.normal(0.0, np.sqrt(1.0 / len(thetas)), (len(thetas), master.n_classes)))
    gate_sl = store.slice_of("gate")

    def program(tape, _inputs=None):
        g = tape.param("gate")
        loss = ad.softmax_cross_entropy(ad.dot(A * g, tape.param("head")), y)
        return loss + penalty * ad.sum_(g) if penalty else loss

    for it in range(epochs):
        tape, _ = ad.record_forward(program, store, None)
        ad.sgd_step(store, ad.backward(tape, store), lr)
        np.clip(store.values[gate_sl], 0.0, 1.0, out=store.values[gate_sl])
    return store["gate"].copy(), store["head"].copy()


def train_selection_mask(master, X, y, epochs=200, lr=0.5, penalty=1e-3, task_id=None, rng=0):
    """Draft mask of existing neurons worth reusing (gate value at least 0.5)."""
    if not master.neurons:
        raise ContractError("mask training needs an existing neuron")
    if epochs < 0:
        raise ContractError("epochs must be non-negative")
    task_id = len(master.masks) if task_id is None else task_id
    gates, _ = _fit_gates(master, np.asarray(X, dtype=np.float64), y, epochs, lr, penalty,
                          np.random.default_rng(rng))
    return TaskMask(task_id, gates >= 0.5, gates)


# -- growing for a task ------------------------------------------------------

@dataclass
class _TaskState:
    """Neurons in use by the current task (master indices) and their head rows."""
    rows: dict = field(default_factory=dict)

    def indices(self):
        return sorted(self.rows)

    def view(self, master):
        idx = self.indices()
        return master.subnetwork(idx, np.stack([self.rows[i] for i in idx]))

    def absorb(self, net):
        for i, n in zip(self.indices(), net.layers[0].neurons):
            self.rows[i] = n.out_weight.copy()


def _finetune(master, state, X, y, cfg):
    view = state.view(master)
    idx = state.indices()
    frozen = {f"l0.n{j}.theta" for j, i in enumerate(idx) if master.locked[i]}
    fit_parameters(view, X, y, cfg.finetune_iters, cfg.learning_rate, frozen)
    for j, i in enumerate(idx):
        if not master.locked[i]:
            master.neurons[i] = Neuron(view.layers[0].neurons[j].theta.copy())
    state.absorb(view)
    return view


def _grow_round(master, state, X, y, cfg, task_id, round_no):
    """One firefly round over unlock-copy and brand-new gates; returns (copies, new)."""
    view = state.view(master)
    idx = state.indices()
    rng = np.random.default_rng([cfg.rng_seed, task_id, round_no])
    fan_in = master.input_dim + 1
    gates = [CandidateGate("unlock", cfg.step_size,
                           project_delta(rng.normal(0.0, cfg.init_scale, fan_in)), host=j)
             for j, i in enumerate(idx) if master.locked[i]]
    for _ in range(cfg.m_prime):
        d = project_delta(rng.normal(0.0, cfg.init_scale, fan_in + master.n_classes))
        gates.append(CandidateGate("new", cfg.step_size, d))
    if not gates or cfg.width_budget == 0:
        return 0, 0
    aug = AugmentedNetwork(view, gates, cfg.step_size, width_budget=cfg.width_budget)
    gcfg = cfg.growth_config()
    tilde_eps, tilde_delta = step_one(aug, X, y, gcfg)
    sv = integrated_gradient_scores(aug, tilde_eps, tilde_delta, X, y, cfg.quadrature_points)
    eps_hat = select_width(sv, cfg.width_budget, cfg.step_size)
    grown = materialize(aug, eps_hat, tilde_delta)
    neurons = grown.layers[0].neurons
    copies = new = 0
    for g, e in zip(gates, eps_hat):
        if e == 0 or g.kind != "unlock":
            continue
        old = idx[g.host]
        copy = master.append(neurons[g.host].theta, task_id, "unlocked-copy", source=old)
        state.rows[copy] = state.rows.pop(old)
        copies += 1
    for j in range(len(idx), len(neurons)):
        k = master.append(neurons[j].theta, task_id, "brand-new")
        state.rows[k] = neurons[j].out_weight.copy()
        new += 1
    return copies, new


def grow_for_task(master, train, cfg=None, task_id=None, eval_sets=None, log=None):
    """Learn one new task on ``master`` in place; returns the recorded :class:`TaskMask`.

    ``eval_sets`` maps earlier task ids to held-out data and only feeds the
    per-round records appended to ``log``.
    """
    cfg = cfg or ContinualConfig()
    if len(train) == 0:
        raise ContractError("task data is empty")
    task_id = len(master.masks) if task_id is None else int(task_id)
    if task_id in master.masks:
        raise StructuralError(f"task {task_id} already has a mask")
    X, y = np.asarray(train.X, dtype=np.float64), np.asarray(train.y)
    rng = np.random.default_rng([cfg.rng_seed, task_id])
    state = _TaskState()

    if master.neurons:
        gates, head = _fit_gates(master, X, y, cfg.mask_epochs, cfg.mask_lr, cfg.mask_penalty, rng)
        chosen = np.flatnonzero(gates >= 0.5)
        if chosen.size == 0:
            # an empty subnetwork cannot be grown; keep the strongest gate
            chosen = np.array([int(np.argmax(gates))])
        for i in chosen:
            state.rows[int(i)] = head[i].copy()
    else:
        init = GrowableNetwork.mlp(master.input_dim, [cfg.init_width], master.n_classes, rng=rng)
        for n in init.layers[0].neurons:
            state.rows[master.append(n.theta, task_id, "brand-new")] = n.out_weight.copy()

    def record(round_no, copies, new, view):
        if log is None:
            return
        evals = {t: accuracy(retrieve_task_model(master, t), d.X, d.y)
                 for t, d in sorted((eval_sets or {}).items()) if t in master.masks}
        if eval_sets and task_id in eval_sets:
            evals[task_id] = accuracy(view, eval_sets[task_id].X, eval_sets[task_id].y)
        log.append({"task_id": task_id, "round": round_no, "neurons_added_copy": copies,
                    "neurons_added_new": new, "master_params": master.count_params()
                    + view.count_params() - sum(master.neurons[i].theta.size
                                                for i in state.indices()),
                    "train_acc": accuracy(view, X, y),
                    "eval_acc_per_task": [evals[t] for t in sorted(evals)]})

    view = _finetune(master, state, X, y, cfg)
    record(0, 0, 0, view)
    round_no = 0
    while accuracy(view, X, y) < cfg.target_accuracy and round_no < cfg.max_grow_rounds:
        round_no += 1
        copies, new = _grow_round(master, state, X, y, cfg, task_id, round_no)
        view = _finetune(master, state, X, y, cfg)
        record(round_no, copies, new, view)

    idx = state.indices()
    for i in idx:
        master.locked[i] = True
    bits = np.zeros(len(master.neurons), dtype=bool)
    bits[idx] = True
    mask = TaskMask(task_id, bits)
    master.masks[task_id] = mask
    master.heads[task_id] = np.stack([state.rows[i] for i in idx])
    return mask
