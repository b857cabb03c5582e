"""Firefly descent: joint gate/direction optimisation, scoring and selection.

One growth phase works on an :class:`~firefly.network.AugmentedNetwork`:

1. :func:`step_one` runs projected gradient descent on the loss of the
   augmented network over every gate value ``eps_i`` and direction
   ``delta_i``, with the base network frozen.
2. :func:`integrated_gradient_scores` averages ``dL/d eps_i`` along the path
   ``0 -> eps_i`` with a midpoint rule.
3. :func:`select_width` / :func:`select_depth` solve the linearised problem
   under the neuron (and layer) budgets.
4. :func:`~firefly.network.materialize` turns the chosen gates into neurons.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, NumericError
from .network import (
    attach_depth_candidates,
    attach_width_candidates,
    materialize,
    merge_candidates,
    project_delta,
)
from .training import fit_parameters

log = logging.getLogger(__name__)


@dataclass
class GrowthConfig:
    step_size: float = 0.01
    width_budget: int | float = 1
    depth_neuron_budget: int = 0
    depth_layer_budget: int = 0
    m_prime: int = 5
    quadrature_points: int = 3
    step_one_iters: int = 100
    step_one_lr: float = 10.0
    init_scale: float = 0.1
    penalty_weight: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.step_size > 0:
            raise ContractError("step_size must be positive")
        if self.quadrature_points < 1:
            raise ContractError("quadrature_points must be at least 1")
        if self.width_budget < 0 or self.depth_neuron_budget < 0 or self.depth_layer_budget < 0:
            raise ContractError("budgets must be non-negative")
        if self.m_prime < 0 or self.step_one_iters < 0:
            raise ContractError("m_prime and step_one_iters must be non-negative")
        if not self.step_one_lr > 0 or not self.init_scale > 0:
            raise ContractError("step_one_lr and init_scale must be positive")
        if self.penalty_weight < 0:
            raise ContractError("penalty_weight must be non-negative")


def resolve_width_budget(budget, current_neurons):
    """Integers are absolute counts; floats are a fraction of the current size (floor 1)."""
    if isinstance(budget, (int, np.integer)) and not isinstance(budget, bool):
        return int(budget)
    if budget == 0:
        return 0
    return max(1, int(math.floor(budget * current_neurons)))


@dataclass
class ScoreVector:
    scores: np.ndarray
    tilde_epsilon: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.tilde_epsilon = np.asarray(self.tilde_epsilon, dtype=np.float64)
        if not np.isfinite(self.scores).all():
            raise NumericError("non-finite candidate score")

    def __len__(self):
        return self.scores.size


# -- Step One ----------------------------------------------------------------

def _with_penalty(program, n_candidates, weight):
    if weight == 0:
        return program

    def penalised(tape, inputs):
        loss = program(tape, inputs)
        for i in range(n_candidates):
            d = tape.param(f"delta{i}")
            loss = loss + weight * ad.sum_(d * d)
        return loss

    return penalised


def step_one(aug, X, y, cfg):
    """Projected gradient descent over all gates; returns ``(tilde_eps, tilde_delta)``.

    After every step each ``eps_i`` is clamped to ``[-step, step]`` and each
    ``delta_i`` is rescaled onto the unit ball if it left it.
    """
    if len(aug.candidates) == 0:
        raise ContractError("step_one needs at least one candidate")
    store = aug.parameter_store()
    n = len(aug.candidates)
    program = _with_penalty(aug.loss_program(X, y), n, cfg.penalty_weight)
    step = aug.step_size
    eps_sl = store.slice_of("eps")
    delta_sl = [store.slice_of(f"delta{i}") for i in range(n)]
    for it in range(cfg.step_one_iters):
        try:
            tape, _ = ad.record_forward(program, store, None)
        except NumericError as exc:
            raise NumericError(f"step one iteration {it}: {exc}") from None
        ad.sgd_step(store, ad.backward(tape, store), cfg.step_one_lr)
        np.clip(store.values[eps_sl], -step, step, out=store.values[eps_sl])
        for sl in delta_sl:
            store.values[sl] = project_delta(store.values[sl])
    eps = store.values[eps_sl].copy()
    deltas = [store.values[sl].copy() for sl in delta_sl]
    return eps, deltas


# -- Step Two ----------------------------------------------------------------

def integrated_gradient_scores(aug, tilde_eps, tilde_delta, X, y, n=3):
    """Midpoint-rule integrated gradients ``s_i`` for every candidate.

    ``s_i = (1/n) sum_z dL/d eps_i`` at ``eps_i = (2z-1)/(2n) * tilde_eps_i`` with
    every other gate held at its ``tilde_eps`` value and directions fixed. A
    zero ``tilde_eps_i`` collapses the path to the single point 0.
    """
    if n < 1:
        raise ContractError("quadrature needs at least one point")
    tilde_eps = np.asarray(tilde_eps, dtype=np.float64)
    store = aug.parameter_store(tilde_eps, tilde_delta)
    program = aug.loss_program(X, y)
    sl = store.slice_of("eps")
    fractions = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    scores = np.zeros(len(aug.candidates))
    for i in range(len(aug.candidates)):
        points = fractions * tilde_eps[i] if tilde_eps[i] != 0 else np.zeros(1)
        total = 0.0
        for c in points:
            store.values[sl] = tilde_eps
            store.values[sl.start + i] = c
            tape, _ = ad.record_forward(program, store, None)
            total += ad.backward(tape, store)["eps"][i]
        scores[i] = total / len(points)
    return ScoreVector(scores, tilde_eps.copy())


def _ranking(scores, keys=None):
    """Indices by descending ``|s|``; ties broken by ``keys`` (default: index)."""
    s = np.abs(np.asarray(scores, dtype=np.float64))
    idx = np.arange(s.size)
    if keys is None:
        return sorted(idx, key=lambda i: (-s[i], i))
    return sorted(idx, key=lambda i: (-s[i],) + tuple(keys[i]))


def select_width(scores, budget, step_size):
    """Exact minimiser of ``sum_i eps_i s_i`` under ``||eps||_0 <= budget``, ``|eps_i| <= step``."""
    s = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if budget < 0:
        raise ContractError("budget must be non-negative")
    eps = np.zeros(s.size)
    chosen = [i for i in _ranking(s) if s[i] != 0][: int(budget)]
    for i in chosen:
        eps[i] = -step_size * np.sign(s[i])
    return eps


def select_depth(scores, slots, neuron_budget, layer_budget, step_size):
    """Greedy pass in descending ``|s|``; ties by (slot, index).

    A candidate is skipped when it would open a slot beyond ``layer_budget``
    (checked first) or exceed ``neuron_budget`` accepted neurons.
    """
    s = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if neuron_budget < 0 or layer_budget < 0:
        raise ContractError("budgets must be non-negative")
    slots = list(slots)
    eps = np.zeros(s.size)
    active, accepted = set(), 0
    for i in _ranking(s, [(slots[i], i) for i in range(s.size)]):
        if s[i] == 0:
            continue
        if slots[i] not in active and len(active) >= layer_budget:
            continue
        if accepted >= neuron_budget:
            continue
        eps[i] = -step_size * np.sign(s[i])
        active.add(slots[i])
        accepted += 1
    return eps


# -- one growth phase ---------------------------------------------------------

@dataclass
class GrowthReport:
    phase: int
    mode: str
    kinds: list
    scores: list
    selected: list
    loss_before: float
    loss_after: float
    neurons: int
    params: int
    extra: dict = field(default_factory=dict)

    def records(self):
        """One JSONL-ready record per candidate (or one summary row if none)."""
        base = {"phase": self.phase, "mode": self.mode, "loss_before": self.loss_before,
                "loss_after": self.loss_after, "neurons": self.neurons, "params": self.params}
        if not self.kinds:
            return [dict(base, candidate_id=None, kind=None, score=None, selected=False)]
        return [dict(base, candidate_id=i, kind=k, score=s, selected=bool(sel))
                for i, (k, s, sel) in enumerate(zip(self.kinds, self.scores, self.selected))]

    def as_dict(self):
        return asdict(self)


def _phase_seed(seed, phase):
    return int(np.random.SeedSequence([int(seed), int(phase)]).generate_state(1)[0])


def build_candidates(net, cfg, mode, layers=None, phase=0):
    seed = _phase_seed(cfg.rng_seed, phase)
    augs = []
    if mode in ("width", "both"):
        layers = list(range(len(net.layers))) if layers is None else list(layers)
        for k, li in enumerate(layers):
            augs.append(attach_width_candidates(net, li, cfg.m_prime, cfg.step_size,
                                                cfg.init_scale, rng_seed=seed + k))
    if mode in ("depth", "both") and net.residual_slots:
        augs.append(attach_depth_candidates(net, cfg.m_prime, cfg.step_size, cfg.init_scale,
                                            rng_seed=seed + 7919))
    if not augs:
        return None
    return merge_candidates(*augs) if len(augs) > 1 else augs[0]


def grow_step(net, X, y, cfg, mode="width", layers=None, phase=0):
    """One firefly growth phase; returns ``(grown network, GrowthReport)``."""
    if mode not in ("width", "depth", "both"):
        raise ContractError(f"unknown growth mode {mode!r}")
    loss_before = float(net.loss(X, y))
    aug = build_candidates(net, cfg, mode, layers, phase)
    width_budget = 0
    if mode in ("width", "both") and aug is not None:
        grown = {g.layer for g in aug.candidates if g.kind != "layer"}
        width_budget = resolve_width_budget(cfg.width_budget,
                                            sum(net.layers[l].width for l in grown))
    depth_on = mode in ("depth", "both") and bool(net.residual_slots)
    no_budget = width_budget == 0 and (
        not depth_on or cfg.depth_neuron_budget == 0 or cfg.depth_layer_budget == 0)
    if aug is None or no_budget:
        new = net.copy()
        return new, GrowthReport(phase, mode, [], [], [], loss_before, loss_before,
                                 new.count_neurons(), new.count_params())

    tilde_eps, tilde_delta = step_one(aug, X, y, cfg)
    sv = integrated_gradient_scores(aug, tilde_eps, tilde_delta, X, y, cfg.quadrature_points)
    kinds = [g.kind for g in aug.candidates]
    width_idx = np.array([i for i, k in enumerate(kinds) if k != "layer"], dtype=int)
    depth_idx = np.array([i for i, k in enumerate(kinds) if k == "layer"], dtype=int)
    eps_hat = np.zeros(len(kinds))
    if width_idx.size:
        eps_hat[width_idx] = select_width(sv.scores[width_idx], width_budget, aug.step_size)
    if depth_idx.size:
        slots = [aug.candidates[i].slot for i in depth_idx]
        eps_hat[depth_idx] = select_depth(sv.scores[depth_idx], slots, cfg.depth_neuron_budget,
                                          cfg.depth_layer_budget, aug.step_size)
    aug.width_budget = width_budget
    aug.depth_budget = (cfg.depth_neuron_budget, cfg.depth_layer_budget)
    new = materialize(aug, eps_hat, tilde_delta)
    loss_after = float(new.loss(X, y))
    log.debug("phase %d: %d candidates, selected %s, loss %.6g -> %.6g", phase, len(kinds),
              np.flatnonzero(eps_hat).tolist(), loss_before, loss_after)
    return new, GrowthReport(phase, mode, kinds, sv.scores.tolist(), (eps_hat != 0).tolist(),
                             loss_before, loss_after, new.count_neurons(), new.count_params())


# -- outer loop ----------------------------------------------------------------

@dataclass
class Schedule:
    train_iters: int = 10_000
    grow_phases: int = 9
    learning_rate: float = 0.03

    def __post_init__(self):
        if self.train_iters < 0 or self.grow_phases < 0:
            raise ContractError("schedule entries must be non-negative")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")


@dataclass
class History:
    boundaries: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def losses(self):
        return [b["loss"] for b in self.boundaries]

    @property
    def neurons(self):
        return [b["neurons"] for b in self.boundaries]

    def __len__(self):
        return len(self.boundaries)


def progressive_train(net, X, y, grow, schedule, frozen=()):
    """Alternate parametric training and ``grow(net, phase)``.

    Records one boundary per phase (after training, before growing) plus the
    final one, so the history has ``grow_phases + 1`` entries.
    """
    net = net.copy()
    history = History()
    for phase in range(schedule.grow_phases + 1):
        try:
            loss = fit_parameters(net, X, y, schedule.train_iters, schedule.learning_rate, frozen)
        except NumericError as exc:
            raise NumericError(f"training phase {phase}: {exc}") from None
        history.boundaries.append({"phase": phase, "loss": loss,
                                   "neurons": net.count_neurons(), "params": net.count_params()})
        if phase == schedule.grow_phases:
            break
        try:
            net, report = grow(net, phase)
        except NumericError as exc:
            raise NumericError(f"growth phase {phase}: {exc}") from None
        if report is not None:
            history.reports.append(report)
    return net, history


def firefly_train(net, X, y, cfg, schedule, mode="width", layers=None, growth_data=None):
    """Train, grow by firefly descent, repeat.

    ``growth_data`` is an optional ``(X, y)`` batch on which candidates are
    optimised and scored; by default the training data is used.
    """
    gX, gy = (X, y) if growth_data is None else growth_data

    def grow(current, phase):
        return grow_step(current, gX, gy, cfg, mode, layers, phase)

    return progressive_train(net, X, y, grow, schedule)
