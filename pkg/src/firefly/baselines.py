"""Reference growth strategies that share the firefly training loop."""
from __future__ import annotations

import numpy as np

from .exceptions import ContractError
from .growth import GrowthReport, progressive_train
from .network import AugmentedNetwork, CandidateGate, _fan_out, materialize, project_delta
from .training import fit_parameters


def _random_gate(net, layer, pick, width, rng, init_scale):
    fan_in = net.layers[layer].neurons[0].theta.size
    if pick < width:
        d = project_delta(rng.normal(0.0, init_scale, fan_in))
        return CandidateGate("split", 1.0, d, layer=layer, host=int(pick))
    d = project_delta(rng.normal(0.0, init_scale, fan_in + _fan_out(net, layer)))
    return CandidateGate("new", 1.0, d, layer=layer)


def _best_of_k(net, X, y, rng, k_trials, m_prime, finetune_iters, lr, init_scale, layer):
    if k_trials < 1:
        raise ContractError("k_trials must be at least 1")
    if m_prime < 0:
        raise ContractError("m_prime must be non-negative")
    width = net.layers[layer].width
    best, best_loss = None, np.inf
    for _ in range(k_trials):
        pick = rng.integers(width + m_prime)
        gate = _random_gate(net, layer, pick, width, rng, init_scale)
        trial = materialize(AugmentedNetwork(net, [gate], 1.0), [1.0])
        loss = fit_parameters(trial, X, y, finetune_iters, lr)
        if loss < best_loss:
            best, best_loss = trial, loss
    return best, best_loss


def baseline_random_split(net, X, y, rng, k_trials=3, finetune_iters=100, learning_rate=0.03,
                          init_scale=0.1, layer=0):
    """Split a uniformly chosen neuron along a random direction, best of ``k_trials``.

    Each trial perturbs the children by ``+-d`` with ``d`` normal with standard
    deviation ``init_scale`` projected onto the unit ball, then fine-tunes every
    parameter for ``finetune_iters`` steps. Returns ``(network, loss)``.
    """
    return _best_of_k(net, X, y, np.random.default_rng(rng), k_trials, 0, finetune_iters,
                      learning_rate, init_scale, layer)


def baseline_random_split_plus_new(net, X, y, rng, k_trials=3, m_prime=5, finetune_iters=100,
                                   learning_rate=0.03, init_scale=0.1, layer=0):
    """Like :func:`baseline_random_split` but the uniform draw also covers ``m_prime`` fresh neurons.

    New neurons are drawn lazily, so ``m_prime=0`` consumes the random stream
    exactly like :func:`baseline_random_split`.
    """
    return _best_of_k(net, X, y, np.random.default_rng(rng), k_trials, m_prime, finetune_iters,
                      learning_rate, init_scale, layer)


def random_train(net, X, y, schedule, seed, k_trials=3, m_prime=0, finetune_iters=100,
                 init_scale=0.1, layer=0):
    """Progressive training where each phase grows by a random baseline."""
    rng = np.random.default_rng([int(seed), 5])
    mode = "random-split-new" if m_prime else "random-split"

    def grow(current, phase):
        before = float(current.loss(X, y))
        new, loss = _best_of_k(current, X, y, rng, k_trials, m_prime, finetune_iters,
                               schedule.learning_rate, init_scale, layer)
        return new, GrowthReport(phase, mode, [], [], [], before, loss,
                                 new.count_neurons(), new.count_params())

    return progressive_train(net, X, y, grow, schedule)


def baseline_scratch(widths, X, y, train_iters, learning_rate, init, seed=0):
    """Train a fresh network of every width in ``widths``; returns ``[(width, loss), ...]``.

    ``init(width, rng)`` builds the untrained network.
    """
    out = []
    for w in widths:
        net = init(int(w), np.random.default_rng([int(seed), 6, int(w)]))
        out.append((int(w), fit_parameters(net, X, y, train_iters, learning_rate)))
    return out
