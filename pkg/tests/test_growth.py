import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firefly.exceptions import ContractError, NumericError
from firefly.growth import (
    GrowthConfig,
    GrowthReport,
    Schedule,
    ScoreVector,
    firefly_train,
    grow_step,
    integrated_gradient_scores,
    resolve_width_budget,
    select_depth,
    select_width,
    step_one,
)
from firefly.network import AugmentedNetwork, CandidateGate, attach_width_candidates

from builders import random_mlp, random_rbf, regression_data
from oracles import brute_force_depth, brute_force_width

scores_st = st.lists(st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 2)),
                     min_size=1, max_size=8)


# -- selection ---------------------------------------------------------------

def test_select_width_worked_example():
    eps = select_width([0.5, -1.2, 0.3, -0.1], 2, 0.01)
    np.testing.assert_array_equal(eps, [-0.01, 0.01, 0.0, 0.0])


def test_select_width_zero_budget_and_zero_scores():
    assert not select_width([1.0, -2.0], 0, 0.1).any()
    eps = select_width([0.0, 0.0, 3.0], 3, 0.1)
    np.testing.assert_array_equal(eps, [0.0, 0.0, -0.1])
    with pytest.raises(ContractError):
        select_width([1.0], -1, 0.1)


def test_select_width_ties_prefer_lower_index():
    np.testing.assert_array_equal(select_width([1.0, -1.0, 1.0], 1, 0.5), [-0.5, 0.0, 0.0])


@given(scores_st, st.integers(0, 8), st.sampled_from([0.01, 0.1, 1.0]))
def test_select_width_is_exact_argmin(scores, budget, step):
    budget = min(budget, len(scores))
    eps = select_width(scores, budget, step)
    best, _ = brute_force_width(scores, budget, step)
    assert np.count_nonzero(eps) == min(budget, int(np.count_nonzero(scores)))
    assert np.max(np.abs(eps)) <= step
    assert float(eps @ np.array(scores)) == pytest.approx(best, abs=1e-12)


def test_select_depth_worked_example():
    # slot A holds candidates 0 and 1, slot B candidate 2
    eps = select_depth([0.9, 0.8, 0.85], ["A", "A", "B"], 2, 1, 0.1)
    np.testing.assert_array_equal(eps != 0, [True, True, False])


def test_select_depth_zero_neuron_budget():
    assert not select_depth([1.0, 2.0], [0, 1], 0, 5, 0.1).any()


@given(scores_st, st.integers(0, 4), st.integers(0, 3), st.integers(0, 2**16))
def test_select_depth_respects_budgets(scores, n_budget, l_budget, seed):
    slots = list(np.random.default_rng(seed).integers(0, 3, len(scores)))
    eps = select_depth(scores, slots, n_budget, l_budget, 0.1)
    chosen = np.flatnonzero(eps)
    assert chosen.size <= n_budget
    assert len({slots[i] for i in chosen}) <= l_budget
    if l_budget >= 3:
        # no layer constraint in force: greedy is the exact optimum
        best = brute_force_depth(scores, slots, n_budget, l_budget, 0.1)
        assert float(eps @ np.array(scores)) == pytest.approx(best, abs=1e-12)


def test_resolve_width_budget():
    assert resolve_width_budget(3, 100) == 3
    assert resolve_width_budget(0.3, 10) == 3
    assert resolve_width_budget(0.3, 2) == 1
    assert resolve_width_budget(0, 10) == 0


# -- step one and scoring -----------------------------------------------------

def _toy(rng, width=2, m_prime=2, step=0.05):
    net = random_rbf(rng, width=width)
    X, y = regression_data(rng, 40)
    aug = attach_width_candidates(net, 0, m_prime, step, 0.5, rng_seed=7)
    return net, aug, X, y


def test_step_one_projection_contract(rng):
    net, aug, X, y = _toy(rng)
    cfg = GrowthConfig(step_size=0.05, step_one_iters=30, step_one_lr=50.0)
    eps, deltas = step_one(aug, X, y, cfg)
    assert np.max(np.abs(eps)) <= 0.05
    assert max(np.linalg.norm(d) for d in deltas) <= 1 + 1e-12
    # the base network is never touched
    assert np.array_equal(aug.base.forward(X), net.forward(X))


def test_step_one_zero_iterations_returns_initial_values(rng):
    _, aug, X, y = _toy(rng)
    eps, deltas = step_one(aug, X, y, GrowthConfig(step_one_iters=0))
    np.testing.assert_array_equal(eps, aug.epsilons)
    for a, b in zip(deltas, aug.deltas):
        np.testing.assert_array_equal(a, b)


def test_step_one_penalty_shrinks_directions(rng):
    _, aug, X, y = _toy(rng)
    free = step_one(aug, X, y, GrowthConfig(step_size=0.05, step_one_iters=40,
                                            step_one_lr=0.1))[1]
    tied = step_one(aug, X, y, GrowthConfig(step_size=0.05, step_one_iters=40,
                                            step_one_lr=0.1, penalty_weight=1.0))[1]
    assert sum(np.sum(d * d) for d in tied) < sum(np.sum(d * d) for d in free)


def test_step_one_needs_candidates(rng):
    net = random_rbf(rng)
    with pytest.raises(ContractError):
        step_one(AugmentedNetwork(net, [], 0.1), *regression_data(rng, 5), GrowthConfig())


def test_step_one_reports_iteration_on_numeric_failure(rng):
    net = random_mlp(rng, head="regression", n_outputs=1)
    X, y = regression_data(rng, 10, 2)
    aug = attach_width_candidates(net, 0, 2, 0.5, 1.0, rng_seed=1)
    with np.errstate(all="ignore"), pytest.raises(NumericError, match="step one iteration"):
        step_one(aug, X, y * 1e200, GrowthConfig(step_size=0.5, step_one_lr=1e200))


def test_midpoint_rule_is_exact_when_the_gradient_is_affine_in_the_gate():
    # an identity network whose only candidate is a new neuron: the loss is
    # quadratic in the gate, so every midpoint rule integrates it exactly
    from firefly.network import GrowableNetwork, Layer, Neuron
    net = GrowableNetwork(1, [Layer("identity", [Neuron([0.7, -0.1], [0.4])])])
    X = np.linspace(-1, 1, 9)[:, None]
    y = np.sin(3 * X)
    aug = AugmentedNetwork(net, [CandidateGate("new", 0.1, [0.3, 0.2, 0.5])], 0.1)
    on, off = aug.loss(X, y, [0.1]), aug.loss(X, y, [0.0])
    for n in (1, 3, 7):
        sv = integrated_gradient_scores(aug, [0.1], aug.deltas, X, y, n)
        assert sv.scores[0] * 0.1 == pytest.approx(on - off, rel=1e-12)


def test_zero_gate_scores_use_gradient_at_zero(rng):
    _, aug, X, y = _toy(rng)
    eps = np.full(len(aug.candidates), 0.03)
    eps[1] = 0.0
    sv = integrated_gradient_scores(aug, eps, aug.deltas, X, y, 3)
    store = aug.parameter_store(eps, aug.deltas)
    from firefly import autodiff as ad
    g = ad.value_and_grad(aug.loss_program(X, y), store, None)[1]["eps"]
    assert sv.scores[1] == pytest.approx(g[1], rel=1e-12)
    assert isinstance(sv, ScoreVector) and len(sv) == len(aug.candidates)


def test_integrated_gradient_identity_at_64_points(rng):
    net, _, X, y = _toy(rng)
    aug = attach_width_candidates(net, 0, 1, 0.05, 0.5, rng_seed=2, split=False)
    sv = integrated_gradient_scores(aug, [0.05], aug.deltas, X, y, 64)
    diff = aug.loss(X, y, [0.05]) - aug.loss(X, y, [0.0])
    assert abs(sv.scores[0] * 0.05 - diff) <= 1e-4 * abs(diff) + 1e-8


def test_first_order_fidelity(rng):
    net, aug, X, y = _toy(rng, width=3, m_prime=2)
    residual = []
    for step in (1e-3, 5e-4):
        a = aug.with_values(np.full(len(aug.candidates), step))
        a.step_size = step
        sv = integrated_gradient_scores(a, a.epsilons, a.deltas, X, y, 3)
        eps = select_width(sv, 2, step)
        pred = float(eps @ sv.scores)
        actual = a.loss(X, y, eps) - net.loss(X, y)
        residual.append(abs(actual - pred))
    assert residual[0] / residual[1] > 2.5


# -- grow_step and the outer loop ------------------------------------------------

def test_grow_step_with_zero_budget_is_a_no_op(rng):
    net, _, X, y = _toy(rng)
    new, report = grow_step(net, X, y, GrowthConfig(width_budget=0))
    assert new.to_json() == net.to_json()
    assert report.loss_before == report.loss_after
    assert report.records()[0]["candidate_id"] is None


def test_grow_step_report_and_budget(rng):
    net, _, X, y = _toy(rng, width=3)
    cfg = GrowthConfig(step_size=0.05, width_budget=2, m_prime=3, step_one_iters=10)
    new, report = grow_step(net, X, y, cfg, phase=4)
    assert new.count_neurons() - net.count_neurons() <= 2
    assert sum(report.selected) == 2
    recs = report.records()
    assert len(recs) == 6
    assert set(recs[0]) == {"phase", "mode", "candidate_id", "kind", "score", "selected",
                            "loss_before", "loss_after", "neurons", "params"}
    assert recs[0]["phase"] == 4 and recs[0]["neurons"] == new.count_neurons()
    assert isinstance(report, GrowthReport)


def test_split_only_growth_never_keeps_host(rng):
    net, _, X, y = _toy(rng, width=3)
    new, report = grow_step(net, X, y, GrowthConfig(m_prime=0, step_one_iters=5))
    assert set(report.kinds) == {"split"}
    assert new.count_neurons() == 4
    host = int(np.flatnonzero(report.selected)[0])
    old = net.layers[0].neurons[host].theta
    assert not any(np.array_equal(n.theta, old) for n in new.layers[0].neurons)


def test_depth_growth_on_mlp(rng):
    net = random_mlp(rng, widths=[3, 3], head="regression", n_outputs=1)
    X, y = regression_data(rng, 30, 2)
    cfg = GrowthConfig(width_budget=0, depth_neuron_budget=2, depth_layer_budget=1,
                       m_prime=2, step_one_iters=5, step_size=0.05)
    new, report = grow_step(net, X, y, cfg, mode="depth")
    assert len(new.residual_blocks) == 1
    assert len(new.residual_blocks[0].neurons) <= 2
    both, _ = grow_step(net, X, y, GrowthConfig(width_budget=1, depth_neuron_budget=1,
                                                depth_layer_budget=1, step_one_iters=3),
                        mode="both")
    assert both.count_neurons() == net.count_neurons() + 1
    with pytest.raises(ContractError):
        grow_step(net, X, y, cfg, mode="sideways")


def test_fractional_budget_grows_thirty_percent(rng):
    net = random_mlp(rng, widths=[10], head="regression", n_outputs=1)
    X, y = regression_data(rng, 30, 2)
    new, _ = grow_step(net, X, y, GrowthConfig(width_budget=0.3, m_prime=4, step_one_iters=3))
    assert new.count_neurons() - net.count_neurons() <= 3


def test_history_bookkeeping(rng):
    net, _, X, y = _toy(rng, width=1)
    sched = Schedule(train_iters=50, grow_phases=3, learning_rate=0.05)
    final, hist = firefly_train(net, X, y, GrowthConfig(step_one_iters=5), sched)
    assert len(hist) == 4
    assert hist.neurons == [1, 2, 3, 4]
    assert final.count_neurons() == 4
    _, fixed = firefly_train(net, X, y, GrowthConfig(), Schedule(50, 0, 0.05))
    assert fixed.neurons == [1]


@pytest.mark.parametrize("seed", range(3))
def test_growth_never_permanently_hurts(seed):
    rng = np.random.default_rng(seed)
    from firefly.data import gen_toy_dataset, gen_toy_truth, init_rbf_network
    from firefly.training import fit_parameters
    ds = gen_toy_dataset(gen_toy_truth(seed), 300, seed)
    net = init_rbf_network(2, rng)
    fit_parameters(net, ds.X, ds.y, 500, 0.03)
    cfg = GrowthConfig(step_size=0.05, step_one_lr=100.0, m_prime=3, rng_seed=seed)
    for phase in range(3):
        before = net.loss(ds.X, ds.y)
        net, _ = grow_step(net, ds.X, ds.y, cfg, phase=phase)
        after = fit_parameters(net, ds.X, ds.y, 300, 0.03)
        assert after <= before + 1e-6


def test_config_validation():
    with pytest.raises(ContractError):
        GrowthConfig(step_size=0)
    with pytest.raises(ContractError):
        GrowthConfig(quadrature_points=0)
    with pytest.raises(ContractError):
        GrowthConfig(width_budget=-1)
    with pytest.raises(ContractError):
        Schedule(learning_rate=0)
