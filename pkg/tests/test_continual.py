from dataclasses import replace

import numpy as np
import pytest

from firefly.continual import (
    ContinualConfig,
    MasterNetwork,
    TaskMask,
    accuracy,
    evaluate_all_tasks,
    grow_for_task,
    retrieve_task_model,
    train_selection_mask,
)
from firefly.data import gen_cl_tasks
from firefly.exceptions import ContractError, StructuralError
from firefly.experiments import split_dataset

FAST = ContinualConfig(finetune_iters=150, max_grow_rounds=2, mask_epochs=60, m_prime=6)


@pytest.fixture(scope="module")
def suite():
    return [split_dataset(t, 0.3) for t in gen_cl_tasks(5, 11, n_per_class=60)]


@pytest.fixture(scope="module")
def learned(suite):
    """Master after five tasks, plus per-task outputs captured right after each task."""
    master, log, snaps, params = MasterNetwork(2, 3), [], {}, []
    tests = {}
    for t, (train, test) in enumerate(suite):
        tests[t] = test
        grow_for_task(master, train, FAST, t, tests, log)
        snaps[t] = retrieve_task_model(master, t).forward(test.X)
        params.append(master.count_params())
    return master, log, snaps, params


def test_retrieval_is_bit_exact_after_later_tasks(suite, learned):
    master, _, snaps, _ = learned
    for t, (_, test) in enumerate(suite):
        assert np.array_equal(retrieve_task_model(master, t).forward(test.X), snaps[t])


def test_parameter_count_never_shrinks(learned):
    _, _, _, params = learned
    assert all(b >= a for a, b in zip(params, params[1:]))


def test_masks_are_well_formed(learned):
    master, _, _, _ = learned
    master.check()
    for t, mask in master.masks.items():
        assert mask.bits.dtype == bool and mask.indices.size >= 1
        assert master.mask_bits(t).size == len(master)
        assert all(master.locked[i] for i in mask.indices)


def test_capacity_accounting(learned):
    master, _, _, _ = learned
    hidden = sum(n.theta.size for n in master.neurons)
    heads = sum(len(m.indices) * 3 for m in master.masks.values())
    assert master.count_params() == hidden + heads
    for p in master.provenance:
        assert p.kind in ("brand-new", "unlocked-copy")
        if p.kind == "unlocked-copy":
            assert p.source is not None and p.source < len(master)


def test_log_records(learned):
    _, log, _, _ = learned
    keys = {"task_id", "round", "neurons_added_copy", "neurons_added_new", "master_params",
            "train_acc", "eval_acc_per_task"}
    assert all(set(r) == keys for r in log)
    assert [r["round"] for r in log if r["task_id"] == 0][0] == 0
    last = [r for r in log if r["task_id"] == 4][-1]
    assert len(last["eval_acc_per_task"]) == 5


def test_evaluation_table(suite, learned):
    master, _, _, _ = learned
    table = evaluate_all_tasks(master, {0: suite[0][1]})
    assert [r["task_id"] for r in table["tasks"]] == [0]
    assert table["average_accuracy"] == table["tasks"][0]["accuracy"]
    assert table["master_params"] == master.count_params()


def test_unknown_task_is_rejected(learned):
    master, _, _, _ = learned
    with pytest.raises(StructuralError):
        retrieve_task_model(master, 99)


def test_mask_with_no_training_keeps_everything(suite, learned):
    master, _, _, _ = learned
    train = suite[0][0]
    mask = train_selection_mask(master, train.X, train.y, epochs=0)
    assert mask.bits.all()
    with pytest.raises(ContractError):
        train_selection_mask(MasterNetwork(2, 3), train.X, train.y)


def test_mask_training_separates_useful_from_useless_neurons():
    # neurons 0 and 1 solve the task, the rest are constant-zero on the data
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] > 0).astype(int)
    master = MasterNetwork(2, 2)
    master.append([5.0, 0.0, 0.0], 0, "brand-new")
    master.append([-5.0, 0.0, 0.0], 0, "brand-new")
    for _ in range(3):
        master.append([0.0, 0.0, -50.0], 0, "brand-new")
    mask = train_selection_mask(master, X, y, epochs=300, lr=0.5, penalty=1e-2)
    assert mask.bits[:2].any()
    assert not mask.bits[2:].any()
    full = TaskMask(0, np.ones(5))
    assert full.indices.tolist() == [0, 1, 2, 3, 4]
    assert TaskMask(0, np.zeros(5)).indices.size == 0


def test_single_task_history(suite):
    master, log = MasterNetwork(2, 3), []
    grow_for_task(master, suite[0][0], FAST, 0, {0: suite[0][1]}, log)
    assert all(len(r["eval_acc_per_task"]) == 1 for r in log)
    assert log[-1]["master_params"] == master.count_params()
    assert all(p.kind == "brand-new" for p in master.provenance)


def test_zero_budget_adds_nothing(suite):
    master = MasterNetwork(2, 3)
    cfg = replace(FAST, width_budget=0, target_accuracy=1.0)
    grow_for_task(master, suite[0][0], cfg, 0)
    assert len(master) == cfg.init_width
    before = [n.theta.copy() for n in master.neurons]
    grow_for_task(master, suite[1][0], cfg, 1)
    assert len(master) == cfg.init_width
    assert all(np.array_equal(a, n.theta) for a, n in zip(before, master.neurons))


def test_task_ids_cannot_repeat(suite):
    master = MasterNetwork(2, 3)
    grow_for_task(master, suite[0][0], FAST, 0)
    with pytest.raises(StructuralError):
        grow_for_task(master, suite[0][0], FAST, 0)
    with pytest.raises(ContractError):
        ContinualConfig(target_accuracy=2.0)


def test_accuracy_helper():
    master = MasterNetwork(2, 2)
    master.append([1.0, 0.0, 0.0], 0, "brand-new")
    net = master.subnetwork([0], np.array([[1.0, -1.0]]))
    X = np.array([[1.0, 0.0], [2.0, 0.0]])
    assert accuracy(net, X, [0, 0]) == 1.0
    assert accuracy(net, X, [1, 0]) == 0.5
