import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firefly import autodiff as ad
from firefly.exceptions import NumericError, StructuralError

from builders import gradient_check, store_loss
from oracles import central_difference, relative_error


def make_store(**groups):
    store = ad.ParameterStore()
    for name, value in groups.items():
        store.add(name, value)
    return store


def grad_of(program, store):
    return ad.value_and_grad(program, store, None)


def test_store_layout_and_copy():
    store = make_store(a=np.arange(6.0).reshape(2, 3), b=[1.0])
    assert len(store) == 7
    assert store.shape_of("a") == (2, 3)
    np.testing.assert_array_equal(store["a"], np.arange(6.0).reshape(2, 3))
    other = store.copy()
    other["b"] = [5.0]
    assert store["b"][0] == 1.0
    with pytest.raises(StructuralError):
        store.add("a", [0.0])
    with pytest.raises(StructuralError):
        store["missing"]


@pytest.mark.parametrize("op, expected", [
    (lambda a, b: a + b, lambda a, b: (np.ones(3), np.ones(3))),
    (lambda a, b: a - b, lambda a, b: (np.ones(3), -np.ones(3))),
    (lambda a, b: a * b, lambda a, b: (b, a)),
    (lambda a, b: a / b, lambda a, b: (1 / b, -a / b**2)),
])
def test_binary_primitives(op, expected):
    a0, b0 = np.array([1.0, -2.0, 3.0]), np.array([0.5, 4.0, -1.5])
    store = make_store(a=a0, b=b0)
    _, g = grad_of(lambda t, _: ad.sum_(op(t.param("a"), t.param("b"))), store)
    ea, eb = expected(a0, b0)
    np.testing.assert_allclose(g["a"], ea)
    np.testing.assert_allclose(g["b"], eb)


def test_reflected_operators_and_negation():
    store = make_store(a=[2.0])
    loss, g = grad_of(lambda t, _: ad.sum_(3.0 - t.param("a") + 1.0 / t.param("a")
                                            + 2.0 * (-t.param("a"))), store)
    assert loss == pytest.approx(3.0 - 2.0 + 0.5 - 4.0)
    assert g["a"][0] == pytest.approx(-1.0 - 0.25 - 2.0)


def test_broadcast_gradient_is_summed():
    store = make_store(w=np.ones((2, 3)), b=np.zeros(3))
    _, g = grad_of(lambda t, _: ad.sum_(t.param("w") + t.param("b")), store)
    np.testing.assert_array_equal(g["b"], [2.0, 2.0, 2.0])


def test_indexing_accumulates_repeated_entries():
    store = make_store(v=[1.0, 2.0, 3.0])
    _, g = grad_of(lambda t, _: ad.sum_(t.param("v")[np.array([0, 0, 2])]), store)
    np.testing.assert_array_equal(g["v"], [2.0, 0.0, 1.0])


def test_relu_gradient_is_a_step():
    store = make_store(v=[-1.0, 2.0])
    _, g = grad_of(lambda t, _: ad.sum_(ad.relu(t.param("v"))), store)
    np.testing.assert_array_equal(g["v"], [0.0, 1.0])


def test_concat_and_reshape_round_trip_gradients():
    store = make_store(a=[1.0, 2.0], b=[3.0])
    w = np.array([1.0, 10.0, 100.0])
    _, g = grad_of(lambda t, _: ad.dot(ad.concat([t.param("a"), t.param("b")])
                                       .reshape(1, 3), w)[0], store)
    np.testing.assert_array_equal(g["a"], [1.0, 10.0])
    np.testing.assert_array_equal(g["b"], [100.0])


def test_softmax_cross_entropy_matches_closed_form():
    z = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    labels = np.array([1, 2])
    store = make_store(z=z)
    loss, g = grad_of(lambda t, _: ad.softmax_cross_entropy(t.param("z"), labels), store)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    assert loss == pytest.approx(-np.mean(np.log(p[[0, 1], labels])))
    onehot = np.eye(3)[labels]
    np.testing.assert_allclose(g["z"], (p - onehot) / 2)


def test_numpy_dispatch_matches_tape_values():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)
    store = make_store(w=w, b=b)
    tape, loss = ad.record_forward(
        lambda t, _: ad.mean(ad.exp(-0.5 * ad.affine(x, t.param("w"), t.param("b")))), store, None)
    assert loss == ad.mean(ad.exp(-0.5 * ad.affine(x, w, b)))


def test_frozen_entries_get_zero_gradient_and_do_not_move():
    store = ad.ParameterStore()
    store.add("a", [1.0, 2.0])
    store.add("b", [3.0], frozen=True)
    _, g = grad_of(lambda t, _: ad.sum_(t.param("a") * t.param("b")), store)
    assert g["b"][0] == 0.0
    ad.sgd_step(store, g, 0.1)
    assert store["b"][0] == 3.0
    np.testing.assert_allclose(store["a"], [1.0 - 0.3, 2.0 - 0.3])


def test_stack_of_noncontiguous_groups():
    store = make_store(a=[1.0, 2.0], gap=[0.0], b=[3.0, 4.0])
    _, g = grad_of(lambda t, _: ad.sum_(t.stack(["b", "a"]) * np.array([[1.0, 2.0],
                                                                       [3.0, 4.0]])), store)
    np.testing.assert_array_equal(g["b"], [1.0, 2.0])
    np.testing.assert_array_equal(g["a"], [3.0, 4.0])
    assert g["gap"][0] == 0.0


def test_reevaluate_tracks_store_changes():
    store = make_store(a=[2.0])
    tape, loss = ad.record_forward(lambda t, _: ad.sum_(t.param("a") * t.param("a")), store, None)
    store["a"] = [3.0]
    assert float(tape.reevaluate()) == 9.0


def test_errors():
    store = make_store(a=[1.0, 2.0])
    with pytest.raises(StructuralError):
        ad.record_forward(lambda t, _: t.param("a"), store, None)
    with pytest.raises(StructuralError):
        ad.record_forward(lambda t, _: 1.0, store, None)
    with np.errstate(divide="ignore"), pytest.raises(NumericError, match="non-finite"):
        ad.record_forward(lambda t, _: ad.sum_(t.param("a") / 0.0), store, None)
    tape, _ = ad.record_forward(lambda t, _: ad.sum_(t.param("a")), store, None)
    store.add("late", [0.0])
    with pytest.raises(StructuralError):
        ad.backward(tape, store)
    with pytest.raises(ValueError):
        ad.sgd_step(store, np.zeros(len(store)), 0.0)
    with pytest.raises(NumericError):
        ad.sgd_step(store, np.full(len(store), np.nan), 0.1)
    with pytest.raises(StructuralError):
        ad.squared_error(np.zeros(2), np.zeros(3))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6),
       st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_composite_gradient_matches_finite_differences(a, b):
    a, b = np.array(a), np.array(b[: len(a)] + [0.5] * (len(a) - len(b)))
    store = make_store(a=a, b=b)

    def program(t, _):
        u, v = t.param("a"), t.param("b")
        return ad.mean(ad.exp(-0.5 * (u * v + 0.3) * (u - v)) + u * u / (1.0 + v * v))

    tape, _ = ad.record_forward(program, store, None)
    analytic = ad.backward(tape, store).values
    numeric = central_difference(store_loss(program, store), store.values)
    assert relative_error(analytic, numeric) <= 1e-5


@pytest.mark.parametrize("case", range(12))
def test_network_gradients_match_finite_differences(case):
    name, err = gradient_check(np.random.default_rng(case), case)
    assert err <= 1e-5, name
