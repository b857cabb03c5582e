"""Growable networks and their gated growth candidates.

A :class:`GrowableNetwork` is a stack of hidden layers of neurons followed by
a linear head. Every neuron carries ``theta`` (incoming weights with the bias
last) and ``out_weight``. Only neurons of the last hidden layer own head
weights; in earlier layers the outgoing weights are the next layer's
``theta`` columns, so ``out_weight`` is empty there.

Residual blocks ``z -> z + sum_i w_i * act(theta_i . [z, 1])`` may sit after
any hidden layer of a rectifier network (slot ``l`` follows layer ``l``).

An :class:`AugmentedNetwork` wraps a base network together with gated
candidates. With every gate at zero its output equals the base output bit for
bit, because the gated paths reduce to the very same floating point
operations.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, StructuralError

SCHEMA_VERSION = 1
ACTIVATIONS = ("rbf", "relu", "identity")
HEADS = ("regression", "classification")
GATE_KINDS = ("split", "new", "layer", "unlock")


def activate(kind, z):
    """Elementwise activation; works on arrays and tape variables alike."""
    if kind == "rbf":
        return ad.exp(-0.5 * (z * z))
    if kind == "relu":
        return ad.relu(z)
    if kind == "identity":
        return z
    raise StructuralError(f"unknown activation {kind!r}")


@dataclass
class Neuron:
    theta: np.ndarray
    out_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64).ravel()
        self.out_weight = np.array(self.out_weight, dtype=np.float64).ravel()
        if not (np.isfinite(self.theta).all() and np.isfinite(self.out_weight).all()):
            raise StructuralError("neuron parameters must be finite")

    @property
    def size(self):
        return self.theta.size + self.out_weight.size

    def copy(self):
        return Neuron(self.theta.copy(), self.out_weight.copy())


@dataclass
class Layer:
    activation: str
    neurons: list

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise StructuralError(f"unknown activation {self.activation!r}")

    @property
    def width(self):
        return len(self.neurons)

    def theta_matrix(self):
        return np.stack([n.theta for n in self.neurons])

    def out_matrix(self):
        return np.stack([n.out_weight for n in self.neurons])


@dataclass
class ResidualBlock:
    slot: int
    neurons: list


class GrowableNetwork:
    """Feed-forward network whose width and depth can be grown.

    Parameters
    ----------
    input_dim : int
    layers : list of Layer
    head : {"regression", "classification"}
    n_outputs : int
    residual_blocks : list of ResidualBlock, applied in list order per slot.
    """

    def __init__(self, input_dim, layers, head="regression", n_outputs=1, residual_blocks=()):
        if head not in HEADS:
            raise StructuralError(f"unknown head {head!r}")
        self.input_dim = int(input_dim)
        self.layers = list(layers)
        self.head = head
        self.n_outputs = int(n_outputs)
        self.residual_blocks = list(residual_blocks)
        self.validate()

    # -- construction -------------------------------------------------
    @classmethod
    def rbf(cls, thetas, weights):
        """Single-hidden-layer RBF regression net ``sum_i w_i exp(-(a_i x + b_i)^2 / 2)``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        weights = np.asarray(weights, dtype=np.float64).reshape(len(thetas), -1)
        neurons = [Neuron(t, w) for t, w in zip(thetas, weights)]
        return cls(thetas.shape[1] - 1, [Layer("rbf", neurons)], "regression", weights.shape[1])

    @classmethod
    def mlp(cls, input_dim, widths, n_outputs, head="classification", activation="relu",
            init_scale=None, rng=None):
        """Randomly initialised rectifier MLP (He-style scaling unless ``init_scale``)."""
        rng = np.random.default_rng(rng)
        layers = []
        fan_in = input_dim
        for li, width in enumerate(widths):
            scale = init_scale if init_scale is not None else np.sqrt(2.0 / fan_in)
            last = li == len(widths) - 1
            neurons = []
            for _ in range(width):
                theta = np.r_[rng.normal(0.0, scale, fan_in), 0.0]
                out = rng.normal(0.0, np.sqrt(1.0 / width), n_outputs) if last else np.zeros(0)
                neurons.append(Neuron(theta, out))
            layers.append(Layer(activation, neurons))
            fan_in = width
        return cls(input_dim, layers, head, n_outputs)

    def validate(self):
        if not self.layers:
            raise StructuralError("network needs at least one hidden layer")
        fan_in = self.input_dim
        for li, layer in enumerate(self.layers):
            last = li == len(self.layers) - 1
            for ni, n in enumerate(layer.neurons):
                if n.theta.size != fan_in + 1:
                    raise StructuralError(
                        f"layer {li} neuron {ni}: theta has {n.theta.size} entries, "
                        f"expected {fan_in + 1}"
                    )
                want = self.n_outputs if last else 0
                if n.out_weight.size != want:
                    raise StructuralError(
                        f"layer {li} neuron {ni}: out_weight has {n.out_weight.size} "
                        f"entries, expected {want}"
                    )
            fan_in = layer.width
        slots = set(self.residual_slots)
        for block in self.residual_blocks:
            if block.slot not in slots:
                raise StructuralError(f"residual block at invalid slot {block.slot}")
            width = self.layers[block.slot].width
            for n in block.neurons:
                if n.theta.size != width + 1 or n.out_weight.size != width:
                    raise StructuralError(f"residual block at slot {block.slot} has wrong shape")

    @property
    def residual_slots(self):
        if any(layer.activation == "rbf" for layer in self.layers):
            return []
        return list(range(len(self.layers)))

    def blocks_at(self, slot):
        return [b for b in self.residual_blocks if b.slot == slot]

    def copy(self):
        return copy.deepcopy(self)

    # -- evaluation ---------------------------------------------------
    def _check_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1 and self.input_dim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise StructuralError(
                f"input has shape {X.shape}, expected (n, {self.input_dim})"
            )
        return X

    def matrices(self):
        thetas = [layer.theta_matrix() for layer in self.layers]
        out = self.layers[-1].out_matrix()
        blocks = [(b.slot, np.stack([n.theta for n in b.neurons]),
                   np.stack([n.out_weight for n in b.neurons]))
                  for b in self.residual_blocks if b.neurons]
        return thetas, out, blocks

    def forward(self, X):
        """Network output, shape ``(n, n_outputs)``."""
        X = self._check_input(X)
        thetas, out, blocks = self.matrices()
        return propagate(X, [l.activation for l in self.layers], thetas, out, blocks)

    __call__ = forward

    def loss(self, X, y):
        return head_loss(self.head, self.forward(X), y)

    # -- parameters ---------------------------------------------------
    def parameter_store(self, frozen=()):
        """Flat store with one group per neuron part; ``frozen`` holds group names."""
        store = ParameterStore()
        for name, arr in self.named_parameters():
            store.add(name, arr, frozen=name in frozen)
        return store

    def named_parameters(self):
        last = len(self.layers) - 1
        for li, layer in enumerate(self.layers):
            for ni, n in enumerate(layer.neurons):
                yield f"l{li}.n{ni}.theta", n.theta
        for ni, n in enumerate(self.layers[last].neurons):
            yield f"l{last}.n{ni}.out", n.out_weight
        for bi, block in enumerate(self.residual_blocks):
            for ni, n in enumerate(block.neurons):
                yield f"b{bi}.n{ni}.theta", n.theta
                yield f"b{bi}.n{ni}.out", n.out_weight

    def load_store(self, store):
        last = len(self.layers) - 1
        for li, layer in enumerate(self.layers):
            for ni, n in enumerate(layer.neurons):
                n.theta = store[f"l{li}.n{ni}.theta"].copy()
                if li == last:
                    n.out_weight = store[f"l{li}.n{ni}.out"].copy()
        for bi, block in enumerate(self.residual_blocks):
            for ni, n in enumerate(block.neurons):
                n.theta = store[f"b{bi}.n{ni}.theta"].copy()
                n.out_weight = store[f"b{bi}.n{ni}.out"].copy()

    def tape_matrices(self, tape):
        last = len(self.layers) - 1
        thetas = [tape.stack([f"l{li}.n{ni}.theta" for ni in range(layer.width)])
                  for li, layer in enumerate(self.layers)]
        out = tape.stack([f"l{last}.n{ni}.out" for ni in range(self.layers[last].width)])
        blocks = []
        for bi, block in enumerate(self.residual_blocks):
            if block.neurons:
                k = range(len(block.neurons))
                blocks.append((block.slot, tape.stack([f"b{bi}.n{i}.theta" for i in k]),
                               tape.stack([f"b{bi}.n{i}.out" for i in k])))
        return thetas, out, blocks

    def loss_program(self, X, y):
        """Tape program computing the training loss of this network."""
        X = self._check_input(X)
        acts = [l.activation for l in self.layers]

        def program(tape, _inputs=None):
            thetas, out, blocks = self.tape_matrices(tape)
            return head_loss(self.head, propagate(X, acts, thetas, out, blocks), y)

        return program

    # -- counting -----------------------------------------------------
    def count_params(self):
        total = sum(n.size for layer in self.layers for n in layer.neurons)
        return total + sum(n.size for b in self.residual_blocks for n in b.neurons)

    def count_neurons(self, layer=None):
        if layer is None:
            return sum(l.width for l in self.layers)
        if not 0 <= layer < len(self.layers):
            raise StructuralError(f"invalid layer index {layer}")
        return self.layers[layer].width

    # -- checkpoint ---------------------------------------------------
    def to_dict(self):
        def neuron(n):
            return {"theta": n.theta.tolist(), "out_weight": n.out_weight.tolist()}

        return {
            "schema_version": SCHEMA_VERSION,
            "head_kind": self.head,
            "input_dim": self.input_dim,
            "n_outputs": self.n_outputs,
            "layers": [{"activation": l.activation, "neurons": [neuron(n) for n in l.neurons]}
                       for l in self.layers],
            "residual_blocks": [{"slot": b.slot, "neurons": [neuron(n) for n in b.neurons]}
                                for b in self.residual_blocks],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise StructuralError(f"unsupported schema_version {doc.get('schema_version')!r}")

        def neurons(items):
            return [Neuron(n["theta"], n["out_weight"]) for n in items]

        layers = [Layer(l["activation"], neurons(l["neurons"])) for l in doc["layers"]]
        input_dim = doc.get("input_dim", len(doc["layers"][0]["neurons"][0]["theta"]) - 1)
        n_outputs = doc.get("n_outputs", len(doc["layers"][-1]["neurons"][0]["out_weight"]))
        blocks = [ResidualBlock(b["slot"], neurons(b["neurons"]))
                  for b in doc.get("residual_blocks", [])]
        return cls(input_dim, layers, doc["head_kind"], n_outputs, blocks)

    def to_json(self):
        # repr() of a Python float is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        widths = [l.width for l in self.layers]
        return (f"GrowableNetwork(input_dim={self.input_dim}, widths={widths}, "
                f"head={self.head!r}, blocks={len(self.residual_blocks)})")


ParameterStore = ad.ParameterStore


def head_loss(head, outputs, y):
    if head == "regression":
        y = np.asarray(y, dtype=np.float64).reshape(outputs.shape)
        return ad.squared_error(outputs, y)
    return ad.softmax_cross_entropy(outputs, y)


def _affine_rows(A, theta):
    return ad.affine(A, theta[:, :-1], theta[:, -1])


def propagate(X, activations, thetas, out, blocks=(), gates=None):
    """Shared forward pass over arrays or tape variables.

    ``blocks`` is a list of ``(slot, theta, out)``. ``gates`` maps a layer or
    slot to perturbation terms, see :meth:`AugmentedNetwork._tape_gates`.
    """
    gates = gates or {}
    A = X
    carry = None
    for li, act in enumerate(activations):
        theta = thetas[li]
        g = gates.get(("layer", li))
        Z = _affine_rows(A, theta)
        if carry is not None:
            Z = Z + carry
            carry = None
        if g is not None and g.get("shift") is not None:
            shift = g["shift"]
            Zp = Z + _affine_rows(A, shift)
            if g["mode"] == "split":
                Zm = Z - _affine_rows(A, shift)
                H = 0.5 * (activate(act, Zp) + activate(act, Zm))
            else:
                H = activate(act, Zp)
        else:
            H = activate(act, Z)
        for slot, bt, bo in blocks:
            if slot == li:
                H = H + ad.dot(activate(act, _affine_rows(H, bt)), bo)
        d = gates.get(("slot", li))
        if d is not None:
            Hd = activate(act, _affine_rows(H, d["theta"])) * d["eps"]
            H = H + ad.dot(Hd, d["out"])
        if g is not None and g.get("new_theta") is not None:
            Hn = activate(act, _affine_rows(A, g["new_theta"])) * g["new_eps"]
            carry = ad.dot(Hn, g["new_out"])
        A = H
    Y = ad.dot(A, out)
    if carry is not None:
        Y = Y + carry
    return Y


@dataclass
class CandidateGate:
    """One growth candidate: a gate magnitude ``epsilon`` and a direction ``delta``.

    ``kind`` is ``"split"`` (host neuron replaced by two half-weight copies at
    ``theta +- epsilon * delta``), ``"unlock"`` (host replaced by a single copy at
    ``theta + epsilon * delta``), ``"new"`` (a brand-new neuron whose output is
    scaled by ``epsilon``; ``delta`` holds its input weights, bias and outgoing
    weights) or ``"layer"`` (a neuron of a new residual layer at ``slot``).
    """

    kind: str
    epsilon: float
    delta: np.ndarray
    layer: int = 0
    host: int | None = None
    slot: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise StructuralError(f"unknown gate kind {self.kind!r}")
        self.delta = np.array(self.delta, dtype=np.float64).ravel()


def project_delta(delta):
    norm = np.linalg.norm(delta)
    return delta / norm if norm > 1.0 else delta


class AugmentedNetwork:
    """A base network plus gated candidates realising the neighbourhood ``f_{eps, delta}``."""

    def __init__(self, base, candidates, step_size, width_budget=None, depth_budget=None):
        if not step_size > 0:
            raise ContractError(f"step_size must be positive, got {step_size}")
        self.base = base
        self.candidates = list(candidates)
        self.step_size = float(step_size)
        self.width_budget = width_budget
        self.depth_budget = depth_budget
        for gate in self.candidates:
            self._check_gate(gate)

    def _check_gate(self, gate):
        net = self.base
        if gate.kind == "layer":
            if gate.slot not in net.residual_slots:
                raise StructuralError(f"invalid residual slot {gate.slot}")
            w = net.layers[gate.slot].width
            expected = 2 * w + 1
        else:
            if not 0 <= gate.layer < len(net.layers):
                raise StructuralError(f"invalid layer index {gate.layer}")
            fan_in = net.layers[gate.layer].neurons[0].theta.size
            if gate.kind in ("split", "unlock"):
                if gate.host is None or not 0 <= gate.host < net.layers[gate.layer].width:
                    raise StructuralError(f"invalid host neuron {gate.host}")
                expected = fan_in
            else:
                expected = fan_in + _fan_out(net, gate.layer)
        if gate.delta.size != expected:
            raise StructuralError(
                f"{gate.kind} gate delta has {gate.delta.size} entries, expected {expected}"
            )

    def __len__(self):
        return len(self.candidates)

    @property
    def epsilons(self):
        return np.array([g.epsilon for g in self.candidates], dtype=np.float64)

    @property
    def deltas(self):
        return [g.delta.copy() for g in self.candidates]

    def with_values(self, epsilons=None, deltas=None):
        aug = AugmentedNetwork(self.base, [copy.copy(g) for g in self.candidates],
                               self.step_size, self.width_budget, self.depth_budget)
        if epsilons is not None:
            for g, e in zip(aug.candidates, np.asarray(epsilons, dtype=np.float64)):
                g.epsilon = float(e)
        if deltas is not None:
            for g, d in zip(aug.candidates, deltas):
                g.delta = np.array(d, dtype=np.float64).ravel()
        return aug

    # -- gate terms ---------------------------------------------------
    def _gate_terms(self, eps, deltas, ops):
        """Group candidates into per-layer / per-slot perturbation terms.

        ``ops`` supplies ``take``/``stack`` so the same code builds numpy
        arrays or tape variables.
        """
        net = self.base
        terms = {}
        by_key = {}
        for i, gate in enumerate(self.candidates):
            if gate.kind in ("split", "unlock"):
                key = ("layer", gate.layer, "host")
            elif gate.kind == "new":
                key = ("layer", gate.layer, "new")
            else:
                key = ("slot", gate.slot)
            by_key.setdefault(key, []).append(i)
        for key, idx in by_key.items():
            if key[0] == "slot":
                w = net.layers[key[1]].width
                D = ops.stack([deltas[i] for i in idx])
                terms[("slot", key[1])] = {
                    "theta": D[:, : w + 1], "out": D[:, w + 1:], "eps": ops.take(eps, idx),
                }
                continue
            li, part = key[1], key[2]
            entry = terms.setdefault(("layer", li), {})
            if part == "host":
                kinds = {self.candidates[i].kind for i in idx}
                if len(kinds) != 1:
                    raise StructuralError(f"layer {li} mixes split and unlock gates")
                hosts = [self.candidates[i].host for i in idx]
                if len(set(hosts)) != len(hosts):
                    raise StructuralError(f"layer {li} has two gates on one host")
                sel = np.zeros((net.layers[li].width, len(idx)))
                sel[hosts, np.arange(len(idx))] = 1.0
                D = ops.stack([deltas[i] for i in idx])
                e = ops.take(eps, idx).reshape(len(idx), 1)
                entry["shift"] = ad.dot(sel, e * D)
                entry["mode"] = kinds.pop()
            else:
                fan_in = net.layers[li].neurons[0].theta.size
                D = ops.stack([deltas[i] for i in idx])
                entry["new_theta"] = D[:, :fan_in]
                entry["new_out"] = D[:, fan_in:]
                entry["new_eps"] = ops.take(eps, idx)
        return terms

    def forward(self, X, epsilons=None, deltas=None):
        """Output of ``f_{eps, delta}``; defaults to the gates' stored values."""
        X = self.base._check_input(X)
        eps = self.epsilons if epsilons is None else np.asarray(epsilons, dtype=np.float64)
        deltas = self.deltas if deltas is None else [np.asarray(d, dtype=np.float64) for d in deltas]
        thetas, out, blocks = self.base.matrices()
        terms = self._gate_terms(eps, deltas, _NumpyOps)
        return propagate(X, [l.activation for l in self.base.layers], thetas, out, blocks, terms)

    __call__ = forward

    def loss(self, X, y, epsilons=None, deltas=None):
        return head_loss(self.base.head, self.forward(X, epsilons, deltas), y)

    # -- differentiation ----------------------------------------------
    def parameter_store(self, epsilons=None, deltas=None, freeze_base=True):
        """Store holding base parameters plus ``eps`` and ``delta{i}`` groups."""
        store = self.base.parameter_store()
        if freeze_base:
            store.frozen[:] = True
        store.add("eps", self.epsilons if epsilons is None else epsilons)
        deltas = self.deltas if deltas is None else deltas
        for i, d in enumerate(deltas):
            store.add(f"delta{i}", d)
        return store

    def loss_program(self, X, y):
        X = self.base._check_input(X)
        acts = [l.activation for l in self.base.layers]
        n = len(self.candidates)

        def program(tape, _inputs=None):
            thetas, out, blocks = self.base.tape_matrices(tape)
            ops = _TapeOps(tape)
            eps = tape.param("eps")
            deltas = [tape.param(f"delta{i}") for i in range(n)]
            terms = self._gate_terms(eps, deltas, ops)
            return head_loss(self.base.head, propagate(X, acts, thetas, out, blocks, terms), y)

        return program


def _fan_out(net, layer):
    if layer == len(net.layers) - 1:
        return net.n_outputs
    return net.layers[layer + 1].width


class _NumpyOps:
    @staticmethod
    def stack(items):
        return np.stack(items)

    @staticmethod
    def take(v, idx):
        return v[np.asarray(idx)]


class _TapeOps:
    def __init__(self, tape):
        self.tape = tape

    def stack(self, items):
        return ad.concat([d.reshape(1, d.shape[0]) for d in items], axis=0)

    def take(self, v, idx):
        return v[np.asarray(idx)]


# -- candidate construction ------------------------------------------------

def _normal_direction(rng, size, scale):
    return project_delta(rng.normal(0.0, scale, size))


def attach_width_candidates(net, layer, m_prime, step_size, init_scale=0.1, rng_seed=0,
                            split=True):
    """Split gate for every neuron of ``layer`` plus ``m_prime`` brand-new neuron gates.

    Directions are drawn i.i.d. normal with standard deviation ``init_scale``
    and projected onto the unit ball; every gate starts at ``step_size``.
    """
    if m_prime < 0:
        raise ContractError("m_prime must be non-negative")
    if not 0 <= layer < len(net.layers):
        raise StructuralError(f"invalid layer index {layer}")
    rng = np.random.default_rng(rng_seed)
    fan_in = net.layers[layer].neurons[0].theta.size if net.layers[layer].neurons else None
    if fan_in is None:
        fan_in = (net.input_dim if layer == 0 else net.layers[layer - 1].width) + 1
    gates = []
    if split:
        for host in range(net.layers[layer].width):
            gates.append(CandidateGate("split", step_size,
                                       _normal_direction(rng, fan_in, init_scale),
                                       layer=layer, host=host))
    size = fan_in + _fan_out(net, layer)
    for _ in range(m_prime):
        gates.append(CandidateGate("new", step_size, _normal_direction(rng, size, init_scale),
                                   layer=layer))
    return AugmentedNetwork(net, gates, step_size)


def attach_depth_candidates(net, m_prime_per_slot, step_size, init_scale=0.1, rng_seed=0):
    """``m_prime_per_slot`` gated neurons of a fresh residual layer at every slot."""
    slots = net.residual_slots
    if not slots:
        raise StructuralError("network has no residual slots")
    rng = np.random.default_rng(rng_seed)
    gates = []
    for slot in slots:
        w = net.layers[slot].width
        for _ in range(m_prime_per_slot):
            gates.append(CandidateGate("layer", step_size,
                                       _normal_direction(rng, 2 * w + 1, init_scale), slot=slot))
    return AugmentedNetwork(net, gates, step_size)


def merge_candidates(*augs):
    """Union of candidate sets built on the same base network."""
    base = augs[0].base
    if any(a.base is not base for a in augs):
        raise StructuralError("candidate sets built on different base networks")
    gates = [g for a in augs for g in a.candidates]
    return AugmentedNetwork(base, gates, augs[0].step_size)


# -- materialisation -------------------------------------------------------

def _split_columns(net, layer, host, factor_pairs):
    """Replace input column ``host`` of everything fed by ``layer`` with ``len(factor_pairs)`` columns."""
    if layer == len(net.layers) - 1:
        return
    for n in net.layers[layer + 1].neurons:
        col = n.theta[host]
        n.theta = np.concatenate([n.theta[:host], [col * f for f in factor_pairs],
                                  n.theta[host + 1:]])


def _block_split(net, layer, host, copies):
    for block in net.blocks_at(layer):
        for n in block.neurons:
            col = n.theta[host]
            n.theta = np.concatenate([n.theta[:host], [col / copies] * copies, n.theta[host + 1:]])
            w = n.out_weight[host]
            n.out_weight = np.concatenate([n.out_weight[:host], [w] * copies,
                                           n.out_weight[host + 1:]])


def _append_neuron(net, layer, theta, out):
    """Append a neuron to ``layer`` whose outgoing weights are ``out``."""
    last = layer == len(net.layers) - 1
    width = net.layers[layer].width
    if last:
        net.layers[layer].neurons.append(Neuron(theta, out))
    else:
        net.layers[layer].neurons.append(Neuron(theta))
        for j, n in enumerate(net.layers[layer + 1].neurons):
            n.theta = np.concatenate([n.theta[:width], [out[j]], n.theta[width:]])
    for block in net.blocks_at(layer):
        for n in block.neurons:
            n.theta = np.concatenate([n.theta[:width], [0.0], n.theta[width:]])
            n.out_weight = np.concatenate([n.out_weight, [0.0]])


def materialize(aug, epsilons, deltas=None, tol=1e-12):
    """Turn selected gates into real neurons; returns a plain :class:`GrowableNetwork`.

    Split gates with a nonzero value become two half-weight neurons at
    ``theta +- eps * delta`` replacing the host. Unlock gates replace the host
    by the single copy ``theta + eps * delta``. New-neuron gates append a
    neuron with input weights from ``delta`` and outgoing weights
    ``eps * delta_out``. Layer gates at one slot form one new residual block.
    """
    eps = np.asarray(epsilons, dtype=np.float64)
    deltas = aug.deltas if deltas is None else [np.asarray(d, dtype=np.float64) for d in deltas]
    if eps.shape != (len(aug.candidates),) or len(deltas) != len(aug.candidates):
        raise StructuralError("gate values do not match the candidate set")
    if np.any(np.abs(eps) > aug.step_size * (1 + tol)):
        raise ContractError("a gate value exceeds the step size")
    active = np.flatnonzero(eps != 0)
    layer_idx = [i for i in active if aug.candidates[i].kind == "layer"]
    width_idx = [i for i in active if aug.candidates[i].kind != "layer"]
    if aug.width_budget is not None and len(width_idx) > aug.width_budget:
        raise ContractError(f"{len(width_idx)} width gates exceed budget {aug.width_budget}")
    if aug.depth_budget is not None:
        n_budget, l_budget = aug.depth_budget
        slots = {aug.candidates[i].slot for i in layer_idx}
        if len(layer_idx) > n_budget or len(slots) > l_budget:
            raise ContractError("depth selection exceeds its neuron or layer budget")

    net = aug.base.copy()
    # residual blocks are created before width changes so later padding reaches them
    for slot in sorted({aug.candidates[i].slot for i in layer_idx}):
        w = net.layers[slot].width
        members = [i for i in layer_idx if aug.candidates[i].slot == slot]
        neurons = [Neuron(deltas[i][: w + 1], eps[i] * deltas[i][w + 1:]) for i in members]
        net.residual_blocks.append(ResidualBlock(slot, neurons))

    # last layer first: a new neuron's outgoing weights index the (already grown)
    # next layer through ``positions``
    positions = {}
    for li in reversed(range(len(net.layers))):
        base_width = aug.base.layers[li].width
        in_layer = [i for i in width_idx if aug.candidates[i].layer == li]
        hosts = {aug.candidates[i].host: i for i in in_layer
                 if aug.candidates[i].kind in ("split", "unlock")}
        layer = net.layers[li]
        for h in sorted(hosts, reverse=True):
            i = hosts[h]
            host = layer.neurons[h]
            shift = eps[i] * deltas[i]
            if aug.candidates[i].kind == "unlock":
                layer.neurons[h] = Neuron(host.theta + shift, host.out_weight.copy())
                continue
            half = host.out_weight * 0.5
            layer.neurons[h: h + 1] = [Neuron(host.theta + shift, half.copy()),
                                       Neuron(host.theta - shift, half.copy())]
            _split_columns(net, li, h, (0.5, 0.5))
            _block_split(net, li, h, 2)
        pos, offset = [], 0
        for j in range(base_width):
            if j in hosts and aug.candidates[hosts[j]].kind == "split":
                pos.append([j + offset, j + offset + 1])
                offset += 1
            else:
                pos.append([j + offset])
        positions[li] = pos
        fan_in = aug.base.layers[li].neurons[0].theta.size
        for i in in_layer:
            if aug.candidates[i].kind != "new":
                continue
            out = eps[i] * deltas[i][fan_in:]
            if li < len(net.layers) - 1:
                expanded = np.zeros(net.layers[li + 1].width)
                for j, targets in enumerate(positions[li + 1]):
                    expanded[targets] = out[j]
                out = expanded
            _append_neuron(net, li, deltas[i][:fan_in], out)
    net.validate()
    return net


def count_params(net):
    return net.count_params()


def count_neurons(net, layer=None):
    return net.count_neurons(layer)


def forward(net, X):
    return net.forward(X)
