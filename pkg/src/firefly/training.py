"""Parametric training with plain fixed-step gradient descent.

Networks made of a single RBF hidden layer with a regression head go through
a fused numpy loss/gradient kernel (the toy experiment spends almost all of
its time here). Everything else is differentiated on the tape. Both routes
compute the same mean squared error and are cross-checked in the tests.
"""
import math

import numpy as np

from . import autodiff as ad
from .exceptions import NumericError


def is_plain_rbf(net):
    return (len(net.layers) == 1 and net.layers[0].activation == "rbf"
            and net.head == "regression" and not net.residual_blocks)


class RbfKernel:
    """Fused MSE loss and gradient of ``f(x) = sum_i w_i exp(-(theta_i . [x, 1])^2 / 2)``.

    Buffers are allocated once per (width, batch) so the inner loop does no
    Python-level allocation beyond a few small vectors.
    """

    def __init__(self, X, y, width):
        self.X = np.asarray(X, dtype=np.float64)
        self.Xt = np.ascontiguousarray(self.X.T)
        self.y = np.asarray(y, dtype=np.float64).reshape(len(self.X), -1)
        n = self.X.shape[0]
        self.Z = np.empty((width, n))
        self.S = np.empty((width, n))

    def loss_and_grad(self, theta, out):
        """``theta`` (k, d+1), ``out`` (k, o) -> (loss, dtheta, dout)."""
        X, Z, S = self.X, self.Z, self.S
        if theta.shape[1] == 2:
            np.multiply(theta[:, :1], self.Xt, out=Z)
        else:
            np.dot(theta[:, :-1], self.Xt, out=Z)
        Z += theta[:, -1:]
        np.square(Z, out=S)
        S *= -0.5
        np.exp(S, out=S)
        r = out.T @ S
        r -= self.y.T
        loss = float(np.vdot(r, r)) / r.size
        c = 2.0 / r.size
        dout = (S @ r.T) * c
        # dL/dz_ik = c * sum_o r_o,k * w_io * s_ik * (-z_ik)
        np.multiply(S, Z, out=Z)
        rw = out @ r
        Z *= rw
        Z *= -c
        dtheta = np.concatenate([Z @ X, Z.sum(axis=1, keepdims=True)], axis=1)
        return loss, dtheta, dout

    def loss(self, theta, out):
        Z = theta[:, :-1] @ self.Xt + theta[:, -1:]
        r = out.T @ np.exp(-0.5 * Z * Z) - self.y.T
        return float(np.vdot(r, r)) / r.size


def _fit_rbf(net, X, y, iters, lr):
    layer = net.layers[0]
    theta = layer.theta_matrix()
    out = layer.out_matrix()
    kernel = RbfKernel(X, y, len(theta))
    for it in range(iters):
        loss, dtheta, dout = kernel.loss_and_grad(theta, out)
        # a non-finite gradient poisons the parameters, which the next loss exposes
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {it}")
        theta -= lr * dtheta
        out -= lr * dout
    loss = kernel.loss(theta, out)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss after {iters} iterations")
    for n, t, w in zip(layer.neurons, theta, out):
        n.theta = t.copy()
        n.out_weight = w.copy()
    return loss


def fit_parameters(net, X, y, iters, learning_rate, frozen=(), use_kernel=True):
    """Run ``iters`` gradient steps on ``net`` in place; returns the final loss.

    ``frozen`` holds parameter group names (see
    :meth:`GrowableNetwork.named_parameters`) that must not move.
    """
    if not learning_rate > 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    if use_kernel and not frozen and is_plain_rbf(net):
        return _fit_rbf(net, net._check_input(X), y, iters, learning_rate)
    store = net.parameter_store(frozen=set(frozen))
    program = net.loss_program(X, y)
    for it in range(iters):
        try:
            tape, _ = ad.record_forward(program, store, None)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}") from None
        ad.sgd_step(store, ad.backward(tape, store), learning_rate)
    net.load_store(store)
    loss = float(net.loss(X, y))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss after {iters} iterations")
    return loss
